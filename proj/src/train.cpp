#include "catsr/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "catsr/eval.hpp"

namespace catsr {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string reduction_name(Reduction r) { return r == Reduction::Sum ? "sum" : "mean"; }

Reduction reduction_from_name(const std::string& name) {
  if (name == "sum") return Reduction::Sum;
  if (name == "mean") return Reduction::Mean;
  throw std::invalid_argument("config: unknown reduction '" + name + "'");
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "step,L_s,L_T,L_ch,total,lr\n";
  for (const TrainLogEntry& e : steps) {
    os << e.step << ',' << format_double(e.l_s) << ',' << format_double(e.l_t) << ','
       << format_double(e.l_ch) << ',' << format_double(e.total) << ',' << format_double(e.lr)
       << '\n';
  }
  return os.str();
}

void sgd_step(std::span<Param* const> params, Tape& tape, double lr) {
  for (Param* p : params) {
    if (!p->bound.on_tape()) {
      throw TapeError("sgd_step: parameter " + p->name + " is not bound to the tape");
    }
    const Tensor g = tape.grad(p->bound);
    if (!g.values().isFinite().all()) {
      throw TrainDivergence("sgd_step: non-finite gradient for parameter " + p->name);
    }
    p->value.values_mut() -= lr * g.values();
  }
}

double lr_schedule_update(std::span<const double> dev_eer_history, const TrainConfig& config) {
  double lr = config.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  for (double eer : dev_eer_history) {
    if (eer < best) {
      best = eer;
      bad = 0;
    } else {
      ++bad;
      if (bad >= config.patience) {
        lr = std::max(lr * config.lr_decay, config.lr_floor);
        bad = 0;
      }
    }
  }
  return lr;
}

namespace {

void validate_train_config(const TrainConfig& c) {
  if (c.learning_rate <= 0.0 || c.lr_decay <= 0.0 || c.lr_floor <= 0.0) {
    throw std::invalid_argument("train: rates must be positive");
  }
  if (c.patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  if (c.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (c.batch_speakers < 2 || c.batch_utts < 2) {
    throw std::invalid_argument("train: batch geometry needs P >= 2 and K >= 2");
  }
  if (c.alpha < 0.0 || c.beta < 0.0 || c.margin < 0.0) {
    throw std::invalid_argument("train: alpha, beta and margin must be >= 0");
  }
  if (c.eval_interval < 1) throw std::invalid_argument("train: eval_interval must be >= 1");
  if (c.architecture != "cnn" && c.architecture != "cat" && c.architecture != "cat_no_d2") {
    throw std::invalid_argument("train: unknown architecture '" + c.architecture + "'");
  }
}

}  // namespace

TrainResult train_loop(const TrainConfig& config, const ModelConfig& model_config,
                       const Corpus& corpus, const EpochHook& epoch_hook) {
  validate_train_config(config);
  if (corpus.train.empty()) throw std::invalid_argument("train: empty training partition");

  ModelConfig mc = model_config;
  mc.architecture = config.architecture;
  mc.num_speakers = corpus.num_train_speakers;
  mc.feat_dim = corpus.feat_dim;

  TrainResult result;
  result.model = init_model(mc, config.seed);
  SpeakerModel& model = result.model;
  SpeakerModel best = model;  // snapshot; copy-on-write keeps it cheap

  Rng rng_batches(derive_seed(config.seed, "batches"));
  Rng rng_dropout(derive_seed(config.seed, "dropout"));

  double lr = config.learning_rate;
  std::vector<double> eer_history;
  const bool adversarial = config.architecture == "cat";
  Tape tape;
  int step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<Batch> batches =
        make_batches(corpus.train, config.batch_speakers, config.batch_utts, rng_batches);
    for (Batch& batch : batches) {
      tape.reset();
      model.bind(tape);
      ForwardResult fwd = model_forward(model, batch.features, config.beta, Mode::Train, rng_dropout);
      Tensor l_s = softmax_loss(fwd.speaker_logits, batch.speaker_labels, config.reduction);
      TripletBatch triplets = select_triplets(fwd.embeddings, batch.speaker_labels, config.margin);
      TripletLossResult l_t = triplet_loss(fwd.embeddings, triplets, config.reduction);
      Tensor total = combined_loss(l_s, l_t.loss, config.alpha);
      double l_ch_value = 0.0;
      if (adversarial) {
        std::vector<ChannelLabel> ch;
        ch.reserve(batch.channel_labels.size());
        for (int c : batch.channel_labels) ch.push_back(ChannelLabel::from_id(c));
        Tensor l_ch = channel_adversarial_loss(fwd.channel_logits, ch, config.reduction);
        l_ch_value = l_ch.value();
        total = add(total, l_ch);
      }
      ++step;
      TrainLogEntry entry{step, l_s.value(), l_t.loss.value(), l_ch_value, total.value(), lr};
      result.log.steps.push_back(entry);
      if (!std::isfinite(entry.total)) {
        model.unbind();
        result.diverged = true;
        result.divergence_message =
            "train: non-finite loss at step " + std::to_string(step) + "; last good checkpoint retained";
        result.model = best;
        return result;
      }
      tape.backward(total);
      try {
        sgd_step(model.params(), tape, lr);
      } catch (const TrainDivergence& e) {
        model.unbind();
        result.diverged = true;
        result.divergence_message = std::string(e.what()) + "; last good checkpoint retained";
        result.model = best;
        return result;
      }
      model.unbind();
    }
    tape.reset();

    if (epoch % config.eval_interval == 0 && !corpus.dev.empty()) {
      TrialList trials = build_trials(corpus.dev, model, config.eval_window);
      const double eer = eer_from_trials(trials);
      eer_history.push_back(eer);
      const double new_lr = lr_schedule_update(eer_history, config);
      EvalEvent ev{epoch, eer, new_lr, new_lr != lr};
      result.log.evals.push_back(ev);
      lr = new_lr;
      if (result.best_dev_eer < 0.0 || eer < result.best_dev_eer) {
        result.best_dev_eer = eer;
        result.best_epoch = epoch;
        best = model;
      }
    }
    if (epoch_hook) epoch_hook(epoch, model);
  }
  if (result.best_dev_eer >= 0.0) result.model = best;
  return result;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

constexpr uint32_t kCheckpointVersion = 1;

std::string widths_to_string(const std::vector<int>& w) {
  std::ostringstream os;
  for (size_t i = 0; i < w.size(); ++i) {
    if (i) os << ',';
    os << w[i];
  }
  return os.str();
}

std::vector<int> widths_from_string(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::string config_block(const SpeakerModel& model, const TrainConfig& tc) {
  const ModelConfig& mc = model.config;
  std::ostringstream os;
  os << "architecture=" << mc.architecture << '\n'
     << "conv_widths=" << widths_to_string(mc.conv_widths) << '\n'
     << "embed_dim=" << mc.embed_dim << '\n'
     << "pool_stages=" << mc.pool_stages << '\n'
     << "feat_dim=" << mc.feat_dim << '\n'
     << "num_speakers=" << mc.num_speakers << '\n'
     << "lstm_hidden=" << mc.lstm_hidden << '\n'
     << "d2_hidden=" << mc.d2_hidden << '\n'
     << "dropout_rate=" << format_double(mc.dropout_rate) << '\n'
     << "reduction=" << reduction_name(tc.reduction) << '\n'
     << "margin=" << format_double(tc.margin) << '\n'
     << "alpha=" << format_double(tc.alpha) << '\n'
     << "beta=" << format_double(tc.beta) << '\n'
     << "learning_rate=" << format_double(tc.learning_rate) << '\n'
     << "lr_decay=" << format_double(tc.lr_decay) << '\n'
     << "patience=" << tc.patience << '\n'
     << "lr_floor=" << format_double(tc.lr_floor) << '\n'
     << "epochs=" << tc.epochs << '\n'
     << "batch_speakers=" << tc.batch_speakers << '\n'
     << "batch_utts=" << tc.batch_utts << '\n'
     << "seed=" << tc.seed << '\n'
     << "eval_interval=" << tc.eval_interval << '\n'
     << "eval_window=" << tc.eval_window << '\n';
  return os.str();
}

void parse_config_block(const std::string& text, ModelConfig& mc, TrainConfig& tc) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("checkpoint: malformed config line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "architecture") {
      mc.architecture = value;
      tc.architecture = value;
    } else if (key == "conv_widths") {
      mc.conv_widths = widths_from_string(value);
    } else if (key == "embed_dim") {
      mc.embed_dim = std::stoi(value);
    } else if (key == "pool_stages") {
      mc.pool_stages = std::stoi(value);
    } else if (key == "feat_dim") {
      mc.feat_dim = std::stoi(value);
    } else if (key == "num_speakers") {
      mc.num_speakers = std::stoi(value);
    } else if (key == "lstm_hidden") {
      mc.lstm_hidden = std::stoi(value);
    } else if (key == "d2_hidden") {
      mc.d2_hidden = std::stoi(value);
    } else if (key == "dropout_rate") {
      mc.dropout_rate = std::stod(value);
    } else if (key == "reduction") {
      tc.reduction = reduction_from_name(value);
    } else if (key == "margin") {
      tc.margin = std::stod(value);
    } else if (key == "alpha") {
      tc.alpha = std::stod(value);
    } else if (key == "beta") {
      tc.beta = std::stod(value);
    } else if (key == "learning_rate") {
      tc.learning_rate = std::stod(value);
    } else if (key == "lr_decay") {
      tc.lr_decay = std::stod(value);
    } else if (key == "patience") {
      tc.patience = std::stoi(value);
    } else if (key == "lr_floor") {
      tc.lr_floor = std::stod(value);
    } else if (key == "epochs") {
      tc.epochs = std::stoi(value);
    } else if (key == "batch_speakers") {
      tc.batch_speakers = std::stoi(value);
    } else if (key == "batch_utts") {
      tc.batch_utts = std::stoi(value);
    } else if (key == "seed") {
      tc.seed = std::stoull(value);
    } else if (key == "eval_interval") {
      tc.eval_interval = std::stoi(value);
    } else if (key == "eval_window") {
      tc.eval_window = std::stoi(value);
    } else {
      throw FormatError("checkpoint: unknown config key '" + key + "'");
    }
  }
}

void write_u32(std::ofstream& out, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in, const std::string& what) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint: truncated " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::vector<Param*> checkpoint_tensors(SpeakerModel& model) {
  std::vector<Param*> all = model.params();
  for (Param* p : model.state_tensors()) all.push_back(p);
  return all;
}

}  // namespace

void save_checkpoint(const SpeakerModel& model, const TrainConfig& train_config,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open " + path + " for writing");
  out.write("CATC", 4);
  write_u32(out, kCheckpointVersion);
  const std::string cfg = config_block(model, train_config);
  write_u32(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  SpeakerModel& m = const_cast<SpeakerModel&>(model);  // name/value reads only
  std::vector<Param*> tensors = checkpoint_tensors(m);
  write_u32(out, static_cast<uint32_t>(tensors.size()));
  for (Param* p : tensors) {
    write_u32(out, static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u32(out, static_cast<uint32_t>(p->value.rank()));
    for (int d = 0; d < p->value.rank(); ++d) write_u32(out, static_cast<uint32_t>(p->value.dim(d)));
    out.write(reinterpret_cast<const char*>(p->value.values().data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw FormatError("checkpoint: short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CATC", 4) != 0) {
    throw FormatError("checkpoint: bad magic in " + path);
  }
  const uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  }
  const uint32_t cfg_len = read_u32(in, "config length");
  std::string cfg(cfg_len, '\0');
  if (!in.read(cfg.data(), cfg_len)) throw FormatError("checkpoint: truncated config block");

  LoadedCheckpoint loaded;
  ModelConfig mc;
  parse_config_block(cfg, mc, loaded.train_config);
  loaded.model = init_model(mc, loaded.train_config.seed);

  std::map<std::string, Param*> by_name;
  for (Param* p : checkpoint_tensors(loaded.model)) by_name[p->name] = p;

  const uint32_t count = read_u32(in, "tensor count");
  if (count != by_name.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(by_name.size()) + " tensors, found " +
                      std::to_string(count));
  }
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(in, "tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("checkpoint: truncated tensor name");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    const uint32_t rank = read_u32(in, "tensor rank");
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(read_u32(in, "tensor extent")));
    }
    if (shape != it->second->value.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                        ", model expects " + shape_str(it->second->value.shape()));
    }
    Eigen::ArrayXd data(shape_size(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw FormatError("checkpoint: truncated data for tensor '" + name + "'");
    }
    it->second->value = Tensor(shape, std::move(data));
  }
  return loaded;
}

}  // namespace catsr
