// catsr — channel-adversarial speaker recognition, end to end on one core:
// synthetic two-channel corpora, filter-bank extraction, CNN / CAT training,
// EER and TopN evaluation, and the beta sweep.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "catsr/config.hpp"
#include "catsr/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace catsr;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (key=value sections)");
  cmd->add_option("--set", opts.overrides, "Override, e.g. --set train.epochs=4")
      ->take_all()
      ->expected(-1);
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) apply_config_file(cfg, opts.config_path);
  for (const std::string& o : opts.overrides) apply_override(cfg, o);
  if (const char* env = std::getenv("CAT_SEED")) {
    const uint64_t seed = std::stoull(env);
    cfg.corpus.seed = seed;
    cfg.train.seed = seed;
  }
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

int cmd_synth(const CommonOpts& opts, const std::string& out_dir) {
  RunConfig cfg = resolve_config(opts);
  Corpus corpus = synth_corpus(cfg.corpus);
  fs::create_directories(out_dir);
  save_corpus(corpus, out_dir);
  write_text(out_dir + "/synth_config.txt", dump_config(cfg));
  std::cout << "synth: " << corpus.train.size() << " train / " << corpus.dev.size() << " dev / "
            << corpus.test.size() << " test utterances, F=" << corpus.feat_dim << ", seed "
            << cfg.corpus.seed << "\n";
  return 0;
}

int cmd_fbank(const CommonOpts& opts, const std::string& in_path, const std::string& out_dir,
              int threads) {
  RunConfig cfg = resolve_config(opts);
  std::vector<fs::path> inputs;
  if (fs::is_directory(in_path)) {
    for (const auto& entry : fs::directory_iterator(in_path)) {
      if (entry.path().extension() == ".wav") inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(in_path);
  }
  if (inputs.empty()) {
    std::cerr << "fbank: warning: no .wav inputs under " << in_path << "\n";
    return 0;
  }
  fs::create_directories(out_dir);

  std::vector<std::string> errors(inputs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next.fetch_add(1); i < inputs.size(); i = next.fetch_add(1)) {
      try {
        std::ifstream in(inputs[i], std::ios::binary);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        WavData wav = parse_wav(bytes);
        Tensor feats = fbank(wav.samples, wav.sample_rate, cfg.fbank);
        const std::string out_path =
            (fs::path(out_dir) / inputs[i].filename().replace_extension(".catf")).string();
        write_feature_file(out_path, feats);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_threads = std::max(cfg.threads, threads);
  if (n_threads > 1) {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  } else {
    worker();
  }

  int failed = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      std::cerr << "fbank: " << inputs[i].string() << ": " << errors[i] << "\n";
    }
  }
  std::cout << "fbank: " << (inputs.size() - static_cast<size_t>(failed)) << " converted, "
            << failed << " failed\n";
  return failed == 0 ? 0 : 1;
}

json summary_json(const TrainResult& result, const TrainConfig& tc) {
  json evals = json::array();
  for (const EvalEvent& e : result.log.evals) {
    evals.push_back({{"epoch", e.epoch},
                     {"dev_eer", e.dev_eer},
                     {"lr_after", e.lr_after},
                     {"lr_decayed", e.lr_decayed}});
  }
  return json{{"architecture", tc.architecture},
              {"seed", tc.seed},
              {"alpha", tc.alpha},
              {"beta", tc.beta},
              {"margin", tc.margin},
              {"steps", result.log.steps.size()},
              {"best_dev_eer", result.best_dev_eer},
              {"best_epoch", result.best_epoch},
              {"diverged", result.diverged},
              {"divergence_message", result.divergence_message},
              {"evals", evals}};
}

int cmd_train(const CommonOpts& opts, const std::string& arch, const std::string& corpus_dir,
              const std::string& out_dir, bool epoch_checkpoints) {
  RunConfig cfg = resolve_config(opts);
  if (!arch.empty()) cfg.train.architecture = arch;
  Corpus corpus = load_corpus(corpus_dir);
  fs::create_directories(out_dir);

  EpochHook hook;
  if (epoch_checkpoints) {
    fs::create_directories(out_dir + "/epochs");
    hook = [&](int epoch, SpeakerModel& model) {
      char name[64];
      std::snprintf(name, sizeof(name), "/epochs/epoch_%03d.catc", epoch);
      save_checkpoint(model, cfg.train, out_dir + name);
    };
  }

  TrainResult result = train_loop(cfg.train, cfg.model, corpus, hook);
  save_checkpoint(result.model, cfg.train, out_dir + "/checkpoint.catc");
  write_text(out_dir + "/trainlog.csv", result.log.to_csv());
  write_text(out_dir + "/summary.json", summary_json(result, cfg.train).dump(2) + "\n");

  if (result.diverged) {
    std::cerr << "train: " << result.divergence_message << "\n";
    return 1;
  }
  std::cout << "train: " << result.log.steps.size() << " steps";
  if (result.best_dev_eer >= 0.0) {
    std::cout << ", best dev EER " << format_double(result.best_dev_eer) << " at epoch "
              << result.best_epoch;
  }
  std::cout << ", checkpoint " << out_dir << "/checkpoint.catc\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             const std::string& corpus_dir, const std::string& out_dir,
             const std::string& partition, const std::string& metrics, int threads) {
  RunConfig cfg = resolve_config(opts);
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  Corpus corpus = load_corpus(corpus_dir);
  if (loaded.model.config.feat_dim != corpus.feat_dim) {
    throw std::runtime_error("eval: checkpoint expects feature dim " +
                             std::to_string(loaded.model.config.feat_dim) + ", corpus has " +
                             std::to_string(corpus.feat_dim));
  }
  if (partition != "dev" && partition != "test") {
    throw std::runtime_error("eval: partition must be dev or test");
  }
  const std::vector<UtteranceFeatures>& part = partition == "dev" ? corpus.dev : corpus.test;
  const int n_threads = std::max(threads, cfg.threads);
  TrialList trials = build_trials(part, loaded.model, loaded.train_config.eval_window, n_threads);

  const bool want_eer = metrics.find("eer") != std::string::npos;
  const bool want_topn = metrics.find("topn") != std::string::npos;
  std::ostringstream csv;
  csv << "metric,value\n";
  if (want_eer) {
    const double eer = eer_from_trials(trials);
    csv << "eer," << format_double(eer) << '\n';
    std::cout << "eer " << format_double(eer) << "\n";
  }
  if (want_topn) {
    for (int n : cfg.eval_topn) {
      const double r = topn_recall(trials.scores, trials.true_index, n);
      csv << "top" << n << ',' << format_double(r) << '\n';
      std::cout << "top" << n << " " << format_double(r) << "\n";
    }
  }
  fs::create_directories(out_dir);
  write_text(out_dir + "/metrics.csv", csv.str());
  write_text(out_dir + "/scores.csv", trials_to_csv(trials));
  return 0;
}

int cmd_sweep_beta(const CommonOpts& opts, const std::string& corpus_dir,
                   const std::string& out_dir, std::vector<double> betas,
                   std::vector<uint64_t> seeds) {
  RunConfig cfg = resolve_config(opts);
  if (betas.empty()) betas = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0};
  if (seeds.empty()) seeds = {cfg.train.seed};
  Corpus corpus = load_corpus(corpus_dir);
  SweepResult sweep = beta_sweep(cfg.train, cfg.model, corpus, betas, seeds);
  fs::create_directories(out_dir);
  write_text(out_dir + "/sweep_cells.csv", sweep_cells_to_csv(sweep));
  write_text(out_dir + "/sweep_medians.csv", sweep_medians_to_csv(sweep));
  int failed = 0;
  for (const SweepCell& c : sweep.cells) {
    if (!c.ok) {
      ++failed;
      std::cerr << "sweep-beta: beta=" << c.beta << " seed=" << c.seed << ": " << c.error << "\n";
    }
  }
  for (const SweepMedian& m : sweep.medians) {
    std::cout << "beta " << format_double(m.beta) << ": dev_eer " << format_double(m.dev_eer)
              << ", test_top1 " << format_double(m.test_top1) << "\n";
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"channel-adversarial training for cross-channel speaker recognition"};
  app.require_subcommand(1);

  CommonOpts synth_opts, fbank_opts, train_opts, eval_opts, sweep_opts;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic two-channel corpus");
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output corpus directory")->required();
  add_common(synth, synth_opts);

  auto* fbankc = app.add_subcommand("fbank", "Extract log filter-bank features from WAV files");
  std::string fbank_in, fbank_out;
  int fbank_threads = 1;
  fbankc->add_option("--in", fbank_in, "WAV file or directory")->required();
  fbankc->add_option("--out", fbank_out, "Output directory for .catf files")->required();
  fbankc->add_option("--threads", fbank_threads, "Parallel extraction workers");
  add_common(fbankc, fbank_opts);

  auto* train = app.add_subcommand("train", "Train an architecture on a corpus directory");
  std::string train_arch, train_corpus, train_out;
  bool train_epoch_ckpt = false;
  train->add_option("--arch", train_arch, "cnn | cat | cat_no_d2");
  train->add_option("--corpus", train_corpus, "Corpus directory from `synth`")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_flag("--save-epoch-checkpoints", train_epoch_ckpt,
                  "Write a checkpoint after every epoch under <out>/epochs/");
  add_common(train, train_opts);

  auto* evalc = app.add_subcommand("eval", "Score a checkpoint on cross-channel trials");
  std::string eval_ckpt, eval_corpus, eval_out, eval_partition = "test", eval_metrics = "eer,topn";
  int eval_threads = 1;
  evalc->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  evalc->add_option("--corpus", eval_corpus, "Corpus directory")->required();
  evalc->add_option("--out", eval_out, "Output directory")->required();
  evalc->add_option("--partition", eval_partition, "dev | test (default test)");
  evalc->add_option("--metrics", eval_metrics, "Comma list from {eer, topn}");
  evalc->add_option("--threads", eval_threads, "Parallel scoring workers");
  add_common(evalc, eval_opts);

  auto* sweep = app.add_subcommand("sweep-beta", "Train CAT across a beta grid and tabulate");
  std::string sweep_corpus, sweep_out;
  std::vector<double> sweep_betas;
  std::vector<uint64_t> sweep_seeds;
  sweep->add_option("--corpus", sweep_corpus, "Corpus directory")->required();
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_option("--betas", sweep_betas, "Beta grid (default 0,0.25,0.5,1,2,4)")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Seeds (default: train.seed)")->delimiter(',');
  add_common(sweep, sweep_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_out);
    if (fbankc->parsed()) return cmd_fbank(fbank_opts, fbank_in, fbank_out, fbank_threads);
    if (train->parsed()) {
      return cmd_train(train_opts, train_arch, train_corpus, train_out, train_epoch_ckpt);
    }
    if (evalc->parsed()) {
      return cmd_eval(eval_opts, eval_ckpt, eval_corpus, eval_out, eval_partition, eval_metrics,
                      eval_threads);
    }
    if (sweep->parsed()) {
      return cmd_sweep_beta(sweep_opts, sweep_corpus, sweep_out, sweep_betas, sweep_seeds);
    }
  } catch (const std::exception& e) {
    std::cerr << "catsr: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
