#include "catsr/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace catsr {

namespace {

struct Field {
  std::string key;  // "section.name"
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

int to_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer '" + v + "' for " + key);
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number '" + v + "' for " + key);
  }
}

uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad seed '" + v + "' for " + key);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(to_int(item, key));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

std::string from_int_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

#define INT_FIELD(key, ref)                                                   \
  Field {                                                                     \
    key, [](const RunConfig& c) { return std::to_string(c.ref); },            \
        [](RunConfig& c, const std::string& v) { c.ref = to_int(v, key); }    \
  }
#define DBL_FIELD(key, ref)                                                   \
  Field {                                                                     \
    key, [](const RunConfig& c) { return format_double(c.ref); },             \
        [](RunConfig& c, const std::string& v) { c.ref = to_double(v, key); } \
  }
#define U64_FIELD(key, ref)                                                   \
  Field {                                                                     \
    key, [](const RunConfig& c) { return std::to_string(c.ref); },            \
        [](RunConfig& c, const std::string& v) { c.ref = to_u64(v, key); }    \
  }
#define BOOL_FIELD(key, ref)                                                  \
  Field {                                                                     \
    key, [](const RunConfig& c) { return c.ref ? "true" : "false"; },         \
        [](RunConfig& c, const std::string& v) { c.ref = to_bool(v, key); }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("corpus.train_speakers", corpus.train_speakers),
      INT_FIELD("corpus.dev_speakers", corpus.dev_speakers),
      INT_FIELD("corpus.test_speakers", corpus.test_speakers),
      INT_FIELD("corpus.utts_per_speaker_per_channel", corpus.utts_per_speaker_per_channel),
      INT_FIELD("corpus.frames", corpus.frames),
      INT_FIELD("corpus.feat_dim", corpus.feat_dim),
      DBL_FIELD("corpus.template_scale", corpus.template_scale),
      DBL_FIELD("corpus.wander", corpus.wander),
      DBL_FIELD("corpus.noise_sigma", corpus.noise_sigma),
      DBL_FIELD("corpus.channel_gain_min", corpus.channel_gain_min),
      DBL_FIELD("corpus.channel_gain_max", corpus.channel_gain_max),
      BOOL_FIELD("corpus.channel_gain_invert", corpus.channel_gain_invert),
      DBL_FIELD("corpus.channel_offset_min", corpus.channel_offset_min),
      DBL_FIELD("corpus.channel_offset_max", corpus.channel_offset_max),
      BOOL_FIELD("corpus.train_channels_disjoint", corpus.train_channels_disjoint),
      U64_FIELD("corpus.channel_seed", corpus.channel_seed),
      U64_FIELD("corpus.seed", corpus.seed),
      DBL_FIELD("fbank.frame_len_ms", fbank.frame_len_ms),
      DBL_FIELD("fbank.frame_shift_ms", fbank.frame_shift_ms),
      INT_FIELD("fbank.mel_bins", fbank.mel_bins),
      DBL_FIELD("fbank.preemphasis", fbank.preemphasis),
      DBL_FIELD("fbank.energy_floor", fbank.energy_floor),
      Field{"model.conv_widths",
            [](const RunConfig& c) { return from_int_list(c.model.conv_widths); },
            [](RunConfig& c, const std::string& v) {
              c.model.conv_widths = to_int_list(v, "model.conv_widths");
            }},
      INT_FIELD("model.embed_dim", model.embed_dim),
      INT_FIELD("model.pool_stages", model.pool_stages),
      INT_FIELD("model.lstm_hidden", model.lstm_hidden),
      INT_FIELD("model.d2_hidden", model.d2_hidden),
      DBL_FIELD("model.dropout_rate", model.dropout_rate),
      Field{"train.architecture", [](const RunConfig& c) { return c.train.architecture; },
            [](RunConfig& c, const std::string& v) {
              if (v != "cnn" && v != "cat" && v != "cat_no_d2") {
                throw ConfigError("config: unknown architecture '" + v + "'");
              }
              c.train.architecture = v;
            }},
      DBL_FIELD("train.learning_rate", train.learning_rate),
      DBL_FIELD("train.lr_decay", train.lr_decay),
      INT_FIELD("train.patience", train.patience),
      DBL_FIELD("train.lr_floor", train.lr_floor),
      INT_FIELD("train.epochs", train.epochs),
      INT_FIELD("train.batch_speakers", train.batch_speakers),
      INT_FIELD("train.batch_utts", train.batch_utts),
      DBL_FIELD("train.alpha", train.alpha),
      DBL_FIELD("train.beta", train.beta),
      DBL_FIELD("train.margin", train.margin),
      U64_FIELD("train.seed", train.seed),
      INT_FIELD("train.eval_interval", train.eval_interval),
      Field{"train.reduction",
            [](const RunConfig& c) { return reduction_name(c.train.reduction); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.train.reduction = reduction_from_name(v);
              } catch (const std::exception& e) {
                throw ConfigError(e.what());
              }
            }},
      INT_FIELD("train.eval_window", train.eval_window),
      Field{"eval.topn", [](const RunConfig& c) { return from_int_list(c.eval_topn); },
            [](RunConfig& c, const std::string& v) { c.eval_topn = to_int_list(v, "eval.topn"); }},
      INT_FIELD("eval.threads", threads),
  };
  return table;
}

#undef INT_FIELD
#undef DBL_FIELD
#undef U64_FIELD
#undef BOOL_FIELD

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config: malformed section header at line " + std::to_string(line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key=value at line " + std::to_string(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    set_key(config, section.empty() ? key : section + "." + key, value);
  }
  return config;
}

RunConfig parse_config_file(const std::string& path) {
  RunConfig config;
  apply_config_file(config, path);
  return config;
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig parsed = parse_config_text(buf.str());
  config = parsed;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override must be key=value, got '" + assignment + "'");
  }
  set_key(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string dump_config(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const Field& f : fields()) {
    const size_t dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
  return os.str();
}

}  // namespace catsr
