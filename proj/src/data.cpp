#include "catsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace catsr {

namespace fs = std::filesystem;

// ---- WAV ---------------------------------------------------------------------

namespace {

uint16_t read_u16(std::span<const uint8_t> b, size_t off) {
  return static_cast<uint16_t>(b[off] | (b[off + 1] << 8));
}
uint32_t read_u32(std::span<const uint8_t> b, size_t off) {
  return static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
         (static_cast<uint32_t>(b[off + 2]) << 16) | (static_cast<uint32_t>(b[off + 3]) << 24);
}
bool tag_is(std::span<const uint8_t> b, size_t off, const char* tag) {
  return std::memcmp(b.data() + off, tag, 4) == 0;
}

}  // namespace

WavData parse_wav(std::span<const uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF")) {
    throw FormatError("wav: missing RIFF magic");
  }
  if (!tag_is(bytes, 8, "WAVE")) throw FormatError("wav: not a WAVE container");

  bool have_fmt = false;
  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  size_t off = 12;
  WavData out;
  bool have_data = false;
  while (off + 8 <= bytes.size()) {
    const uint32_t chunk_size = read_u32(bytes, off + 4);
    if (tag_is(bytes, off, "fmt ")) {
      if (chunk_size < 16 || off + 8 + chunk_size > bytes.size()) {
        throw FormatError("wav: truncated fmt chunk");
      }
      audio_format = read_u16(bytes, off + 8);
      channels = read_u16(bytes, off + 10);
      sample_rate = read_u32(bytes, off + 12);
      bits = read_u16(bytes, off + 22);
      have_fmt = true;
    } else if (tag_is(bytes, off, "data")) {
      if (!have_fmt) throw FormatError("wav: data chunk precedes fmt chunk");
      if (audio_format != 1) {
        throw FormatError("wav: unsupported non-PCM format " + std::to_string(audio_format));
      }
      if (channels != 1) {
        throw FormatError("wav: expected mono, got " + std::to_string(channels) + " channels");
      }
      if (bits != 16) {
        throw FormatError("wav: expected 16-bit PCM, got " + std::to_string(bits) + " bits");
      }
      if (off + 8 + chunk_size > bytes.size()) throw FormatError("wav: truncated data chunk");
      const size_t n = chunk_size / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t s =
            static_cast<int16_t>(read_u16(bytes, off + 8 + 2 * i));
        out.samples[i] = static_cast<double>(s) / 32768.0;
      }
      out.sample_rate = static_cast<int>(sample_rate);
      have_data = true;
    }
    off += 8 + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  if (!have_fmt) throw FormatError("wav: missing fmt chunk");
  if (!have_data) throw FormatError("wav: missing data chunk");
  return out;
}

// ---- fbank -------------------------------------------------------------------

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 FFT, in place.
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct FrameGeometry {
  int frame_len;
  int frame_shift;
  int fft_size;
};

FrameGeometry frame_geometry(int sample_rate, const FbankConfig& cfg) {
  FrameGeometry g;
  g.frame_len = static_cast<int>(std::lround(cfg.frame_len_ms * 1e-3 * sample_rate));
  g.frame_shift = static_cast<int>(std::lround(cfg.frame_shift_ms * 1e-3 * sample_rate));
  g.fft_size = next_pow2(g.frame_len);
  return g;
}

}  // namespace

int fbank_frame_count(int64_t num_samples, int sample_rate, const FbankConfig& config) {
  const FrameGeometry g = frame_geometry(sample_rate, config);
  if (num_samples < g.frame_len) return 0;
  return 1 + static_cast<int>((num_samples - g.frame_len) / g.frame_shift);
}

std::vector<double> mel_center_frequencies(int mel_bins, int sample_rate,
                                           const FbankConfig& config) {
  (void)config;
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> centers(static_cast<size_t>(mel_bins));
  for (int j = 0; j < mel_bins; ++j) {
    centers[static_cast<size_t>(j)] = mel_to_hz(mel_max * (j + 1) / (mel_bins + 1));
  }
  return centers;
}

Tensor fbank(std::span<const double> samples, int sample_rate, const FbankConfig& config) {
  const FrameGeometry g = frame_geometry(sample_rate, config);
  const int T = fbank_frame_count(static_cast<int64_t>(samples.size()), sample_rate, config);
  if (T < 1) {
    throw FormatError("fbank: signal shorter than one frame (" + std::to_string(samples.size()) +
                      " samples, frame is " + std::to_string(g.frame_len) + ")");
  }
  const int F = config.mel_bins;
  const int bins = g.fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / g.fft_size;

  Eigen::ArrayXd window(g.frame_len);
  for (int n = 0; n < g.frame_len; ++n) {
    window(n) = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (g.frame_len - 1));
  }

  // Triangular weights in mel space over FFT bin frequencies.
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> mel_points(static_cast<size_t>(F + 2));
  for (int j = 0; j < F + 2; ++j) mel_points[static_cast<size_t>(j)] = mel_max * j / (F + 1);
  RowMat filters = RowMat::Zero(F, bins);
  for (int b = 0; b < bins; ++b) {
    const double m = hz_to_mel(b * bin_hz);
    for (int j = 0; j < F; ++j) {
      const double left = mel_points[static_cast<size_t>(j)];
      const double center = mel_points[static_cast<size_t>(j + 1)];
      const double right = mel_points[static_cast<size_t>(j + 2)];
      if (m > left && m < right) {
        filters(j, b) = m <= center ? (m - left) / (center - left) : (right - m) / (right - center);
      }
    }
  }

  Eigen::ArrayXd out(static_cast<int64_t>(T) * F);
  std::vector<std::complex<double>> buf(static_cast<size_t>(g.fft_size));
  for (int t = 0; t < T; ++t) {
    const double* x = samples.data() + static_cast<int64_t>(t) * g.frame_shift;
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int n = 0; n < g.frame_len; ++n) {
      const double prev = n > 0 ? x[n - 1] : x[0];
      buf[static_cast<size_t>(n)] = (x[n] - config.preemphasis * prev) * window(n);
    }
    fft(buf);
    for (int j = 0; j < F; ++j) {
      double energy = 0.0;
      for (int b = 0; b < bins; ++b) {
        energy += filters(j, b) * std::norm(buf[static_cast<size_t>(b)]);
      }
      out(static_cast<int64_t>(t) * F + j) = std::log(std::max(energy, config.energy_floor));
    }
  }
  return Tensor({T, F}, std::move(out));
}

// ---- synthetic corpus ------------------------------------------------------------

ChannelTransform synth_channel_transform(const SynthCorpusConfig& config, int channel) {
  ChannelTransform t;
  t.gain = Eigen::ArrayXd::Ones(config.feat_dim);
  t.offset = Eigen::ArrayXd::Zero(config.feat_dim);
  if (channel == 0) return t;  // channel A is the reference
  Rng rng(derive_seed(config.channel_seed, "channel", static_cast<uint64_t>(channel)));
  for (int f = 0; f < config.feat_dim; ++f) {
    const double magnitude = rng.uniform(config.channel_gain_min, config.channel_gain_max);
    const bool invert = config.channel_gain_invert && rng.uniform() < 0.5;
    t.gain(f) = invert ? 1.0 / magnitude : magnitude;
    const double off = rng.uniform(config.channel_offset_min, config.channel_offset_max);
    t.offset(f) = rng.uniform() < 0.5 ? -off : off;
  }
  return t;
}

Eigen::ArrayXd synth_speaker_template(const SynthCorpusConfig& config, int speaker_id) {
  Rng rng(derive_seed(config.seed, "speaker", static_cast<uint64_t>(speaker_id)));
  Eigen::ArrayXd t(config.feat_dim);
  for (int f = 0; f < config.feat_dim; ++f) t(f) = config.template_scale * rng.normal();
  return t;
}

namespace {

UtteranceFeatures synth_utterance(const SynthCorpusConfig& cfg, const Eigen::ArrayXd& tmpl,
                                  const ChannelTransform& tf, int speaker, int channel, int index) {
  const uint64_t key = (static_cast<uint64_t>(speaker) << 24) |
                       (static_cast<uint64_t>(channel) << 16) | static_cast<uint64_t>(index);
  Rng rng(derive_seed(cfg.seed, "utterance", key));
  const int F = cfg.feat_dim;
  Eigen::ArrayXd data(static_cast<int64_t>(cfg.frames) * F);
  for (int t = 0; t < cfg.frames; ++t) {
    for (int f = 0; f < F; ++f) {
      const double wander = cfg.wander * rng.normal();
      const double noise = cfg.noise_sigma * rng.normal();
      data(static_cast<int64_t>(t) * F + f) = tf.gain(f) * (tmpl(f) + wander) + tf.offset(f) + noise;
    }
  }
  UtteranceFeatures u;
  std::ostringstream id;
  id << "s" << speaker << "_c" << channel << "_u" << index;
  u.utterance_id = id.str();
  u.speaker_id = speaker;
  u.channel_id = channel;
  u.features = Tensor({cfg.frames, F}, std::move(data));
  return u;
}

}  // namespace

Corpus synth_corpus(const SynthCorpusConfig& config) {
  if (config.train_speakers < 2) {
    throw std::invalid_argument("synth_corpus: need at least 2 training speakers, got " +
                                std::to_string(config.train_speakers));
  }
  if (config.dev_speakers < 1 || config.test_speakers < 1) {
    throw std::invalid_argument("synth_corpus: dev and test partitions need at least 1 speaker");
  }
  if (config.noise_sigma < 0.0 || config.wander < 0.0) {
    throw std::invalid_argument("synth_corpus: noise and wander scales must be >= 0");
  }
  const ChannelTransform tf_a = synth_channel_transform(config, 0);
  const ChannelTransform tf_b = synth_channel_transform(config, 1);

  Corpus corpus;
  corpus.feat_dim = config.feat_dim;
  corpus.num_train_speakers = config.train_speakers;

  for (int s = 0; s < config.train_speakers; ++s) {
    const Eigen::ArrayXd tmpl = synth_speaker_template(config, s);
    if (config.train_channels_disjoint) {
      const int ch = s % 2;
      const ChannelTransform& tf = ch == 0 ? tf_a : tf_b;
      for (int u = 0; u < config.utts_per_speaker_per_channel; ++u) {
        corpus.train.push_back(synth_utterance(config, tmpl, tf, s, ch, u));
      }
    } else {
      for (int ch = 0; ch < 2; ++ch) {
        const ChannelTransform& tf = ch == 0 ? tf_a : tf_b;
        for (int u = 0; u < config.utts_per_speaker_per_channel; ++u) {
          corpus.train.push_back(synth_utterance(config, tmpl, tf, s, ch, u));
        }
      }
    }
  }

  // Eval speakers: enrolment utterances on channel A, trial utterances on B.
  auto fill_eval = [&](std::vector<UtteranceFeatures>& part, int first, int count) {
    for (int i = 0; i < count; ++i) {
      const int s = first + i;
      const Eigen::ArrayXd tmpl = synth_speaker_template(config, s);
      for (int u = 0; u < config.utts_per_speaker_per_channel; ++u) {
        part.push_back(synth_utterance(config, tmpl, tf_a, s, 0, u));
      }
      for (int u = 0; u < config.utts_per_speaker_per_channel; ++u) {
        part.push_back(synth_utterance(config, tmpl, tf_b, s, 1, u));
      }
    }
  };
  fill_eval(corpus.dev, config.train_speakers, config.dev_speakers);
  fill_eval(corpus.test, config.train_speakers + config.dev_speakers, config.test_speakers);
  return corpus;
}

// ---- batches -------------------------------------------------------------------

std::vector<Batch> make_batches(std::span<const UtteranceFeatures> train, int speakers_per_batch,
                                int utts_per_speaker, Rng& rng) {
  if (speakers_per_batch < 1 || utts_per_speaker < 1) {
    throw std::invalid_argument("make_batches: batch geometry must be positive");
  }
  std::map<int, std::vector<int>> by_speaker;  // ordered for determinism
  for (size_t i = 0; i < train.size(); ++i) {
    by_speaker[train[i].speaker_id].push_back(static_cast<int>(i));
  }
  if (static_cast<int>(by_speaker.size()) < speakers_per_batch) {
    throw std::invalid_argument("make_batches: need " + std::to_string(speakers_per_batch) +
                                " speakers per batch, corpus has " +
                                std::to_string(by_speaker.size()));
  }
  for (const auto& [spk, utts] : by_speaker) {
    if (static_cast<int>(utts.size()) < utts_per_speaker) {
      throw std::invalid_argument("make_batches: speaker " + std::to_string(spk) + " has " +
                                  std::to_string(utts.size()) + " utterances, need " +
                                  std::to_string(utts_per_speaker));
    }
  }

  std::vector<int> speakers;
  speakers.reserve(by_speaker.size());
  for (const auto& [spk, utts] : by_speaker) speakers.push_back(spk);
  rng.shuffle(speakers);

  std::map<int, std::vector<int>> shuffled = by_speaker;
  for (auto& [spk, utts] : shuffled) rng.shuffle(utts);

  const int T = train[0].features.dim(0);
  const int F = train[0].features.dim(1);
  for (const UtteranceFeatures& u : train) {
    if (u.features.dim(0) != T || u.features.dim(1) != F) {
      throw ShapeError("make_batches: non-uniform feature shape " + shape_str(u.features.shape()) +
                       " vs [" + std::to_string(T) + "," + std::to_string(F) + "]");
    }
  }

  std::vector<Batch> batches;
  const int groups = static_cast<int>(speakers.size()) / speakers_per_batch;
  const int M = speakers_per_batch * utts_per_speaker;
  for (int gi = 0; gi < groups; ++gi) {
    int chunks = 1 << 30;
    for (int p = 0; p < speakers_per_batch; ++p) {
      const int spk = speakers[static_cast<size_t>(gi * speakers_per_batch + p)];
      chunks = std::min(chunks,
                        static_cast<int>(shuffled[spk].size()) / utts_per_speaker);
    }
    for (int b = 0; b < chunks; ++b) {
      Batch batch;
      Eigen::ArrayXd feat(static_cast<int64_t>(M) * T * F);
      int row = 0;
      for (int p = 0; p < speakers_per_batch; ++p) {
        const int spk = speakers[static_cast<size_t>(gi * speakers_per_batch + p)];
        for (int k = 0; k < utts_per_speaker; ++k) {
          const UtteranceFeatures& u =
              train[static_cast<size_t>(shuffled[spk][static_cast<size_t>(b * utts_per_speaker + k)])];
          feat.segment(static_cast<int64_t>(row) * T * F, static_cast<int64_t>(T) * F) =
              u.features.values();
          batch.speaker_labels.push_back(u.speaker_id);
          batch.channel_labels.push_back(u.channel_id);
          ++row;
        }
      }
      batch.features = Tensor({M, 1, T, F}, std::move(feat));
      batches.push_back(std::move(batch));
    }
  }
  return batches;
}

// ---- on-disk formats --------------------------------------------------------------

namespace {

constexpr uint32_t kFeatureVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32_stream(std::ifstream& in, const std::string& what) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("feature file: truncated " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_file(const std::string& path, const Tensor& features) {
  if (features.rank() != 2) {
    throw ShapeError("feature file: expects [T,F], got " + shape_str(features.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("feature file: cannot open " + path + " for writing");
  out.write("CATF", 4);
  write_u32(out, kFeatureVersion);
  write_u32(out, static_cast<uint32_t>(features.dim(0)));
  write_u32(out, static_cast<uint32_t>(features.dim(1)));
  out.write(reinterpret_cast<const char*>(features.values().data()),
            static_cast<std::streamsize>(features.size() * sizeof(double)));
  if (!out) throw FormatError("feature file: short write to " + path);
}

Tensor read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("feature file: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CATF", 4) != 0) {
    throw FormatError("feature file: bad magic in " + path);
  }
  const uint32_t version = read_u32_stream(in, "version");
  if (version != kFeatureVersion) {
    throw FormatError("feature file: unsupported version " + std::to_string(version) + " in " +
                      path);
  }
  const uint32_t t = read_u32_stream(in, "frame count");
  const uint32_t f = read_u32_stream(in, "feature dim");
  Eigen::ArrayXd data(static_cast<int64_t>(t) * f);
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw FormatError("feature file: truncated data in " + path);
  }
  return Tensor({static_cast<int>(t), static_cast<int>(f)}, std::move(data));
}

namespace {

void save_partition(const std::vector<UtteranceFeatures>& part, const std::string& dir,
                    const std::string& name) {
  std::ofstream manifest(dir + "/" + name + ".tsv");
  if (!manifest) throw FormatError("manifest: cannot open " + dir + "/" + name + ".tsv");
  for (const UtteranceFeatures& u : part) {
    const std::string rel = "features/" + u.utterance_id + ".catf";
    write_feature_file(dir + "/" + rel, u.features);
    manifest << u.utterance_id << '\t' << u.speaker_id << '\t' << u.channel_id << '\t' << rel
             << '\n';
  }
}

std::vector<UtteranceFeatures> load_partition(const std::string& dir, const std::string& name) {
  return load_manifest(dir + "/" + name + ".tsv");
}

}  // namespace

std::vector<UtteranceFeatures> load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("manifest: cannot open " + manifest_path);
  const std::string dir = fs::path(manifest_path).parent_path().string();
  std::vector<UtteranceFeatures> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    UtteranceFeatures u;
    std::string rel;
    if (!(std::getline(is, u.utterance_id, '\t') && (is >> u.speaker_id) && is.get() == '\t' &&
          (is >> u.channel_id) && is.get() == '\t' && std::getline(is, rel))) {
      throw FormatError("manifest: malformed line " + std::to_string(line_no) + " in " +
                        manifest_path);
    }
    u.features = read_feature_file(dir.empty() ? rel : dir + "/" + rel);
    out.push_back(std::move(u));
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir + "/features");
  save_partition(corpus.train, dir, "train");
  save_partition(corpus.dev, dir, "dev");
  save_partition(corpus.test, dir, "test");
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  corpus.train = load_partition(dir, "train");
  corpus.dev = load_partition(dir, "dev");
  corpus.test = load_partition(dir, "test");
  if (corpus.train.empty()) throw FormatError("corpus: empty train partition in " + dir);
  corpus.feat_dim = corpus.train[0].features.dim(1);
  int max_spk = -1;
  for (const UtteranceFeatures& u : corpus.train) max_spk = std::max(max_spk, u.speaker_id);
  corpus.num_train_speakers = max_spk + 1;
  return corpus;
}

}  // namespace catsr
