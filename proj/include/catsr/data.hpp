#ifndef CATSR_DATA_HPP_
#define CATSR_DATA_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "catsr/rng.hpp"
#include "catsr/tensor.hpp"

namespace catsr {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- WAV ---------------------------------------------------------------------

struct WavData {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 0;
};

// RIFF/WAVE, PCM 16-bit mono, little-endian. Samples are scaled by 1/32768.
WavData parse_wav(std::span<const uint8_t> bytes);

// ---- log mel filter-bank features ------------------------------------------------

struct FbankConfig {
  double frame_len_ms = 25.0;
  double frame_shift_ms = 10.0;
  int mel_bins = 64;
  double preemphasis = 0.97;
  double energy_floor = 1e-10;
};

// Per frame: pre-emphasis, Hamming window, magnitude-squared DFT (next-pow2
// size), triangular mel filterbank spanning 0..Nyquist, natural log with floor.
// Returns [T, mel_bins].
Tensor fbank(std::span<const double> samples, int sample_rate, const FbankConfig& config);

int fbank_frame_count(int64_t num_samples, int sample_rate, const FbankConfig& config);
// Center frequency in Hz of each mel filter.
std::vector<double> mel_center_frequencies(int mel_bins, int sample_rate, const FbankConfig& config);

// ---- corpus -------------------------------------------------------------------

struct UtteranceFeatures {
  std::string utterance_id;
  int speaker_id = 0;
  int channel_id = 0;  // 0 = channel A, 1 = channel B
  Tensor features;     // [T, F]
};

struct SynthCorpusConfig {
  int train_speakers = 250;
  int dev_speakers = 25;
  int test_speakers = 25;
  int utts_per_speaker_per_channel = 6;
  int frames = 50;
  int feat_dim = 16;
  double template_scale = 0.8;
  double wander = 0.25;
  double noise_sigma = 0.08;
  // Channel A is the identity; channel B applies a per-bin diagonal affine
  // transform in log-energy space: gains drawn from [gain_min, gain_max]
  // (inverted for a coin-flip half of the bins when gain_invert is set) and
  // offsets of magnitude [offset_min, offset_max] with random sign.
  double channel_gain_min = 2.0;
  double channel_gain_max = 2.5;
  bool channel_gain_invert = true;
  double channel_offset_min = 1.0;
  double channel_offset_max = 1.5;
  // Each training speaker records on a single channel (speaker id parity);
  // cross-channel pairs for one speaker exist only in the eval partitions.
  bool train_channels_disjoint = true;
  uint64_t channel_seed = 7;
  uint64_t seed = 12345;
};

struct Corpus {
  std::vector<UtteranceFeatures> train;
  std::vector<UtteranceFeatures> dev;   // enrolment on channel A, trials on channel B
  std::vector<UtteranceFeatures> test;
  int feat_dim = 0;
  int num_train_speakers = 0;  // train speaker ids are dense in [0, n)
};

// Deterministic synthetic two-channel corpus; train and dev/test speaker sets
// are disjoint.
Corpus synth_corpus(const SynthCorpusConfig& config);

// Generator internals, exposed so tests can recompute expected frames.
struct ChannelTransform {
  Eigen::ArrayXd gain;
  Eigen::ArrayXd offset;
};
ChannelTransform synth_channel_transform(const SynthCorpusConfig& config, int channel);
Eigen::ArrayXd synth_speaker_template(const SynthCorpusConfig& config, int speaker_id);

// ---- batches -------------------------------------------------------------------

struct Batch {
  Tensor features;  // [M, 1, T, F]
  std::vector<int> speaker_labels;
  std::vector<int> channel_labels;
};

// P-speakers x K-utterances batches for one epoch. Speakers and their
// utterance lists are shuffled; utterances that do not fill a complete batch
// are dropped for the epoch.
std::vector<Batch> make_batches(std::span<const UtteranceFeatures> train, int speakers_per_batch,
                                int utts_per_speaker, Rng& rng);

// ---- on-disk formats --------------------------------------------------------------

// Binary feature file: magic "CATF", then little-endian u32 version, T, F,
// then T*F little-endian doubles, row-major.
void write_feature_file(const std::string& path, const Tensor& features);
Tensor read_feature_file(const std::string& path);

// Manifests are one-record-per-line TSV: utterance_id, speaker_id, channel_id,
// feature path (relative to the manifest's directory).
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

std::vector<UtteranceFeatures> load_manifest(const std::string& manifest_path);

}  // namespace catsr

#endif  // CATSR_DATA_HPP_
