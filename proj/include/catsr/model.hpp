#ifndef CATSR_MODEL_HPP_
#define CATSR_MODEL_HPP_

#include <string>
#include <vector>

#include "catsr/data.hpp"
#include "catsr/layers.hpp"

namespace catsr {

struct ModelConfig {
  std::string architecture = "cnn";  // cnn | cat | cat_no_d2
  std::vector<int> conv_widths = {16, 16, 32, 32, 64};
  int embed_dim = 128;
  // Number of conv blocks followed by 2x2 max pooling. The paper geometry
  // (500x64 inputs) uses 5; the desk preset (50x16) uses 3.
  int pool_stages = 3;
  int feat_dim = 16;
  int num_speakers = 0;
  int lstm_hidden = 0;  // 0 means feat_dim
  int d2_hidden = 64;
  double dropout_rate = 0.2;

  int lstm_hidden_or_default() const { return lstm_hidden > 0 ? lstm_hidden : feat_dim; }
};

struct ConvBlock {
  Conv2dLayer conv;
  BatchNormLayer bn;
};

// Conv trunk with batch norm + relu per block, max pooling on the first
// `pool_stages` blocks, global average pooling, then the embedding projection
// and the speaker softmax head.
struct BaselineCnn {
  std::vector<ConvBlock> blocks;
  LinearLayer embed;  // [C_last, d]
  LinearLayer head;   // [d, N]

  static BaselineCnn init(const std::string& prefix, const ModelConfig& config, Rng& rng);
  std::vector<Param*> params();
  std::vector<Param*> state_tensors();
};

// G (two LSTM layers) + D1 (BaselineCnn) + D2 (temporal mean of G's output
// through gradient reversal into a two-layer channel classifier).
struct CatModel {
  LstmLayer g1;
  LstmLayer g2;
  LinearLayer g_proj;  // only used when lstm_hidden != feat_dim
  bool has_proj = false;
  BaselineCnn d1;
  LinearLayer d2_fc1;  // [F, d2_hidden]
  LinearLayer d2_fc2;  // [d2_hidden, 2]
  bool with_d2 = true;

  static CatModel init(const ModelConfig& config, uint64_t seed, bool with_d2);
  std::vector<Param*> params();
  std::vector<Param*> state_tensors();
};

// One model wrapper for the three architectures so training, checkpointing and
// evaluation share a surface.
struct SpeakerModel {
  ModelConfig config;
  BaselineCnn cnn;  // architecture == cnn
  CatModel cat;     // architecture == cat | cat_no_d2

  bool is_cnn() const { return config.architecture == "cnn"; }
  std::vector<Param*> params();
  std::vector<Param*> state_tensors();
  void bind(Tape& tape);
  void unbind();
};

SpeakerModel init_model(const ModelConfig& config, uint64_t seed);

struct ForwardResult {
  Tensor embeddings;      // [M,d], unit rows
  Tensor speaker_logits;  // [M,N]
  Tensor channel_logits;  // [M,2]; empty unless the CAT discriminator ran
  // Temporal mean of G's output before the reversal layer, for probes and
  // finite-difference checks of the true-gradient graph.
  Tensor generator_summary;  // [M,F]; empty for the plain CNN
};

// Validates that [T,F] survives `pool_stages` halvings.
void check_pool_geometry(int t, int f, int pool_stages);

ForwardResult baseline_forward(BaselineCnn& model, const ModelConfig& config,
                               const Tensor& features, Mode mode, Rng& dropout_rng);
ForwardResult cat_forward(CatModel& model, const ModelConfig& config, const Tensor& features,
                          double beta, Mode mode, Rng& dropout_rng);
ForwardResult model_forward(SpeakerModel& model, const Tensor& features, double beta, Mode mode,
                            Rng& dropout_rng);

// Sliding-window utterance embedding: ceil(T/window) non-overlapping segments
// (frame indices taken mod T, which wrap-pads short ones), each embedded in
// infer mode, averaged, then L2-normalized. Returns a unit [d] vector.
Tensor utterance_embedding(SpeakerModel& model, const Tensor& features, int window);

int embedding_segment_count(int frames, int window);

}  // namespace catsr

#endif  // CATSR_MODEL_HPP_
