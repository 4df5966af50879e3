#include "catsr/model.hpp"

#include <cmath>

namespace catsr {

BaselineCnn BaselineCnn::init(const std::string& prefix, const ModelConfig& config, Rng& rng) {
  if (config.conv_widths.empty()) {
    throw std::invalid_argument("model: conv_widths must not be empty");
  }
  if (config.pool_stages < 0 || config.pool_stages > static_cast<int>(config.conv_widths.size())) {
    throw std::invalid_argument("model: pool_stages must lie in [0, #conv blocks]");
  }
  if (config.num_speakers < 1) {
    throw std::invalid_argument("model: num_speakers must be >= 1");
  }
  BaselineCnn m;
  int c_in = 1;
  for (size_t i = 0; i < config.conv_widths.size(); ++i) {
    const int c_out = config.conv_widths[i];
    const std::string block = prefix + ".block" + std::to_string(i);
    ConvBlock b;
    b.conv = Conv2dLayer::init(block + ".conv", c_in, c_out, rng);
    b.bn = BatchNormLayer::init(block + ".bn", c_out);
    m.blocks.push_back(std::move(b));
    c_in = c_out;
  }
  m.embed = LinearLayer::init(prefix + ".embed", c_in, config.embed_dim, rng);
  m.head = LinearLayer::init(prefix + ".head", config.embed_dim, config.num_speakers, rng);
  return m;
}

std::vector<Param*> BaselineCnn::params() {
  std::vector<Param*> out;
  for (ConvBlock& b : blocks) {
    for (Param* p : b.conv.params()) out.push_back(p);
    for (Param* p : b.bn.params()) out.push_back(p);
  }
  for (Param* p : embed.params()) out.push_back(p);
  for (Param* p : head.params()) out.push_back(p);
  return out;
}

std::vector<Param*> BaselineCnn::state_tensors() {
  std::vector<Param*> out;
  for (ConvBlock& b : blocks) {
    for (Param* p : b.bn.state()) out.push_back(p);
  }
  return out;
}

CatModel CatModel::init(const ModelConfig& config, uint64_t seed, bool with_d2_flag) {
  CatModel m;
  const int f = config.feat_dim;
  const int h = config.lstm_hidden_or_default();
  Rng rng_g(derive_seed(seed, "init.g"));
  m.g1 = LstmLayer::init("g.lstm0", f, h, rng_g);
  m.g2 = LstmLayer::init("g.lstm1", h, h, rng_g);
  m.has_proj = h != f;
  if (m.has_proj) m.g_proj = LinearLayer::init("g.proj", h, f, rng_g);
  Rng rng_d1(derive_seed(seed, "init.d1"));
  m.d1 = BaselineCnn::init("d1", config, rng_d1);
  m.with_d2 = with_d2_flag;
  if (with_d2_flag) {
    Rng rng_d2(derive_seed(seed, "init.d2"));
    m.d2_fc1 = LinearLayer::init("d2.fc0", f, config.d2_hidden, rng_d2);
    m.d2_fc2 = LinearLayer::init("d2.fc1", config.d2_hidden, 2, rng_d2);
  }
  return m;
}

std::vector<Param*> CatModel::params() {
  std::vector<Param*> out;
  for (Param* p : g1.params()) out.push_back(p);
  for (Param* p : g2.params()) out.push_back(p);
  if (has_proj) {
    for (Param* p : g_proj.params()) out.push_back(p);
  }
  for (Param* p : d1.params()) out.push_back(p);
  if (with_d2) {
    for (Param* p : d2_fc1.params()) out.push_back(p);
    for (Param* p : d2_fc2.params()) out.push_back(p);
  }
  return out;
}

std::vector<Param*> CatModel::state_tensors() { return d1.state_tensors(); }

std::vector<Param*> SpeakerModel::params() { return is_cnn() ? cnn.params() : cat.params(); }

std::vector<Param*> SpeakerModel::state_tensors() {
  return is_cnn() ? cnn.state_tensors() : cat.state_tensors();
}

void SpeakerModel::bind(Tape& tape) {
  for (Param* p : params()) p->bind(tape);
}

void SpeakerModel::unbind() {
  for (Param* p : params()) p->unbind();
}

SpeakerModel init_model(const ModelConfig& config, uint64_t seed) {
  SpeakerModel m;
  m.config = config;
  if (config.architecture == "cnn") {
    Rng rng_d1(derive_seed(seed, "init.d1"));
    m.cnn = BaselineCnn::init("d1", config, rng_d1);
  } else if (config.architecture == "cat" || config.architecture == "cat_no_d2") {
    m.cat = CatModel::init(config, seed, config.architecture == "cat");
  } else {
    throw std::invalid_argument("model: unknown architecture '" + config.architecture + "'");
  }
  return m;
}

void check_pool_geometry(int t, int f, int pool_stages) {
  int h = t, w = f;
  for (int i = 0; i < pool_stages; ++i) {
    if (h < 2 || w < 2) {
      throw ShapeError("model: input " + std::to_string(t) + "x" + std::to_string(f) +
                       " cannot survive " + std::to_string(pool_stages) +
                       " pooling stages (needs at least " + std::to_string(1 << pool_stages) + "x" +
                       std::to_string(1 << pool_stages) + ")");
    }
    h /= 2;
    w /= 2;
  }
}

ForwardResult baseline_forward(BaselineCnn& model, const ModelConfig& config,
                               const Tensor& features, Mode mode, Rng& dropout_rng) {
  if (features.rank() != 4 || features.dim(1) != 1) {
    throw ShapeError("forward: features must be [M,1,T,F], got " + shape_str(features.shape()));
  }
  check_pool_geometry(features.dim(2), features.dim(3), config.pool_stages);

  Tensor x = features;
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    ConvBlock& b = model.blocks[i];
    x = relu(batchnorm(conv2d(x, b.conv), b.bn, mode));
    if (static_cast<int>(i) < config.pool_stages) x = pool2d(x, PoolMode::Max);
  }
  Tensor pooled = global_average_pool(x);  // [M, C_last]
  Tensor projected = linear(pooled, model.embed.weight.tensor(), model.embed.bias.tensor());
  // Softmax logits come from the raw projection; scoring and the triplet loss
  // use the normalized embedding.
  Tensor head_in = dropout(projected, config.dropout_rate, mode, dropout_rng);
  ForwardResult r;
  r.speaker_logits = linear(head_in, model.head.weight.tensor(), model.head.bias.tensor());
  r.embeddings = l2_normalize_rows(projected);
  return r;
}

ForwardResult cat_forward(CatModel& model, const ModelConfig& config, const Tensor& features,
                          double beta, Mode mode, Rng& dropout_rng) {
  if (features.rank() != 4 || features.dim(1) != 1) {
    throw ShapeError("forward: features must be [M,1,T,F], got " + shape_str(features.shape()));
  }
  const int m = features.dim(0), t = features.dim(2), f = features.dim(3);
  const int h = model.g1.hidden;
  Tensor tm = batch_to_time_major(features);  // [T,M,F]
  Tensor h1 = lstm_sequence_time_major(tm, model.g1, Tensor::zeros({m, h}), Tensor::zeros({m, h}));
  Tensor h2 = lstm_sequence_time_major(h1, model.g2, Tensor::zeros({m, h}), Tensor::zeros({m, h}));
  Tensor g_out = h2;
  if (model.has_proj) {
    g_out = reshape(linear(reshape(h2, {t * m, h}), model.g_proj.weight.tensor(),
                           model.g_proj.bias.tensor()),
                    {t, m, f});
  }
  ForwardResult r = baseline_forward(model.d1, config, time_major_to_batch(g_out), mode, dropout_rng);
  r.generator_summary = mean0(g_out);  // [M,F] temporal mean of G's output
  if (model.with_d2) {
    Tensor reversed = gradient_reversal(r.generator_summary, beta);
    Tensor hidden = relu(linear(reversed, model.d2_fc1.weight.tensor(), model.d2_fc1.bias.tensor()));
    r.channel_logits = linear(hidden, model.d2_fc2.weight.tensor(), model.d2_fc2.bias.tensor());
  }
  return r;
}

ForwardResult model_forward(SpeakerModel& model, const Tensor& features, double beta, Mode mode,
                            Rng& dropout_rng) {
  if (model.is_cnn()) {
    return baseline_forward(model.cnn, model.config, features, mode, dropout_rng);
  }
  return cat_forward(model.cat, model.config, features, beta, mode, dropout_rng);
}

int embedding_segment_count(int frames, int window) {
  if (frames < 1 || window < 1) {
    throw std::invalid_argument("utterance_embedding: frames and window must be >= 1");
  }
  return std::max(1, (frames + window - 1) / window);
}

Tensor utterance_embedding(SpeakerModel& model, const Tensor& features, int window) {
  if (features.rank() != 2) {
    throw ShapeError("utterance_embedding: features must be [T,F], got " +
                     shape_str(features.shape()));
  }
  const int t = features.dim(0), f = features.dim(1);
  for (Param* p : model.params()) {
    if (p->bound.on_tape()) {
      throw TapeError("utterance_embedding: unbind the model from its training tape first");
    }
  }
  const int segments = embedding_segment_count(t, window);
  Rng unused(0);  // dropout is inert in infer mode
  Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(model.config.embed_dim);
  for (int s = 0; s < segments; ++s) {
    Eigen::ArrayXd seg(static_cast<int64_t>(window) * f);
    for (int j = 0; j < window; ++j) {
      const int src = (s * window + j) % t;  // wrap-pad from the utterance start
      seg.segment(static_cast<int64_t>(j) * f, f) =
          features.values().segment(static_cast<int64_t>(src) * f, f);
    }
    ForwardResult r =
        model_forward(model, Tensor({1, 1, window, f}, std::move(seg)), 0.0, Mode::Infer, unused);
    mean += r.embeddings.values();
  }
  mean /= static_cast<double>(segments);
  return reshape(l2_normalize_rows(Tensor({1, model.config.embed_dim}, std::move(mean))),
                 {model.config.embed_dim});
}

}  // namespace catsr
