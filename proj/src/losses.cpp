#include "catsr/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace catsr {

ChannelLabel ChannelLabel::from_id(int channel) {
  if (channel != 0 && channel != 1) {
    throw std::invalid_argument("channel label: id must be 0 or 1, got " + std::to_string(channel));
  }
  return ChannelLabel(channel);
}

ChannelLabel ChannelLabel::from_pair(double a, double b) {
  if (a == 1.0 && b == 0.0) return ChannelLabel(0);
  if (a == 0.0 && b == 1.0) return ChannelLabel(1);
  throw std::invalid_argument("channel label: malformed one-hot pair (" + std::to_string(a) + "," +
                              std::to_string(b) + ")");
}

// Shared softmax cross-entropy with integer class indices.
static Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> labels,
                                   Reduction reduction, const char* op) {
  if (logits.rank() != 2) {
    throw ShapeError(std::string(op) + ": logits must be [M,N], got " + shape_str(logits.shape()));
  }
  const int M = logits.dim(0), N = logits.dim(1);
  if (static_cast<int>(labels.size()) != M) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(M) + " rows");
  }
  for (int i = 0; i < M; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= N) {
      throw std::out_of_range(std::string(op) + ": label " +
                              std::to_string(labels[static_cast<size_t>(i)]) + " outside [0," +
                              std::to_string(N) + ") at row " + std::to_string(i));
    }
  }
  Eigen::ArrayXd probs(logits.size());
  double loss = 0.0;
  for (int i = 0; i < M; ++i) {
    auto row = logits.values().segment(static_cast<int64_t>(i) * N, N);
    const double mx = row.maxCoeff();
    Eigen::ArrayXd e = (row - mx).exp();
    const double z = e.sum();
    probs.segment(static_cast<int64_t>(i) * N, N) = e / z;
    loss -= row(labels[static_cast<size_t>(i)]) - mx - std::log(z);
  }
  const double norm = reduction == Reduction::Mean ? 1.0 / M : 1.0;
  Tensor out = Tensor::scalar(loss * norm);
  Tape* tp = common_tape({&logits});
  if (!tp) return out;
  Tensor lg = logits;
  std::vector<int> lbl(labels.begin(), labels.end());
  return tp->record(std::move(out), [lg, lbl, probs, M, N, norm](Tape& t, const Eigen::ArrayXd& g) {
    Eigen::ArrayXd gl = probs * (g(0) * norm);
    for (int i = 0; i < M; ++i) {
      gl(static_cast<int64_t>(i) * N + lbl[static_cast<size_t>(i)]) -= g(0) * norm;
    }
    t.accumulate(lg, gl);
  });
}

Tensor softmax_loss(const Tensor& logits, std::span<const int> labels, Reduction reduction) {
  return cross_entropy_logits(logits, labels, reduction, "softmax_loss");
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: size mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const double na = std::sqrt(a.values().square().sum());
  const double nb = std::sqrt(b.values().square().sum());
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  }
  return (a.values() * b.values()).sum() / (na * nb);
}

TripletLossResult triplet_loss(const Tensor& embeddings, const TripletBatch& triplets,
                               Reduction reduction) {
  if (embeddings.rank() != 2) {
    throw ShapeError("triplet_loss: embeddings must be [M,d], got " +
                     shape_str(embeddings.shape()));
  }
  const int M = embeddings.dim(0), d = embeddings.dim(1);
  const size_t n = triplets.count();
  if (triplets.positive.size() != n || triplets.negative.size() != n) {
    throw ShapeError("triplet_loss: ragged triplet index lists");
  }
  if (n == 0) {
    // Exact zero, still differentiable so downstream graph wiring is uniform.
    Tensor zero = Tensor::scalar(0.0);
    Tape* tp = common_tape({&embeddings});
    if (tp) {
      Tensor e = embeddings;
      zero = tp->record(std::move(zero), [e](Tape& t, const Eigen::ArrayXd&) {
        t.accumulate(e, Eigen::ArrayXd::Zero(e.size()));
      });
    }
    return TripletLossResult{zero, true};
  }
  for (size_t k = 0; k < n; ++k) {
    if (triplets.anchor[k] < 0 || triplets.anchor[k] >= M || triplets.positive[k] < 0 ||
        triplets.positive[k] >= M || triplets.negative[k] < 0 || triplets.negative[k] >= M) {
      throw std::out_of_range("triplet_loss: index outside batch at triplet " + std::to_string(k));
    }
  }

  const double delta = triplets.margin;
  auto row = [&](int r) { return embeddings.values().segment(static_cast<int64_t>(r) * d, d); };
  auto norm = [&](int r) { return std::sqrt(row(r).square().sum()); };

  double loss = 0.0;
  std::vector<double> hinge_active(n, 0.0);
  for (size_t k = 0; k < n; ++k) {
    const int a = triplets.anchor[k], p = triplets.positive[k], ng = triplets.negative[k];
    const double can = (row(a) * row(ng)).sum() / (norm(a) * norm(ng));
    const double cap = (row(a) * row(p)).sum() / (norm(a) * norm(p));
    const double v = can + delta - cap;
    if (v > 0.0) {
      loss += v;
      hinge_active[k] = 1.0;
    }
  }
  const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
  Tensor out = Tensor::scalar(loss * scale);
  Tape* tp = common_tape({&embeddings});
  if (!tp) return TripletLossResult{out, false};
  Tensor e = embeddings;
  TripletBatch tb = triplets;
  return TripletLossResult{
      tp->record(std::move(out),
                 [e, tb, hinge_active, scale, d](Tape& t, const Eigen::ArrayXd& g) {
                   const int64_t dd = d;
                   Eigen::ArrayXd ge = Eigen::ArrayXd::Zero(e.size());
                   auto row = [&](int r) { return e.values().segment(r * dd, dd); };
                   // d cos(u,v)/du = v/(|u||v|) - cos(u,v) u/|u|^2
                   auto add_cos_grad = [&](int u, int v, double w) {
                     auto ru = row(u);
                     auto rv = row(v);
                     const double nu = std::sqrt(ru.square().sum());
                     const double nv = std::sqrt(rv.square().sum());
                     const double c = (ru * rv).sum() / (nu * nv);
                     ge.segment(u * dd, dd) += w * (rv / (nu * nv) - ru * (c / (nu * nu)));
                     ge.segment(v * dd, dd) += w * (ru / (nu * nv) - rv * (c / (nv * nv)));
                   };
                   for (size_t k = 0; k < tb.count(); ++k) {
                     if (hinge_active[k] == 0.0) continue;
                     const double w = g(0) * scale;
                     add_cos_grad(tb.anchor[k], tb.negative[k], w);
                     add_cos_grad(tb.anchor[k], tb.positive[k], -w);
                   }
                   t.accumulate(e, ge);
                 }),
      false};
}

Tensor combined_loss(const Tensor& softmax_part, const Tensor& triplet_part, double alpha) {
  if (alpha < 0.0) {
    throw std::invalid_argument("combined_loss: alpha must be >= 0, got " + std::to_string(alpha));
  }
  return add(softmax_part, scale(triplet_part, alpha));
}

Tensor channel_adversarial_loss(const Tensor& channel_logits,
                                std::span<const ChannelLabel> channel_labels,
                                Reduction reduction) {
  if (channel_logits.rank() != 2 || channel_logits.dim(1) != 2) {
    throw ShapeError("channel_adversarial_loss: logits must be [M,2], got " +
                     shape_str(channel_logits.shape()));
  }
  std::vector<int> idx;
  idx.reserve(channel_labels.size());
  for (const ChannelLabel& l : channel_labels) idx.push_back(l.id());
  return cross_entropy_logits(channel_logits, idx, reduction, "channel_adversarial_loss");
}

TripletBatch select_triplets(const Tensor& embeddings, std::span<const int> speaker_labels,
                             double margin) {
  if (embeddings.rank() != 2) {
    throw ShapeError("select_triplets: embeddings must be [M,d], got " +
                     shape_str(embeddings.shape()));
  }
  const int M = embeddings.dim(0), d = embeddings.dim(1);
  if (static_cast<int>(speaker_labels.size()) != M) {
    throw ShapeError("select_triplets: " + std::to_string(speaker_labels.size()) +
                     " labels for batch of " + std::to_string(M));
  }
  TripletBatch out;
  out.margin = margin;
  auto row = [&](int r) { return embeddings.values().segment(static_cast<int64_t>(r) * d, d); };
  auto cos = [&](int u, int v) {
    const double nu = std::sqrt(row(u).square().sum());
    const double nv = std::sqrt(row(v).square().sum());
    return (row(u) * row(v)).sum() / (nu * nv);
  };
  std::vector<int> hardest(static_cast<size_t>(M), -1);
  for (int a = 0; a < M; ++a) {
    double best = 0.0;
    for (int nix = 0; nix < M; ++nix) {
      if (speaker_labels[static_cast<size_t>(nix)] == speaker_labels[static_cast<size_t>(a)]) {
        continue;
      }
      const double c = cos(a, nix);
      if (hardest[static_cast<size_t>(a)] < 0 || c > best) {
        best = c;
        hardest[static_cast<size_t>(a)] = nix;
      }
    }
  }
  for (int a = 0; a < M; ++a) {
    if (hardest[static_cast<size_t>(a)] < 0) continue;  // no negative exists
    for (int p = 0; p < M; ++p) {
      if (p == a || speaker_labels[static_cast<size_t>(p)] != speaker_labels[static_cast<size_t>(a)]) {
        continue;
      }
      out.anchor.push_back(a);
      out.positive.push_back(p);
      out.negative.push_back(hardest[static_cast<size_t>(a)]);
    }
  }
  if (out.anchor.empty()) out.empty_warning = true;
  return out;
}

}  // namespace catsr
