#ifndef CATSR_LOSSES_HPP_
#define CATSR_LOSSES_HPP_

#include <span>
#include <vector>

#include "catsr/tensor.hpp"

namespace catsr {

enum class Reduction { Sum, Mean };

// One-hot pair over the two channels: [1,0] is channel A, [0,1] is channel B.
class ChannelLabel {
 public:
  static ChannelLabel from_id(int channel);
  static ChannelLabel from_pair(double a, double b);
  int id() const { return id_; }

 private:
  explicit ChannelLabel(int id) : id_(id) {}
  int id_;
};

// Index triples into a batch of embeddings. speaker(anchor) == speaker(positive)
// and speaker(anchor) != speaker(negative) hold by construction.
struct TripletBatch {
  std::vector<int> anchor;
  std::vector<int> positive;
  std::vector<int> negative;
  double margin = 0.1;
  bool empty_warning = false;

  size_t count() const { return anchor.size(); }
};

struct TripletLossResult {
  Tensor loss;
  bool empty_warning = false;
};

// Negative log softmax probability of the true class, reduced over the batch.
Tensor softmax_loss(const Tensor& logits, std::span<const int> labels, Reduction reduction);

// a.b / (|a||b|); rank-1 (or single-row) tensors, zero norms are an error.
double cosine_similarity(const Tensor& a, const Tensor& b);

// Sum over triplets of max(0, D(a,n) + margin - D(a,p)) with D = cosine
// similarity. Empty batches yield exact 0 with the warning flag set.
TripletLossResult triplet_loss(const Tensor& embeddings, const TripletBatch& triplets,
                               Reduction reduction);

// L_s + alpha * L_T
Tensor combined_loss(const Tensor& softmax_part, const Tensor& triplet_part, double alpha);

// Two-class cross-entropy over channel logits [M,2].
Tensor channel_adversarial_loss(const Tensor& channel_logits,
                                std::span<const ChannelLabel> channel_labels, Reduction reduction);

// Hardest-negative in-batch mining: for every ordered same-speaker pair (a,p),
// the negative is the different-speaker embedding most cosine-similar to a
// (lowest index on ties).
TripletBatch select_triplets(const Tensor& embeddings, std::span<const int> speaker_labels,
                             double margin);

}  // namespace catsr

#endif  // CATSR_LOSSES_HPP_
