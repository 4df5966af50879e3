#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "catsr/gradcheck.hpp"
#include "catsr/layers.hpp"
#include "catsr/losses.hpp"
#include "catsr/rng.hpp"

using namespace catsr;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Eigen::ArrayXd v(shape_size(shape));
  for (int64_t i = 0; i < v.size(); ++i) v(i) = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_unit_rows(int m, int d, Rng& rng) {
  return l2_normalize_rows(random_tensor({m, d}, rng));
}

}  // namespace

TEST_CASE("softmax loss unit values") {
  std::vector<int> label0 = {0};
  CHECK(softmax_loss(Tensor::zeros({1, 4}), label0, Reduction::Sum).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));

  CHECK(softmax_loss(Tensor({1, 3}, {10, 0, 0}), label0, Reduction::Sum).value() ==
        doctest::Approx(std::log(1.0 + 2.0 * std::exp(-10.0))).epsilon(1e-9));

  std::vector<int> label1 = {1};
  CHECK(softmax_loss(Tensor({1, 2}, {1, 0}), label1, Reduction::Sum).value() ==
        doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-9));

  SUBCASE("sum and mean reductions") {
    Tensor logits = Tensor::zeros({3, 4});
    std::vector<int> labels = {0, 1, 2};
    CHECK(softmax_loss(logits, labels, Reduction::Sum).value() ==
          doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));
    CHECK(softmax_loss(logits, labels, Reduction::Mean).value() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("label out of range") {
    std::vector<int> bad = {4};
    CHECK_THROWS_AS(softmax_loss(Tensor::zeros({1, 4}), bad, Reduction::Sum), std::out_of_range);
  }
}

TEST_CASE("softmax loss is invariant to a constant shift per row") {
  Rng rng(3);
  Tensor logits = random_tensor({4, 6}, rng);
  std::vector<int> labels = {1, 0, 5, 3};
  const double base = softmax_loss(logits, labels, Reduction::Sum).value();
  Eigen::ArrayXd shifted = logits.values();
  for (int r = 0; r < 4; ++r) shifted.segment(r * 6, 6) += 10.0 + r;
  const double moved = softmax_loss(Tensor({4, 6}, shifted), labels, Reduction::Sum).value();
  CHECK(moved == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("softmax loss gradients pass gradcheck") {
  Rng rng(5);
  std::vector<int> labels = {2, 0, 1};
  auto f = [&](const Tensor& x) { return softmax_loss(x, labels, Reduction::Sum); };
  for (int rep = 0; rep < 5; ++rep) {
    CHECK(gradcheck(f, random_tensor({3, 4}, rng), 1e-5) <= 1e-4);
  }
}

TEST_CASE("cosine similarity") {
  Tensor a({3}, {1, 2, 3});
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})) == doctest::Approx(0.0));
  CHECK(cosine_similarity(Tensor({2}, {1, 1}), Tensor({2}, {1, 0})) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
  CHECK_THROWS(cosine_similarity(Tensor::zeros({2}), Tensor({2}, {1, 0})));
}

TEST_CASE("triplet loss unit values") {
  // rows 0,1 parallel; row 2 orthogonal
  Tensor emb({3, 2}, {1, 0, 1, 0, 0, 1});
  TripletBatch tb;
  tb.margin = 0.1;
  SUBCASE("satisfied margin gives exactly zero") {
    tb.anchor = {0};
    tb.positive = {1};
    tb.negative = {2};
    CHECK(triplet_loss(emb, tb, Reduction::Sum).loss.value() == 0.0);
  }
  SUBCASE("worst-case violation") {
    tb.anchor = {0};
    tb.positive = {2};  // orthogonal positive
    tb.negative = {1};  // identical negative
    CHECK(triplet_loss(emb, tb, Reduction::Sum).loss.value() ==
          doctest::Approx(1.1).epsilon(1e-12));
  }
  SUBCASE("empty triplet set returns exact zero with warning") {
    TripletLossResult r = triplet_loss(emb, tb, Reduction::Sum);
    CHECK(r.loss.value() == 0.0);
    CHECK(r.empty_warning);
  }
}

TEST_CASE("triplet loss matches a scalar per-triplet oracle on random embeddings") {
  Rng rng(7);
  Tensor emb = random_unit_rows(6, 4, rng);
  TripletBatch tb;
  tb.margin = 0.1;
  tb.anchor = {0, 1, 2, 3, 4};
  tb.positive = {1, 2, 3, 4, 5};
  tb.negative = {5, 4, 0, 1, 2};
  double expect = 0.0;
  for (size_t k = 0; k < tb.count(); ++k) {
    auto row = [&](int r) {
      return Tensor({4}, Eigen::ArrayXd(emb.values().segment(r * 4, 4)));
    };
    const double can = cosine_similarity(row(tb.anchor[k]), row(tb.negative[k]));
    const double cap = cosine_similarity(row(tb.anchor[k]), row(tb.positive[k]));
    expect += std::max(0.0, can + tb.margin - cap);
  }
  CHECK(triplet_loss(emb, tb, Reduction::Sum).loss.value() ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(triplet_loss(emb, tb, Reduction::Mean).loss.value() ==
        doctest::Approx(expect / 5.0).epsilon(1e-12));
}

TEST_CASE("triplet loss is nonnegative and zero exactly when margins hold") {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor emb = random_unit_rows(5, 3, rng);
    TripletBatch tb;
    tb.margin = 0.2;
    tb.anchor = {0, 1, 2};
    tb.positive = {1, 2, 3};
    tb.negative = {4, 4, 4};
    const double v = triplet_loss(emb, tb, Reduction::Sum).loss.value();
    CHECK(v >= 0.0);
    bool all_satisfied = true;
    for (size_t k = 0; k < tb.count(); ++k) {
      auto row = [&](int r) { return Tensor({3}, Eigen::ArrayXd(emb.values().segment(r * 3, 3))); };
      const double cap = cosine_similarity(row(tb.anchor[k]), row(tb.positive[k]));
      const double can = cosine_similarity(row(tb.anchor[k]), row(tb.negative[k]));
      if (cap < can + tb.margin) all_satisfied = false;
    }
    CHECK((v == 0.0) == all_satisfied);
  }
}

TEST_CASE("triplet loss gradients pass gradcheck") {
  Rng rng(11);
  TripletBatch tb;
  tb.margin = 0.3;  // large enough that hinges stay active at the probe points
  tb.anchor = {0, 1};
  tb.positive = {1, 0};
  tb.negative = {2, 3};
  auto f = [&](const Tensor& x) { return triplet_loss(x, tb, Reduction::Sum).loss; };
  for (int rep = 0; rep < 5; ++rep) {
    CHECK(gradcheck(f, random_tensor({4, 3}, rng, 0.3, 1.5), 1e-5) <= 1e-4);
  }
}

TEST_CASE("combined loss") {
  Tensor ls = Tensor::scalar(2.0);
  Tensor lt = Tensor::scalar(0.5);
  CHECK(combined_loss(ls, lt, 1.0).value() == 2.5);
  CHECK(combined_loss(ls, lt, 0.0).value() == 2.0);
  CHECK(combined_loss(ls, Tensor::scalar(0.0), 7.0).value() == 2.0);
  CHECK_THROWS(combined_loss(ls, lt, -1.0));
}

TEST_CASE("channel adversarial loss values") {
  std::vector<ChannelLabel> labels = {ChannelLabel::from_id(0), ChannelLabel::from_id(1),
                                      ChannelLabel::from_id(0)};
  SUBCASE("uniform logits give M ln 2") {
    CHECK(channel_adversarial_loss(Tensor::zeros({3, 2}), labels, Reduction::Sum).value() ==
          doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("confident correct logits with margin 20") {
    Tensor logits({3, 2}, {20, 0, 0, 20, 20, 0});
    const double per_sample = std::log1p(std::exp(-20.0));  // direct cross-entropy evaluation
    CHECK(channel_adversarial_loss(logits, labels, Reduction::Sum).value() ==
          doctest::Approx(3.0 * per_sample).epsilon(1e-6));
    CHECK(per_sample == doctest::Approx(2.06e-9).epsilon(1e-3));
  }
  SUBCASE("malformed one-hot is rejected") {
    CHECK_THROWS(ChannelLabel::from_pair(1.0, 1.0));
    CHECK_THROWS(ChannelLabel::from_pair(0.0, 0.0));
    CHECK_THROWS(ChannelLabel::from_pair(0.5, 0.5));
    CHECK(ChannelLabel::from_pair(1.0, 0.0).id() == 0);
    CHECK(ChannelLabel::from_pair(0.0, 1.0).id() == 1);
  }
}

TEST_CASE("gradient reversal flips the channel-loss gradient polarity exactly") {
  // Micro generator parameter feeding the discriminator through a linear map;
  // beta=1 must negate the parameter gradient relative to an identity layer.
  Rng rng(13);
  Tensor w0 = random_tensor({2, 2}, rng);
  Tensor x = random_tensor({3, 2}, rng);
  Tensor head_w = random_tensor({2, 2}, rng);
  Tensor head_b = random_tensor({2}, rng);
  std::vector<ChannelLabel> labels = {ChannelLabel::from_id(0), ChannelLabel::from_id(1),
                                      ChannelLabel::from_id(1)};

  auto run = [&](bool reversed) {
    Tape tape;
    Tensor w = tape.leaf(w0);
    Tensor feat = catsr::tanh(matmul(x, w));
    Tensor tapped = reversed ? gradient_reversal(feat, 1.0) : feat;
    Tensor logits = linear(tapped, head_w, head_b);
    tape.backward(channel_adversarial_loss(logits, labels, Reduction::Sum));
    return tape.grad(w);
  };
  Tensor g_rev = run(true);
  Tensor g_id = run(false);
  for (int64_t i = 0; i < g_rev.size(); ++i) CHECK(g_rev.at(i) == -g_id.at(i));  // exact
}

TEST_CASE("select_triplets") {
  SUBCASE("two speakers with two utterances each give four ordered pairs") {
    Rng rng(15);
    Tensor emb = random_unit_rows(4, 3, rng);
    std::vector<int> speakers = {0, 0, 1, 1};
    TripletBatch tb = select_triplets(emb, speakers, 0.1);
    CHECK(tb.count() == 4);
    CHECK_FALSE(tb.empty_warning);
    for (size_t k = 0; k < tb.count(); ++k) {
      CHECK(speakers[static_cast<size_t>(tb.anchor[k])] ==
            speakers[static_cast<size_t>(tb.positive[k])]);
      CHECK(speakers[static_cast<size_t>(tb.anchor[k])] !=
            speakers[static_cast<size_t>(tb.negative[k])]);
      CHECK(tb.anchor[k] != tb.positive[k]);
    }
  }
  SUBCASE("all-distinct speakers give the empty set with a warning") {
    Rng rng(17);
    Tensor emb = random_unit_rows(4, 3, rng);
    std::vector<int> speakers = {0, 1, 2, 3};
    TripletBatch tb = select_triplets(emb, speakers, 0.1);
    CHECK(tb.count() == 0);
    CHECK(tb.empty_warning);
  }
  SUBCASE("negatives are the hardest by brute-force scan") {
    Rng rng(19);
    for (int rep = 0; rep < 10; ++rep) {
      Tensor emb = random_unit_rows(8, 4, rng);
      std::vector<int> speakers = {0, 0, 1, 1, 2, 2, 3, 3};
      TripletBatch tb = select_triplets(emb, speakers, 0.1);
      auto row = [&](int r) { return Tensor({4}, Eigen::ArrayXd(emb.values().segment(r * 4, 4))); };
      for (size_t k = 0; k < tb.count(); ++k) {
        const int a = tb.anchor[k];
        int best = -1;
        double best_c = -2.0;
        for (int n = 0; n < 8; ++n) {
          if (speakers[static_cast<size_t>(n)] == speakers[static_cast<size_t>(a)]) continue;
          const double c = cosine_similarity(row(a), row(n));
          if (c > best_c) {
            best_c = c;
            best = n;
          }
        }
        CHECK(tb.negative[k] == best);
      }
    }
  }
}
