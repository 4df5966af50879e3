#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "catsr/gradcheck.hpp"
#include "catsr/rng.hpp"
#include "catsr/tensor.hpp"

using namespace catsr;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Eigen::ArrayXd v(shape_size(shape));
  for (int64_t i = 0; i < v.size(); ++i) v(i) = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Keeps random points away from relu/max kinks where the numeric derivative
// is undefined.
Tensor random_away_from_zero(Shape shape, Rng& rng) {
  Eigen::ArrayXd v(shape_size(shape));
  for (int64_t i = 0; i < v.size(); ++i) {
    double x = rng.uniform(0.05, 2.0);
    v(i) = rng.uniform() < 0.5 ? -x : x;
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("elementwise examples") {
  Tensor r = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 2.0);

  CHECK(sigmoid(Tensor({1}, {0.0})).value() == doctest::Approx(0.5).epsilon(1e-12));

  Tensor s = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
  CHECK(s.at(0) == 4.0);
  CHECK(s.at(1) == 6.0);
}

TEST_CASE("binary ops require identical shapes and name both") {
  Tensor a({2, 3});
  Tensor b({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), ShapeError);
  CHECK_THROWS_WITH_AS(mul(a, b), doctest::Contains("[3,2]"), ShapeError);
}

TEST_CASE("ops do not mutate input shapes") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  (void)add(a, b);
  (void)matmul(a, b);
  (void)reshape(a, {4});
  CHECK(a.shape() == Shape{2, 2});
  CHECK(b.shape() == Shape{2, 2});
}

TEST_CASE("matmul basics") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor p = matmul(eye, m);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(p.at(i, j) == m.at(i, j));

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  CHECK(matmul(row, col).value() == 11.0);

  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST_CASE("gradient of sum(A*B) w.r.t. A matches finite differences and row sums of B") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = Tensor::ones({4, 2});

  Tape tape;
  Tensor at = tape.leaf(a);
  tape.backward(sum(matmul(at, b)));
  Tensor ga = tape.grad(at);
  // d sum(AB) / dA[i,k] = sum_j B[k,j]
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) CHECK(ga.at(i, k) == doctest::Approx(2.0).epsilon(1e-12));

  auto f = [&](const Tensor& x) { return sum(matmul(x, b)); };
  CHECK(gradcheck(f, a, 1e-5) <= 1e-4);
}

TEST_CASE("backward base cases") {
  SUBCASE("loss = sum(x) gives all-ones gradient") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2, 3}, {1, -2, 3, 4, -5, 6}));
    tape.backward(sum(x));
    Tensor g = tape.grad(x);
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g.at(i) == 1.0);
  }
  SUBCASE("loss = sum(x*x) gives 2x") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, {1, 2}));
    tape.backward(sum(mul(x, x)));
    CHECK(tape.grad(x).at(0) == doctest::Approx(2.0));
    CHECK(tape.grad(x).at(1) == doctest::Approx(4.0));
  }
  SUBCASE("nodes the loss does not reach keep zero gradients") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, {1, 2}));
    Tensor y = tape.leaf(Tensor({2}, {3, 4}));
    (void)mul(y, y);  // recorded but unreachable from the loss
    tape.backward(sum(x));
    CHECK(tape.grad(y).at(0) == 0.0);
    CHECK(tape.grad(y).at(1) == 0.0);
  }
}

TEST_CASE("backward twice without re-recording is an error") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({2}, {1, 2}));
  Tensor loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), TapeError);
  tape.reset();
  Tensor x2 = tape.leaf(Tensor({2}, {1, 2}));
  CHECK_NOTHROW(tape.backward(sum(x2)));
}

TEST_CASE("non-scalar loss is an error") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({2}, {1, 2}));
  Tensor y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("gradcheck on exact linear function is exact") {
  Rng rng(3);
  Tensor x = random_tensor({7}, rng);
  CHECK(gradcheck([](const Tensor& t) { return sum(t); }, x, 1e-5) <= 1e-10);
}

TEST_CASE("gradcheck rejects bad eps") {
  Tensor x({2}, {1, 2});
  auto f = [](const Tensor& t) { return sum(t); };
  CHECK_THROWS(gradcheck(f, x, 0.0));
  CHECK_THROWS(gradcheck(f, x, 0.5));
}

TEST_CASE("every elementwise kind passes gradcheck at 5 random points") {
  struct Kind {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    bool positive_only = false;
    bool away_from_zero = false;
  };
  const std::vector<Kind> kinds = {
      {"add", [](const Tensor& x) { return sum(add(x, scale(x, 0.5))); }},
      {"sub", [](const Tensor& x) { return sum(sub(x, mul(x, x))); }},
      {"mul", [](const Tensor& x) { return sum(mul(x, x)); }},
      {"relu", [](const Tensor& x) { return sum(relu(x)); }, false, true},
      {"sigmoid", [](const Tensor& x) { return sum(sigmoid(x)); }},
      {"tanh", [](const Tensor& x) { return sum(catsr::tanh(x)); }},
      {"exp", [](const Tensor& x) { return sum(catsr::exp(x)); }},
      {"log", [](const Tensor& x) { return sum(catsr::log(x)); }, true},
      {"negate", [](const Tensor& x) { return sum(negate(x)); }},
      {"scale", [](const Tensor& x) { return sum(scale(x, -1.7)); }},
  };
  Rng rng(17);
  for (const Kind& k : kinds) {
    CAPTURE(k.name);
    for (int rep = 0; rep < 5; ++rep) {
      Tensor x = k.positive_only    ? random_tensor({2, 3}, rng, 0.2, 3.0)
                 : k.away_from_zero ? random_away_from_zero({2, 3}, rng)
                                    : random_tensor({2, 3}, rng);
      CHECK(gradcheck(k.f, x, 1e-5) <= 1e-4);
    }
  }
}

TEST_CASE("structure ops pass gradcheck") {
  Rng rng(23);
  struct Kind {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
  };
  const std::vector<Kind> kinds = {
      {"reshape", [](const Tensor& x) { return sum(mul(reshape(x, {6}), reshape(x, {6}))); }},
      {"cols", [](const Tensor& x) { return sum(mul(cols(x, 1, 3), cols(x, 0, 2))); }},
      {"concat1", [](const Tensor& x) { return sum(mul(concat1(x, x), concat1(x, x))); }},
      {"slice0", [](const Tensor& x) { return sum(mul(slice0(x, 1, 2), slice0(x, 0, 1))); }},
      {"segment", [](const Tensor& x) { return sum(mul(segment(x, 1, 4), segment(x, 2, 4))); }},
      {"mean0", [](const Tensor& x) { return sum(mul(mean0(x), mean0(x))); }},
      {"concat0",
       [](const Tensor& x) {
         std::vector<Tensor> parts = {x, scale(x, 2.0)};
         return sum(mul(concat0(parts), concat0(parts)));
       }},
  };
  for (const Kind& k : kinds) {
    CAPTURE(k.name);
    for (int rep = 0; rep < 5; ++rep) {
      CHECK(gradcheck(k.f, random_tensor({2, 3}, rng), 1e-5) <= 1e-4);
    }
  }
}

TEST_CASE("composite graph gradients match finite differences") {
  Rng rng(31);
  auto f = [](const Tensor& x) {
    Tensor a = sigmoid(matmul(x, reshape(x, {3, 2})));  // [2,2]
    Tensor b = catsr::tanh(add(a, scale(a, 0.25)));
    return sum(mul(b, sigmoid(negate(b))));
  };
  for (int rep = 0; rep < 5; ++rep) {
    CHECK(gradcheck(f, random_tensor({2, 3}, rng), 1e-5) <= 1e-4);
  }
}

TEST_CASE("mixing two live tapes is an error") {
  Tape t1, t2;
  Tensor a = t1.leaf(Tensor({2}, {1, 2}));
  Tensor b = t2.leaf(Tensor({2}, {3, 4}));
  CHECK_THROWS_AS(add(a, b), TapeError);
}

TEST_CASE("mutating a recorded tensor is rejected") {
  Tape tape;
  Tensor x = tape.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(x.values_mut(), TapeError);
}
