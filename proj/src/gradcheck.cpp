#include "catsr/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace catsr {

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw std::invalid_argument("gradcheck: eps must lie in (0, 1e-2]");
  }

  Tape tape;
  Tensor xt = tape.leaf(x);
  Tensor y = f(xt);
  if (y.size() != 1) {
    throw ShapeError("gradcheck: f must be scalar-valued, got shape " + shape_str(y.shape()));
  }
  if (!y.on_tape()) throw TapeError("gradcheck: f does not touch its input on the tape");
  tape.backward(y);
  Eigen::ArrayXd analytic = tape.grad(xt).values();

  double max_err = 0.0;
  Eigen::ArrayXd probe = x.values();
  for (int64_t i = 0; i < probe.size(); ++i) {
    const double saved = probe(i);
    probe(i) = saved + eps;
    double up = f(Tensor(x.shape(), probe)).value();
    probe(i) = saved - eps;
    double down = f(Tensor(x.shape(), probe)).value();
    probe(i) = saved;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(numeric) || !std::isfinite(analytic(i))) {
      throw std::runtime_error("gradcheck: non-finite derivative at coordinate " + std::to_string(i));
    }
    const double err = std::abs(analytic(i) - numeric) / std::max(1.0, std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace catsr
