#ifndef CATSR_GRADCHECK_HPP_
#define CATSR_GRADCHECK_HPP_

#include <functional>

#include "catsr/tensor.hpp"

namespace catsr {

// Central-difference check of reverse-mode gradients. `f` must be scalar-valued
// and deterministic; it is evaluated off-tape for the numeric side and once on
// a fresh tape for the analytic side. Returns
//   max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace catsr

#endif  // CATSR_GRADCHECK_HPP_
