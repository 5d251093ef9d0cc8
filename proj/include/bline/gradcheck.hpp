#ifndef BLINE_GRADCHECK_HPP
#define BLINE_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "bline/tensor.hpp"

namespace bline {

struct GradCheckResult {
    double max_rel_error = 0.0;
    long coords_checked = 0;
};

// Compares analytic gradients against central finite differences, falling
// back to one-sided differences when a kink of a piecewise-smooth loss sits
// within epsilon of the sample point.
// `forward` must be deterministic and rebuild its tape on every call.
// Checks up to `max_coords` coordinates sampled uniformly across all
// parameters (all of them when max_coords <= 0 or exceeds the total).
// Relative error per coordinate: |a - d| / max(1e-6, |a| + |d|).
GradCheckResult finite_diff_check(const std::function<double()>& forward,
                                  std::vector<Tensor>& params,
                                  const std::function<void()>& backward_pass,
                                  double epsilon, long max_coords, unsigned seed);

}  // namespace bline

#endif
