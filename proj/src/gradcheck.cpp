#include "bline/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bline {

GradCheckResult finite_diff_check(const std::function<double()>& forward,
                                  std::vector<Tensor>& params,
                                  const std::function<void()>& backward_pass,
                                  double epsilon, long max_coords, unsigned seed) {
    for (Tensor& p : params) p.zero_grad();
    backward_pass();
    std::vector<Array> analytic;
    analytic.reserve(params.size());
    long total = 0;
    for (Tensor& p : params) {
        analytic.push_back(p.grad());
        total += p.size();
    }

    // Flat coordinate space over all parameters.
    std::vector<long> coords(static_cast<size_t>(total));
    for (long i = 0; i < total; ++i) coords[static_cast<size_t>(i)] = i;
    if (max_coords > 0 && max_coords < total) {
        std::mt19937 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<size_t>(max_coords));
    }

    const auto rel_err = [](double a, double d) {
        return std::abs(a - d) / std::max(1e-6, std::abs(a) + std::abs(d));
    };

    GradCheckResult res;
    const double f0 = forward();
    for (long flat : coords) {
        long idx = flat;
        size_t pi = 0;
        while (idx >= params[pi].size()) {
            idx -= params[pi].size();
            ++pi;
        }
        double* slot = params[pi].data() + idx;
        const double saved = *slot;
        const auto eval = [&](double offset) {
            *slot = saved + offset;
            const double f = forward();
            *slot = saved;
            if (!std::isfinite(f)) throw NumericError("finite_diff_check: non-finite forward value");
            return f;
        };
        const double a = analytic[pi][idx];
        double rel = rel_err(a, (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon));
        if (rel > 2e-5) {
            // The loss is only piecewise smooth (relu, maxpool); a kink within
            // epsilon of the sample point biases the central difference at any
            // step size. The true derivative then equals the slope on the side
            // the point sits on, so accept the analytic value if it matches a
            // second-order one-sided difference on either side.
            const double h = epsilon;
            const double dp = (-3.0 * f0 + 4.0 * eval(h) - eval(2.0 * h)) / (2.0 * h);
            const double dm = (3.0 * f0 - 4.0 * eval(-h) + eval(-2.0 * h)) / (2.0 * h);
            rel = std::min({rel, rel_err(a, dp), rel_err(a, dm)});
        }
        res.max_rel_error = std::max(res.max_rel_error, rel);
        res.coords_checked += 1;
    }
    return res;
}

}  // namespace bline
