#ifndef BLINE_ADAM_HPP
#define BLINE_ADAM_HPP

#include <vector>

#include "bline/tensor.hpp"

namespace bline {

// First/second moment buffers for a parameter list; t counts completed steps.
struct AdamState {
    struct Slot {
        Array m, v;
    };
    std::vector<Slot> slots;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(const std::vector<Tensor>& params);
    AdamState() = default;
};

// Bias-corrected Adam update. L2 enters as weight_decay * param added to the
// gradient before the moment update (classic coupled L2).
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double weight_decay);

}  // namespace bline

#endif
