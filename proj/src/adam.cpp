#include "bline/adam.hpp"

#include <cmath>

namespace bline {

AdamState::AdamState(const std::vector<Tensor>& params) {
    slots.reserve(params.size());
    for (const Tensor& p : params)
        slots.push_back(Slot{Array::Zero(p.size()), Array::Zero(p.size())});
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double weight_decay) {
    if (state.slots.size() != params.size())
        throw ShapeError("adam_step: state holds " + std::to_string(state.slots.size()) +
                         " slots for " + std::to_string(params.size()) + " parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad())
            throw ShapeError("adam_step: parameter " + std::to_string(i) + " has no gradient");
        if (state.slots[i].m.size() != params[i].size())
            throw ShapeError("adam_step: moment size mismatch at parameter " + std::to_string(i));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        AdamState::Slot& s = state.slots[i];
        Array g = p.grad() + weight_decay * p.values();
        s.m = state.beta1 * s.m + (1.0 - state.beta1) * g;
        s.v = state.beta2 * s.v + (1.0 - state.beta2) * g.square();
        const Array mhat = s.m / bc1;
        const Array vhat = s.v / bc2;
        p.values() -= lr * mhat / (vhat.sqrt() + state.eps);
    }
}

}  // namespace bline
