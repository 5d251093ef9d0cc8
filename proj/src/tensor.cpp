#include "bline/tensor.hpp"

#include <sstream>

namespace bline {

Tensor::Tensor(std::vector<long> shape) : d_(std::make_shared<detail::TensorData>()) {
    for (long e : shape)
        if (e < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->values = Array::Zero(shape_product(d_->shape));
}

Tensor::Tensor(std::vector<long> shape, std::vector<double> values) : Tensor(std::move(shape)) {
    if (static_cast<long>(values.size()) != d_->values.size())
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(d_->shape));
    for (size_t i = 0; i < values.size(); ++i) d_->values[static_cast<long>(i)] = values[i];
}

Array& Tensor::grad() {
    if (d_->grad.size() != d_->values.size()) d_->grad = Array::Zero(d_->values.size());
    return d_->grad;
}

const Array& Tensor::grad() const {
    if (d_->grad.size() != d_->values.size()) d_->grad = Array::Zero(d_->values.size());
    return d_->grad;
}

void Tensor::zero_grad() { d_->grad = Array::Zero(d_->values.size()); }

std::string shape_str(const std::vector<long>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void ComputationTape::record(Tensor& output, const std::vector<Tensor>& inputs,
                             std::function<void()> backward_fn) {
    bool needs = false;
    for (const Tensor& in : inputs) needs = needs || in.requires_grad();
    output.d_->requires_grad = needs;
    output.d_->tape = this;
    output.d_->node = static_cast<long>(nodes_.size());
    nodes_.push_back(Node{std::move(backward_fn), output.d_});
}

void ComputationTape::clear() { nodes_.clear(); }

void backward(const Tensor& loss, ComputationTape& tape) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (loss.raw()->tape != &tape)
        throw ShapeError("backward: loss was not produced on this tape");
    // Intermediate (node-output) grads are scratch; reset them so repeated
    // backward calls accumulate only on leaves.
    for (auto& node : tape.nodes_)
        if (node.output->grad.size() == node.output->values.size()) node.output->grad.setZero();
    loss.raw()->grad = Array::Ones(1);
    for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
        if (!it->output->requires_grad) continue;
        if (it->backward) it->backward();
    }
}

}  // namespace bline
