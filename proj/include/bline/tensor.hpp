#ifndef BLINE_TENSOR_HPP
#define BLINE_TENSOR_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bline {

using Array = Eigen::ArrayXd;

// Thrown on shape/contract violations of tensor ops.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when an operation produces or receives non-finite values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class ComputationTape;

namespace detail {
struct TensorData {
    std::vector<long> shape;
    Array values;
    Array grad;  // size 0 until first accumulation
    bool requires_grad = false;
    // Provenance: set when this tensor is the output of a tape node.
    const ComputationTape* tape = nullptr;
    long node = -1;
};
}  // namespace detail

// Shared-handle n-d array, row-major flat storage.
class Tensor {
public:
    Tensor() : d_(std::make_shared<detail::TensorData>()) {}
    explicit Tensor(std::vector<long> shape);
    Tensor(std::vector<long> shape, std::vector<double> values);

    static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<long>& shape() const { return d_->shape; }
    long rank() const { return static_cast<long>(d_->shape.size()); }
    long size() const { return d_->values.size(); }
    long extent(long axis) const { return d_->shape.at(static_cast<size_t>(axis)); }

    Array& values() { return d_->values; }
    const Array& values() const { return d_->values; }
    double* data() { return d_->values.data(); }
    const double* data() const { return d_->values.data(); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool r) { d_->requires_grad = r; }

    bool has_grad() const { return d_->grad.size() == d_->values.size(); }
    // Lazily allocated, zero-initialized.
    Array& grad();
    const Array& grad() const;
    void zero_grad();

    double item() const {
        if (size() != 1) throw ShapeError("item(): tensor is not scalar, size=" + std::to_string(size()));
        return d_->values[0];
    }

    bool same_storage(const Tensor& o) const { return d_.get() == o.d_.get(); }

    detail::TensorData* raw() const { return d_.get(); }

private:
    std::shared_ptr<detail::TensorData> d_;
    friend class ComputationTape;
};

inline long shape_product(const std::vector<long>& shape) {
    long n = 1;
    for (long e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<long>& shape);

// Ordered record of executed ops; replaying backward rules in reverse
// propagates gradients from a scalar loss to every requires_grad leaf.
class ComputationTape {
public:
    // Registers `output` as produced by a node whose reverse rule is `backward_fn`.
    // `output.requires_grad` is set if any input requires grad.
    void record(Tensor& output, const std::vector<Tensor>& inputs,
                std::function<void()> backward_fn);

    long num_nodes() const { return static_cast<long>(nodes_.size()); }
    void clear();

    friend void backward(const Tensor& loss, ComputationTape& tape);

private:
    struct Node {
        std::function<void()> backward;
        std::shared_ptr<detail::TensorData> output;
    };
    std::vector<Node> nodes_;
};

// Populates grad on every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate gradients are reset.
void backward(const Tensor& loss, ComputationTape& tape);

// Adds `delta` into `t`'s grad buffer if the tensor participates in
// differentiation (used by op backward rules).
inline void accumulate_grad(Tensor& t, const Array& delta) {
    if (!t.requires_grad()) return;
    t.grad() += delta;
}

}  // namespace bline

#endif
