#ifndef BLINE_OPS_HPP
#define BLINE_OPS_HPP

#include <random>
#include <span>

#include "bline/tensor.hpp"

namespace bline {

enum class Mode { train, infer };

enum class Activation { relu, tanh, sigmoid };

// Running moments for one batchnorm layer.
struct BatchNormState {
    Array running_mean;
    Array running_var;
    double momentum = 0.9;
    double eps = 1e-5;

    explicit BatchNormState(long channels = 0)
        : running_mean(Array::Zero(channels)), running_var(Array::Ones(channels)) {}
};

// 3x3 valid cross-correlation, unit stride.
// input [Ci,H,W] -> [Co,H-2,W-2], or batched [N,Ci,H,W] -> [N,Co,H-2,W-2].
Tensor conv2d(ComputationTape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias);

// 3x3x3 cross-correlation, temporal same-padding (zeros), spatial valid.
// input [Ci,T,H,W] -> [Co,T,H-2,W-2].
Tensor conv3d(ComputationTape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias);

// 2x2/stride-2 max pool over the two trailing axes; odd row/column dropped.
// Gradient routes to the first (row-major) argmax cell of each window.
Tensor maxpool2d(ComputationTape& tape, const Tensor& input);

Tensor elementwise(ComputationTape& tape, Activation kind, const Tensor& input);

// weights [Dout,Din]; input [Din] -> [Dout], or batched [B,Din] -> [B,Dout].
Tensor dense(ComputationTape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias);
// dense without bias
Tensor linear(ComputationTape& tape, const Tensor& input, const Tensor& weights);

// Max-shifted softmax over a rank-1 tensor.
Tensor softmax_over_time(ComputationTape& tape, const Tensor& scores);

// Normalizes over all axes except `channel_axis`; gamma/beta are [C].
// Train mode uses batch moments and updates `state`; infer mode uses `state`.
Tensor batchnorm(ComputationTape& tape, const Tensor& input, const Tensor& gamma,
                 const Tensor& beta, BatchNormState& state, Mode mode, long channel_axis);

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); infer mode is the identity.
Tensor dropout(ComputationTape& tape, const Tensor& input, double rate, Mode mode, std::mt19937& rng);

// h [T,F] x w [F] -> [T]
Tensor matvec(ComputationTape& tape, const Tensor& h, const Tensor& w);

// (1/T) * sum_t a_t * h_t ; h [T,F], a [T] -> [F]
Tensor weighted_mean_rows(ComputationTape& tape, const Tensor& h, const Tensor& a);

// Plain temporal mean: h [T,F] -> [F]
Tensor mean_rows(ComputationTape& tape, const Tensor& h);

Tensor row(ComputationTape& tape, const Tensor& h, long t);
Tensor stack_rows(ComputationTape& tape, const std::vector<Tensor>& rows);
Tensor concat1d(ComputationTape& tape, const Tensor& a, const Tensor& b);
Tensor slice1d(ComputationTape& tape, const Tensor& x, long start, long len);

Tensor add(ComputationTape& tape, const Tensor& a, const Tensor& b);
Tensor mul(ComputationTape& tape, const Tensor& a, const Tensor& b);
Tensor scale(ComputationTape& tape, const Tensor& a, double c);
Tensor sum(ComputationTape& tape, const Tensor& a);
Tensor reshape(ComputationTape& tape, const Tensor& a, std::vector<long> shape);

// Numerically stable scalar binary cross-entropy from a logit:
// softplus(logit) - label*logit; label in {0,1}.
Tensor bce_with_logits(ComputationTape& tape, const Tensor& logit, double label);

// Plain (non-tape) mean binary cross-entropy over probabilities in (0,1).
double bce_loss(std::span<const double> probabilities, std::span<const double> labels);

double sigmoid_value(double x);

}  // namespace bline

#endif
