#ifndef BLINE_MODEL_HPP
#define BLINE_MODEL_HPP

#include <array>
#include <optional>
#include <string>

#include "bline/ops.hpp"
#include "bline/tensor.hpp"

namespace bline {

enum class Variant { c2d_a, c3d_a, c2d_lstm, c2d_lstm_a };

// Canonical names: "C2D+A", "C3D+A", "C2D+LSTM", "C2D+LSTM+A".
std::string variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& name);
inline bool variant_has_lstm(Variant v) { return v == Variant::c2d_lstm || v == Variant::c2d_lstm_a; }
inline bool variant_has_attention(Variant v) { return v != Variant::c2d_lstm; }

// Layer sizing; defaults are the full-size network. Gradient checking uses a
// proportionally shrunk geometry (the operators are size-independent).
struct ModelGeometry {
    long frame_size = 64;
    std::array<long, 4> channels{16, 16, 32, 32};
    long feature_dim = 256;
    long hidden_size = 16;

    // conv(-2) conv(-2) pool(/2) conv(-2) conv(-2) pool(/2)
    long conv_out_size() const { return ((frame_size - 4) / 2 - 4) / 2; }
    long flat_dim() const { return channels[3] * conv_out_size() * conv_out_size(); }
    long lstm_out_dim() const { return 2 * hidden_size; }
    long pooled_dim(Variant v) const { return variant_has_lstm(v) ? lstm_out_dim() : feature_dim; }
};

struct ConvBlock {
    Tensor kernels, bias, gamma, beta;
    BatchNormState bn;
};

struct CnnEncoderParams {
    std::array<ConvBlock, 4> conv;
    Tensor fc_weights, fc_bias;  // flat_dim -> feature_dim
};

struct LstmDirection {
    // Gate blocks stacked as [input; forget; candidate; output], each H rows.
    Tensor w_input;   // [4H, In]
    Tensor w_hidden;  // [4H, H]
    Tensor bias;      // [4H]
};

struct BiLstmParams {
    LstmDirection fwd, bwd;
};

struct AttentionParams {
    Tensor w;  // [F]: one scalar score per time step
};

struct ClassifierParams {
    Tensor weights;  // [1, F]
    Tensor bias;     // [1]
};

struct ModelParams {
    Variant variant = Variant::c2d_lstm_a;
    ModelGeometry geom;
    CnnEncoderParams cnn;
    BiLstmParams lstm;
    AttentionParams attn;
    ClassifierParams head;
    // Batchnorm on the per-frame features feeding the LSTM (LSTM variants only).
    Tensor feat_gamma, feat_beta;
    BatchNormState feat_bn;

    // Trainable tensors of the active variant, in a stable order.
    std::vector<Tensor> trainable();
};

// Glorot-uniform weights, forget-gate bias 1, attention weights zero.
ModelParams init_params(Variant v, const ModelGeometry& geom, unsigned seed);

struct RunContext {
    Mode mode = Mode::infer;
    double dropout_rate = 0.0;
    std::mt19937* rng = nullptr;  // required in train mode when dropout_rate > 0
};

// Per-frame raw scores, softmax weights, and min-max-normalized weights.
struct AttentionTrace {
    std::vector<double> scores;
    std::vector<double> weights;
    std::vector<double> normalized;
    // Argmax weight, smallest index on ties.
    long representative() const;
};

struct ForwardTensors {
    Tensor logit;    // [1]
    Tensor scores;   // [T]; zeros for C2D+LSTM
    Tensor weights;  // [T]; uniform 1/T for C2D+LSTM
};

// Per-frame CNN encoder applied to a frame batch [T,1,S,S] -> [T,feature_dim].
Tensor cnn_encode_frames(ComputationTape& tape, ModelParams& p, const Tensor& frames,
                         const RunContext& ctx);
// Single-frame convenience: [1,S,S] -> [feature_dim].
Tensor cnn_encode_frame(ComputationTape& tape, ModelParams& p, const Tensor& frame,
                        const RunContext& ctx);

// seq [T,In] -> [T,2H]; forward and backward per-step outputs concatenated.
Tensor bilstm(ComputationTape& tape, const BiLstmParams& p, const Tensor& seq);

// e_t = h_t . w  ;  h [T,F] -> [T]
Tensor attention_scores(ComputationTape& tape, const Tensor& h, const AttentionParams& w);
// (1/T) sum_t a_t h_t
Tensor attention_pool(ComputationTape& tape, const Tensor& h, const Tensor& a);

// clip [T,1,S,S] -> logit + attention tensors, on the tape.
ForwardTensors forward(ComputationTape& tape, ModelParams& p, const Tensor& clip,
                       const RunContext& ctx);

struct Prediction {
    double probability;
    AttentionTrace trace;
};

// Infer-mode forward; fills the full trace including min-max normalization.
Prediction predict(ModelParams& p, const Tensor& clip);

}  // namespace bline

#endif
