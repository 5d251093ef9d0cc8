#include "bline/model.hpp"

#include <cmath>
#include <cstring>

#include "bline/eval.hpp"

namespace bline {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::c2d_a: return "C2D+A";
        case Variant::c3d_a: return "C3D+A";
        case Variant::c2d_lstm: return "C2D+LSTM";
        case Variant::c2d_lstm_a: return "C2D+LSTM+A";
    }
    throw ShapeError("variant_name: invalid variant tag");
}

std::optional<Variant> parse_variant(const std::string& name) {
    if (name == "C2D+A") return Variant::c2d_a;
    if (name == "C3D+A") return Variant::c3d_a;
    if (name == "C2D+LSTM") return Variant::c2d_lstm;
    if (name == "C2D+LSTM+A") return Variant::c2d_lstm_a;
    return std::nullopt;
}

namespace {

Tensor glorot(std::vector<long> shape, long fan_in, long fan_out, std::mt19937& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t.values()[i] = u(rng);
    t.set_requires_grad(true);
    return t;
}

Tensor constant(std::vector<long> shape, double v) {
    Tensor t(std::move(shape));
    t.values().setConstant(v);
    t.set_requires_grad(true);
    return t;
}

// [C,T,h,w] -> [T, C*h*w]: per-step feature rows for the C3D path.
Tensor time_major(ComputationTape& tape, const Tensor& x) {
    const long c = x.extent(0), t = x.extent(1), plane = x.extent(2) * x.extent(3);
    Tensor out({t, c * plane});
    for (long ch = 0; ch < c; ++ch)
        for (long ts = 0; ts < t; ++ts)
            std::memcpy(out.data() + ts * c * plane + ch * plane,
                        x.data() + (ch * t + ts) * plane, sizeof(double) * plane);
    Tensor xt = x, o = out;
    tape.record(out, {x}, [xt, o, c, t, plane]() mutable {
        if (!xt.requires_grad()) return;
        for (long ch = 0; ch < c; ++ch)
            for (long ts = 0; ts < t; ++ts) {
                double* dst = xt.grad().data() + (ch * t + ts) * plane;
                const double* src = o.grad().data() + ts * c * plane + ch * plane;
                for (long i = 0; i < plane; ++i) dst[i] += src[i];
            }
    });
    return out;
}

}  // namespace

std::vector<Tensor> ModelParams::trainable() {
    std::vector<Tensor> out;
    for (ConvBlock& cb : cnn.conv) {
        out.push_back(cb.kernels);
        out.push_back(cb.bias);
        out.push_back(cb.gamma);
        out.push_back(cb.beta);
    }
    out.push_back(cnn.fc_weights);
    out.push_back(cnn.fc_bias);
    if (variant_has_lstm(variant)) {
        out.push_back(feat_gamma);
        out.push_back(feat_beta);
        for (LstmDirection* d : {&lstm.fwd, &lstm.bwd}) {
            out.push_back(d->w_input);
            out.push_back(d->w_hidden);
            out.push_back(d->bias);
        }
    }
    if (variant_has_attention(variant)) out.push_back(attn.w);
    out.push_back(head.weights);
    out.push_back(head.bias);
    return out;
}

ModelParams init_params(Variant v, const ModelGeometry& geom, unsigned seed) {
    std::mt19937 rng(seed);
    ModelParams p;
    p.variant = v;
    p.geom = geom;

    const bool volumetric = v == Variant::c3d_a;
    long ci = 1;
    for (int l = 0; l < 4; ++l) {
        const long co = geom.channels[static_cast<size_t>(l)];
        const long taps = volumetric ? 27 : 9;
        ConvBlock& cb = p.cnn.conv[static_cast<size_t>(l)];
        cb.kernels = volumetric ? glorot({co, ci, 3, 3, 3}, ci * taps, co * taps, rng)
                                : glorot({co, ci, 3, 3}, ci * taps, co * taps, rng);
        cb.bias = constant({co}, 0.0);
        cb.gamma = constant({co}, 1.0);
        cb.beta = constant({co}, 0.0);
        cb.bn = BatchNormState(co);
        ci = co;
    }
    p.cnn.fc_weights = glorot({geom.feature_dim, geom.flat_dim()}, geom.flat_dim(), geom.feature_dim, rng);
    p.cnn.fc_bias = constant({geom.feature_dim}, 0.0);

    const long h = geom.hidden_size, f = geom.feature_dim;
    for (LstmDirection* d : {&p.lstm.fwd, &p.lstm.bwd}) {
        d->w_input = glorot({4 * h, f}, f, 4 * h, rng);
        d->w_hidden = glorot({4 * h, h}, h, 4 * h, rng);
        d->bias = constant({4 * h}, 0.0);
        // forget-gate block starts at H
        for (long i = h; i < 2 * h; ++i) d->bias.values()[i] = 1.0;
    }
    p.feat_gamma = constant({f}, 1.0);
    p.feat_beta = constant({f}, 0.0);
    p.feat_bn = BatchNormState(f);

    p.attn.w = constant({geom.pooled_dim(v)}, 0.0);  // starts from uniform attention
    const long pd = geom.pooled_dim(v);
    p.head.weights = glorot({1, pd}, pd, 1, rng);
    p.head.bias = constant({1}, 0.0);
    return p;
}

Tensor cnn_encode_frames(ComputationTape& tape, ModelParams& p, const Tensor& frames,
                         const RunContext& ctx) {
    if (frames.rank() != 4 || frames.extent(1) != 1 || frames.extent(2) != p.geom.frame_size ||
        frames.extent(3) != p.geom.frame_size)
        throw ShapeError("cnn_encode_frames: expected [T,1," + std::to_string(p.geom.frame_size) +
                         "," + std::to_string(p.geom.frame_size) + "], got " + shape_str(frames.shape()));
    const long t = frames.extent(0);
    Tensor x = frames;
    for (int l = 0; l < 4; ++l) {
        ConvBlock& cb = p.cnn.conv[static_cast<size_t>(l)];
        x = conv2d(tape, x, cb.kernels, cb.bias);
        x = batchnorm(tape, x, cb.gamma, cb.beta, cb.bn, ctx.mode, 1);
        x = elementwise(tape, Activation::relu, x);
        if (l == 1 || l == 3) x = maxpool2d(tape, x);
    }
    x = reshape(tape, x, {t, p.geom.flat_dim()});
    return dense(tape, x, p.cnn.fc_weights, p.cnn.fc_bias);
}

Tensor cnn_encode_frame(ComputationTape& tape, ModelParams& p, const Tensor& frame,
                        const RunContext& ctx) {
    if (frame.rank() != 3 || frame.extent(0) != 1)
        throw ShapeError("cnn_encode_frame: expected [1,S,S], got " + shape_str(frame.shape()));
    Tensor batch = reshape(tape, frame, {1, 1, frame.extent(1), frame.extent(2)});
    Tensor feats = cnn_encode_frames(tape, p, batch, ctx);
    return reshape(tape, feats, {p.geom.feature_dim});
}

namespace {

std::vector<Tensor> lstm_direction(ComputationTape& tape, const LstmDirection& d,
                                   const Tensor& seq, bool reversed) {
    const long t = seq.extent(0);
    const long h = d.w_hidden.extent(1);
    std::vector<Tensor> outputs(static_cast<size_t>(t));
    Tensor hid = Tensor::zeros({h});
    Tensor cell = Tensor::zeros({h});
    for (long step = 0; step < t; ++step) {
        const long idx = reversed ? t - 1 - step : step;
        Tensor x = row(tape, seq, idx);
        Tensor z = add(tape, dense(tape, x, d.w_input, d.bias), linear(tape, hid, d.w_hidden));
        Tensor gi = elementwise(tape, Activation::sigmoid, slice1d(tape, z, 0, h));
        Tensor gf = elementwise(tape, Activation::sigmoid, slice1d(tape, z, h, h));
        Tensor gc = elementwise(tape, Activation::tanh, slice1d(tape, z, 2 * h, h));
        Tensor go = elementwise(tape, Activation::sigmoid, slice1d(tape, z, 3 * h, h));
        cell = add(tape, mul(tape, gf, cell), mul(tape, gi, gc));
        hid = mul(tape, go, elementwise(tape, Activation::tanh, cell));
        outputs[static_cast<size_t>(idx)] = hid;
    }
    return outputs;
}

}  // namespace

Tensor bilstm(ComputationTape& tape, const BiLstmParams& p, const Tensor& seq) {
    if (seq.rank() != 2) throw ShapeError("bilstm: expected [T,F], got " + shape_str(seq.shape()));
    if (seq.extent(1) != p.fwd.w_input.extent(1))
        throw ShapeError("bilstm: input width " + std::to_string(seq.extent(1)) +
                         " does not match weights " + shape_str(p.fwd.w_input.shape()));
    auto f = lstm_direction(tape, p.fwd, seq, false);
    auto b = lstm_direction(tape, p.bwd, seq, true);
    std::vector<Tensor> rows;
    rows.reserve(f.size());
    for (size_t i = 0; i < f.size(); ++i) rows.push_back(concat1d(tape, f[i], b[i]));
    return stack_rows(tape, rows);
}

Tensor attention_scores(ComputationTape& tape, const Tensor& h, const AttentionParams& w) {
    return matvec(tape, h, w.w);
}

Tensor attention_pool(ComputationTape& tape, const Tensor& h, const Tensor& a) {
    return weighted_mean_rows(tape, h, a);
}

ForwardTensors forward(ComputationTape& tape, ModelParams& p, const Tensor& clip,
                       const RunContext& ctx) {
    if (clip.rank() != 4 || clip.extent(1) != 1)
        throw ShapeError("forward: expected clip [T,1,S,S], got " + shape_str(clip.shape()));
    const long t = clip.extent(0);

    Tensor feats;  // [T, feature_dim]
    if (p.variant == Variant::c3d_a) {
        Tensor vol = reshape(tape, clip, {1, t, clip.extent(2), clip.extent(3)});
        Tensor x = vol;
        for (int l = 0; l < 4; ++l) {
            ConvBlock& cb = p.cnn.conv[static_cast<size_t>(l)];
            x = conv3d(tape, x, cb.kernels, cb.bias);
            x = batchnorm(tape, x, cb.gamma, cb.beta, cb.bn, ctx.mode, 0);
            x = elementwise(tape, Activation::relu, x);
            if (l == 1 || l == 3) x = maxpool2d(tape, x);
        }
        feats = dense(tape, time_major(tape, x), p.cnn.fc_weights, p.cnn.fc_bias);
    } else {
        feats = cnn_encode_frames(tape, p, clip, ctx);
    }

    if (ctx.mode == Mode::train && ctx.dropout_rate > 0.0) {
        if (!ctx.rng) throw ShapeError("forward: train-mode dropout needs an rng");
        feats = dropout(tape, feats, ctx.dropout_rate, ctx.mode, *ctx.rng);
    }

    Tensor h = feats;
    if (variant_has_lstm(p.variant)) {
        h = batchnorm(tape, h, p.feat_gamma, p.feat_beta, p.feat_bn, ctx.mode, 1);
        h = bilstm(tape, p.lstm, h);
    }

    ForwardTensors out;
    if (variant_has_attention(p.variant)) {
        out.scores = attention_scores(tape, h, p.attn);
        out.weights = softmax_over_time(tape, out.scores);
        Tensor pooled = attention_pool(tape, h, out.weights);
        out.logit = dense(tape, pooled, p.head.weights, p.head.bias);
    } else {
        // Uniform trace by convention so downstream tooling is total.
        out.scores = Tensor::zeros({t});
        out.weights = Tensor({t});
        out.weights.values().setConstant(1.0 / static_cast<double>(t));
        Tensor pooled = mean_rows(tape, h);
        out.logit = dense(tape, pooled, p.head.weights, p.head.bias);
    }
    return out;
}

long AttentionTrace::representative() const {
    long best = 0;
    for (size_t i = 1; i < weights.size(); ++i)
        if (weights[i] > weights[static_cast<size_t>(best)]) best = static_cast<long>(i);
    return best;
}

Prediction predict(ModelParams& p, const Tensor& clip) {
    ComputationTape tape;
    RunContext ctx{Mode::infer, 0.0, nullptr};
    ForwardTensors ft = forward(tape, p, clip, ctx);
    Prediction pr;
    pr.probability = sigmoid_value(ft.logit.item());
    const long t = ft.weights.size();
    pr.trace.scores.assign(ft.scores.data(), ft.scores.data() + t);
    pr.trace.weights.assign(ft.weights.data(), ft.weights.data() + t);
    pr.trace.normalized = minmax_normalize(pr.trace.weights);
    return pr;
}

}  // namespace bline
