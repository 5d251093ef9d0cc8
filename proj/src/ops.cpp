#include "bline/ops.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace bline {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using Vec = Eigen::VectorXd;

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// Patch matrix for one [Ci,H,W] image: rows Ci*9, cols Ho*Wo (row-major).
void im2col3x3(const double* img, long ci, long h, long w, MatRM& cols) {
    const long ho = h - 2, wo = w - 2;
    for (long c = 0; c < ci; ++c) {
        const double* plane = img + c * h * w;
        for (long u = 0; u < 3; ++u)
            for (long v = 0; v < 3; ++v) {
                double* dst = cols.data() + (c * 9 + u * 3 + v) * (ho * wo);
                for (long i = 0; i < ho; ++i)
                    std::memcpy(dst + i * wo, plane + (i + u) * w + v, sizeof(double) * wo);
            }
    }
}

}  // namespace

double sigmoid_value(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor conv2d(ComputationTape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    require(input.rank() == 3 || input.rank() == 4,
            "conv2d: input must be [Ci,H,W] or [N,Ci,H,W], got " + shape_str(input.shape()));
    const bool batched = input.rank() == 4;
    const long n = batched ? input.extent(0) : 1;
    const long ci = input.extent(batched ? 1 : 0);
    const long h = input.extent(batched ? 2 : 1);
    const long w = input.extent(batched ? 3 : 2);
    require(kernels.rank() == 4 && kernels.extent(2) == 3 && kernels.extent(3) == 3,
            "conv2d: kernels must be [Co,Ci,3,3], got " + shape_str(kernels.shape()));
    const long co = kernels.extent(0);
    require(kernels.extent(1) == ci,
            "conv2d: channel mismatch, input Ci=" + std::to_string(ci) +
                " vs kernels Ci=" + std::to_string(kernels.extent(1)));
    require(h >= 3 && w >= 3, "conv2d: spatial extents must be >= 3, got " + shape_str(input.shape()));
    require(bias.rank() == 1 && bias.extent(0) == co, "conv2d: bias must be [Co]");

    const long ho = h - 2, wo = w - 2, plane = ho * wo;
    Tensor out(batched ? std::vector<long>{n, co, ho, wo} : std::vector<long>{co, ho, wo});

    CMapRM kmat(kernels.data(), co, ci * 9);
    // Patch matrices are kept for the backward pass; recomputing them costs
    // more than the memory (a few hundred MB at full clip size, freed with
    // the tape).
    auto saved = std::make_shared<std::vector<MatRM>>();
    saved->reserve(static_cast<size_t>(n));
    for (long im = 0; im < n; ++im) {
        saved->emplace_back(ci * 9, plane);
        im2col3x3(input.data() + im * ci * h * w, ci, h, w, saved->back());
        MapRM omat(out.data() + im * co * plane, co, plane);
        omat.noalias() = kmat * saved->back();
        omat.colwise() += Eigen::Map<const Vec>(bias.data(), co);
    }

    Tensor in = input, k = kernels, b = bias, o = out;
    tape.record(out, {input, kernels, bias}, [in, k, b, o, saved, n, ci, co, h, w, ho, wo]() mutable {
        const long plane = ho * wo;
        CMapRM kmat(k.data(), co, ci * 9);
        // dX is a full correlation of the output gradient with the kernels
        // rotated 180 degrees: one GEMM over patches of the padded gradient
        // instead of a scalar scatter.
        MatRM krot;
        MatRM padded, pcols, xg;
        if (in.requires_grad()) {
            krot.resize(ci, co * 9);
            for (long c = 0; c < ci; ++c)
                for (long f = 0; f < co; ++f)
                    for (long u = 0; u < 3; ++u)
                        for (long v = 0; v < 3; ++v)
                            krot(c, f * 9 + (2 - u) * 3 + (2 - v)) =
                                k.data()[((f * ci + c) * 3 + u) * 3 + v];
            padded = MatRM::Zero(co * (ho + 4), wo + 4);
            pcols.resize(co * 9, h * w);
            xg.resize(ci, h * w);
        }
        for (long im = 0; im < n; ++im) {
            CMapRM og(o.grad().data() + im * co * plane, co, plane);
            if (k.requires_grad()) {
                MapRM kg(k.grad().data(), co, ci * 9);
                kg.noalias() += og * (*saved)[static_cast<size_t>(im)].transpose();
            }
            if (b.requires_grad())
                Eigen::Map<Vec>(b.grad().data(), co) += og.rowwise().sum();
            if (in.requires_grad()) {
                for (long f = 0; f < co; ++f)
                    for (long i = 0; i < ho; ++i)
                        std::memcpy(padded.data() + (f * (ho + 4) + i + 2) * (wo + 4) + 2,
                                    og.data() + (f * ho + i) * wo, sizeof(double) * wo);
                im2col3x3(padded.data(), co, ho + 4, wo + 4, pcols);
                xg.noalias() = krot * pcols;
                Eigen::Map<Eigen::ArrayXd>(in.grad().data() + im * ci * h * w, ci * h * w) +=
                    Eigen::Map<const Eigen::ArrayXd>(xg.data(), ci * h * w);
            }
        }
    });
    return out;
}

Tensor conv3d(ComputationTape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    require(input.rank() == 4, "conv3d: input must be [Ci,T,H,W], got " + shape_str(input.shape()));
    const long ci = input.extent(0), t = input.extent(1), h = input.extent(2), w = input.extent(3);
    require(kernels.rank() == 5 && kernels.extent(2) == 3 && kernels.extent(3) == 3 && kernels.extent(4) == 3,
            "conv3d: kernels must be [Co,Ci,3,3,3], got " + shape_str(kernels.shape()));
    const long co = kernels.extent(0);
    require(kernels.extent(1) == ci,
            "conv3d: channel mismatch, input Ci=" + std::to_string(ci) +
                " vs kernels Ci=" + std::to_string(kernels.extent(1)));
    require(h >= 3 && w >= 3, "conv3d: spatial extents must be >= 3");
    require(bias.rank() == 1 && bias.extent(0) == co, "conv3d: bias must be [Co]");

    const long ho = h - 2, wo = w - 2, plane = ho * wo;
    Tensor out({co, t, ho, wo});

    // Patch rows: ci*3 temporal taps * 9 spatial taps; temporal tap kt reads
    // frame ts+kt-1, zero outside [0,t).
    CMapRM kmat(kernels.data(), co, ci * 27);
    MatRM cols(ci * 27, plane);
    auto fill_cols = [&](const Tensor& x, long ts) {
        for (long c = 0; c < ci; ++c)
            for (long kt = 0; kt < 3; ++kt) {
                const long tf = ts + kt - 1;
                double* block = cols.data() + (c * 27 + kt * 9) * plane;
                if (tf < 0 || tf >= t) {
                    std::memset(block, 0, sizeof(double) * 9 * plane);
                    continue;
                }
                const double* frame = x.data() + (c * t + tf) * h * w;
                for (long u = 0; u < 3; ++u)
                    for (long v = 0; v < 3; ++v) {
                        double* dst = block + (u * 3 + v) * plane;
                        for (long i = 0; i < ho; ++i)
                            std::memcpy(dst + i * wo, frame + (i + u) * w + v, sizeof(double) * wo);
                    }
            }
    };

    MatRM omat(co, plane);
    for (long ts = 0; ts < t; ++ts) {
        fill_cols(input, ts);
        omat.noalias() = kmat * cols;
        omat.colwise() += Eigen::Map<const Vec>(bias.data(), co);
        for (long c = 0; c < co; ++c)
            std::memcpy(out.data() + (c * t + ts) * plane, omat.data() + c * plane, sizeof(double) * plane);
    }

    Tensor in = input, k = kernels, b = bias, o = out;
    tape.record(out, {input, kernels, bias}, [in, k, b, o, ci, co, t, h, w, ho, wo]() mutable {
        const long plane = ho * wo;
        MatRM cols(ci * 27, plane);
        MatRM og(co, plane);
        MatRM cgrad(ci * 27, plane);
        CMapRM kmat(k.data(), co, ci * 27);
        for (long ts = 0; ts < t; ++ts) {
            for (long c = 0; c < co; ++c)
                std::memcpy(og.data() + c * plane, o.grad().data() + (c * t + ts) * plane,
                            sizeof(double) * plane);
            if (k.requires_grad() || b.requires_grad()) {
                // rebuild patches for this output frame
                for (long c = 0; c < ci; ++c)
                    for (long kt = 0; kt < 3; ++kt) {
                        const long tf = ts + kt - 1;
                        double* block = cols.data() + (c * 27 + kt * 9) * plane;
                        if (tf < 0 || tf >= t) {
                            std::memset(block, 0, sizeof(double) * 9 * plane);
                            continue;
                        }
                        const double* frame = in.data() + (c * t + tf) * h * w;
                        for (long u = 0; u < 3; ++u)
                            for (long v = 0; v < 3; ++v) {
                                double* dst = block + (u * 3 + v) * plane;
                                for (long i = 0; i < ho; ++i)
                                    std::memcpy(dst + i * wo, frame + (i + u) * w + v,
                                                sizeof(double) * wo);
                            }
                    }
                if (k.requires_grad()) {
                    MapRM kg(k.grad().data(), co, ci * 27);
                    kg.noalias() += og * cols.transpose();
                }
                if (b.requires_grad())
                    Eigen::Map<Vec>(b.grad().data(), co) += og.rowwise().sum();
            }
            if (in.requires_grad()) {
                cgrad.noalias() = kmat.transpose() * og;
                for (long c = 0; c < ci; ++c)
                    for (long kt = 0; kt < 3; ++kt) {
                        const long tf = ts + kt - 1;
                        if (tf < 0 || tf >= t) continue;
                        double* frame = in.grad().data() + (c * t + tf) * h * w;
                        const double* block = cgrad.data() + (c * 27 + kt * 9) * plane;
                        for (long u = 0; u < 3; ++u)
                            for (long v = 0; v < 3; ++v) {
                                const double* src = block + (u * 3 + v) * plane;
                                for (long i = 0; i < ho; ++i) {
                                    double* prow = frame + (i + u) * w + v;
                                    const double* srow = src + i * wo;
                                    for (long j = 0; j < wo; ++j) prow[j] += srow[j];
                                }
                            }
                    }
            }
        }
    });
    return out;
}

Tensor maxpool2d(ComputationTape& tape, const Tensor& input) {
    require(input.rank() >= 3, "maxpool2d: input rank must be >= 3, got " + shape_str(input.shape()));
    const long h = input.extent(input.rank() - 2), w = input.extent(input.rank() - 1);
    require(h >= 2 && w >= 2, "maxpool2d: spatial extents must be >= 2, got " + shape_str(input.shape()));
    long lead = 1;
    std::vector<long> oshape;
    for (long a = 0; a < input.rank() - 2; ++a) {
        lead *= input.extent(a);
        oshape.push_back(input.extent(a));
    }
    const long ho = h / 2, wo = w / 2;
    oshape.push_back(ho);
    oshape.push_back(wo);

    Tensor out(oshape);
    auto argmax = std::make_shared<std::vector<long>>(static_cast<size_t>(lead * ho * wo));
    const double* x = input.data();
    double* y = out.data();
    for (long p = 0; p < lead; ++p) {
        const double* plane = x + p * h * w;
        for (long i = 0; i < ho; ++i)
            for (long j = 0; j < wo; ++j) {
                long best = (2 * i) * w + 2 * j;
                double bv = plane[best];
                const long cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                      (2 * i + 1) * w + 2 * j + 1};
                for (long c : cand)
                    if (plane[c] > bv) {
                        bv = plane[c];
                        best = c;
                    }
                const long oi = p * ho * wo + i * wo + j;
                y[oi] = bv;
                (*argmax)[static_cast<size_t>(oi)] = p * h * w + best;
            }
    }

    Tensor in = input, o = out;
    tape.record(out, {input}, [in, o, argmax]() mutable {
        if (!in.requires_grad()) return;
        Array& g = in.grad();
        const Array& og = o.grad();
        for (long i = 0; i < og.size(); ++i) g[(*argmax)[static_cast<size_t>(i)]] += og[i];
    });
    return out;
}

Tensor elementwise(ComputationTape& tape, Activation kind, const Tensor& input) {
    Tensor out(input.shape());
    switch (kind) {
        case Activation::relu:
            out.values() = input.values().max(0.0);
            break;
        case Activation::tanh:
            out.values() = input.values().tanh();
            break;
        case Activation::sigmoid:
            out.values() = 0.5 * (0.5 * input.values()).tanh() + 0.5;
            break;
    }
    Tensor in = input, o = out;
    tape.record(out, {input}, [in, o, kind]() mutable {
        if (!in.requires_grad()) return;
        switch (kind) {
            case Activation::relu:
                in.grad() += o.grad() * (in.values() > 0.0).cast<double>();
                break;
            case Activation::tanh:
                in.grad() += o.grad() * (1.0 - o.values().square());
                break;
            case Activation::sigmoid:
                in.grad() += o.grad() * o.values() * (1.0 - o.values());
                break;
        }
    });
    return out;
}

Tensor dense(ComputationTape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require(weights.rank() == 2, "dense: weights must be [Dout,Din]");
    const long dout = weights.extent(0), din = weights.extent(1);
    require(bias.rank() == 1 && bias.extent(0) == dout, "dense: bias must be [Dout]");
    require(input.rank() == 1 || input.rank() == 2, "dense: input must be [Din] or [B,Din]");
    const bool batched = input.rank() == 2;
    const long b = batched ? input.extent(0) : 1;
    require(input.extent(batched ? 1 : 0) == din,
            "dense: inner extent mismatch, input " + shape_str(input.shape()) + " vs weights " +
                shape_str(weights.shape()));

    Tensor out(batched ? std::vector<long>{b, dout} : std::vector<long>{dout});
    CMapRM xm(input.data(), b, din);
    CMapRM wm(weights.data(), dout, din);
    MapRM ym(out.data(), b, dout);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Vec>(bias.data(), dout).transpose();

    Tensor in = input, wt = weights, bt = bias, o = out;
    tape.record(out, {input, weights, bias}, [in, wt, bt, o, b, din, dout]() mutable {
        CMapRM og(o.grad().data(), b, dout);
        if (wt.requires_grad()) {
            CMapRM xm(in.data(), b, din);
            MapRM wg(wt.grad().data(), dout, din);
            wg.noalias() += og.transpose() * xm;
        }
        if (bt.requires_grad())
            Eigen::Map<Vec>(bt.grad().data(), dout) += og.colwise().sum().transpose();
        if (in.requires_grad()) {
            CMapRM wm(wt.data(), dout, din);
            MapRM xg(in.grad().data(), b, din);
            xg.noalias() += og * wm;
        }
    });
    return out;
}

Tensor linear(ComputationTape& tape, const Tensor& input, const Tensor& weights) {
    require(weights.rank() == 2, "linear: weights must be [Dout,Din]");
    const long dout = weights.extent(0), din = weights.extent(1);
    require(input.rank() == 1 && input.extent(0) == din,
            "linear: input " + shape_str(input.shape()) + " vs weights " + shape_str(weights.shape()));
    Tensor out({dout});
    CMapRM wm(weights.data(), dout, din);
    Eigen::Map<Vec>(out.data(), dout).noalias() = wm * Eigen::Map<const Vec>(input.data(), din);

    Tensor in = input, wt = weights, o = out;
    tape.record(out, {input, weights}, [in, wt, o, din, dout]() mutable {
        Eigen::Map<const Vec> og(o.grad().data(), dout);
        if (wt.requires_grad()) {
            MapRM wg(wt.grad().data(), dout, din);
            wg.noalias() += og * Eigen::Map<const Vec>(in.data(), din).transpose();
        }
        if (in.requires_grad()) {
            CMapRM wm(wt.data(), dout, din);
            Eigen::Map<Vec>(in.grad().data(), din).noalias() += wm.transpose() * og;
        }
    });
    return out;
}

Tensor softmax_over_time(ComputationTape& tape, const Tensor& scores) {
    require(scores.rank() == 1 && scores.size() >= 1, "softmax_over_time: scores must be [T], T >= 1");
    Tensor out({scores.size()});
    const double m = scores.values().maxCoeff();
    out.values() = (scores.values() - m).exp();
    out.values() /= out.values().sum();

    Tensor in = scores, o = out;
    tape.record(out, {scores}, [in, o]() mutable {
        if (!in.requires_grad()) return;
        const double dot = (o.grad() * o.values()).sum();
        in.grad() += o.values() * (o.grad() - dot);
    });
    return out;
}

Tensor batchnorm(ComputationTape& tape, const Tensor& input, const Tensor& gamma,
                 const Tensor& beta, BatchNormState& state, Mode mode, long channel_axis) {
    require(channel_axis >= 0 && channel_axis < input.rank(), "batchnorm: bad channel axis");
    const long c = input.extent(channel_axis);
    require(gamma.rank() == 1 && gamma.extent(0) == c, "batchnorm: gamma must be [C]");
    require(beta.rank() == 1 && beta.extent(0) == c, "batchnorm: beta must be [C]");
    require(state.running_mean.size() == c, "batchnorm: state size mismatch");
    long outer = 1, inner = 1;
    for (long a = 0; a < channel_axis; ++a) outer *= input.extent(a);
    for (long a = channel_axis + 1; a < input.rank(); ++a) inner *= input.extent(a);
    const long m = outer * inner;  // reduction count per channel
    if (mode == Mode::train)
        require(m >= 2, "batchnorm: train mode needs a batch extent >= 2, got " +
                            shape_str(input.shape()));

    // Normalization always uses the statistics of the current batch, which here
    // is a single clip: training batches one clip per tape, so the network only
    // ever sees per-clip moments and evaluating against cross-clip running
    // averages shifts every activation. Running moments are still tracked in
    // train mode as a diagnostic.
    auto mean = std::make_shared<Array>(c);
    auto istd = std::make_shared<Array>(c);
    const double eps = state.eps;
    for (long ch = 0; ch < c; ++ch) {
        double s = 0, s2 = 0;
        for (long o = 0; o < outer; ++o) {
            const double* blk = input.data() + (o * c + ch) * inner;
            for (long i = 0; i < inner; ++i) {
                s += blk[i];
                s2 += blk[i] * blk[i];
            }
        }
        const double mu = s / static_cast<double>(m);
        const double var = std::max(0.0, s2 / static_cast<double>(m) - mu * mu);
        (*mean)[ch] = mu;
        (*istd)[ch] = 1.0 / std::sqrt(var + eps);
        if (mode == Mode::train) {
            state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1 - state.momentum) * mu;
            state.running_var[ch] = state.momentum * state.running_var[ch] + (1 - state.momentum) * var;
        }
    }

    Tensor out(input.shape());
    for (long ch = 0; ch < c; ++ch) {
        const double mu = (*mean)[ch], is = (*istd)[ch];
        const double g = gamma.values()[ch], bb = beta.values()[ch];
        for (long o = 0; o < outer; ++o) {
            const double* xb = input.data() + (o * c + ch) * inner;
            double* yb = out.data() + (o * c + ch) * inner;
            for (long i = 0; i < inner; ++i) yb[i] = g * (xb[i] - mu) * is + bb;
        }
    }

    Tensor in = input, gt = gamma, bt = beta, o = out;
    tape.record(out, {input, gamma, beta}, [in, gt, bt, o, mean, istd, c, outer, inner]() mutable {
        const long m = outer * inner;
        for (long ch = 0; ch < c; ++ch) {
            const double mu = (*mean)[ch], is = (*istd)[ch], g = gt.values()[ch];
            double sum_dy = 0, sum_dy_xhat = 0;
            for (long ot = 0; ot < outer; ++ot) {
                const double* xb = in.data() + (ot * c + ch) * inner;
                const double* dyb = o.grad().data() + (ot * c + ch) * inner;
                for (long i = 0; i < inner; ++i) {
                    sum_dy += dyb[i];
                    sum_dy_xhat += dyb[i] * (xb[i] - mu) * is;
                }
            }
            if (gt.requires_grad()) gt.grad()[ch] += sum_dy_xhat;
            if (bt.requires_grad()) bt.grad()[ch] += sum_dy;
            if (!in.requires_grad()) continue;
            for (long ot = 0; ot < outer; ++ot) {
                const double* xb = in.data() + (ot * c + ch) * inner;
                const double* dyb = o.grad().data() + (ot * c + ch) * inner;
                double* dxb = in.grad().data() + (ot * c + ch) * inner;
                const double md = static_cast<double>(m);
                for (long i = 0; i < inner; ++i) {
                    const double xhat = (xb[i] - mu) * is;
                    dxb[i] += g * is * (dyb[i] - sum_dy / md - xhat * sum_dy_xhat / md);
                }
            }
        }
    });
    return out;
}

Tensor dropout(ComputationTape& tape, const Tensor& input, double rate, Mode mode, std::mt19937& rng) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (mode == Mode::infer || rate == 0.0) {
        Tensor out(input.shape());
        out.values() = input.values();
        Tensor in = input, o = out;
        tape.record(out, {input}, [in, o]() mutable {
            if (in.requires_grad()) in.grad() += o.grad();
        });
        return out;
    }
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<Array>(input.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (long i = 0; i < input.size(); ++i) (*mask)[i] = u(rng) < rate ? 0.0 : 1.0 / keep;

    Tensor out(input.shape());
    out.values() = input.values() * (*mask);
    Tensor in = input, o = out;
    tape.record(out, {input}, [in, o, mask]() mutable {
        if (in.requires_grad()) in.grad() += o.grad() * (*mask);
    });
    return out;
}

Tensor matvec(ComputationTape& tape, const Tensor& h, const Tensor& w) {
    require(h.rank() == 2, "matvec: h must be [T,F]");
    const long t = h.extent(0), f = h.extent(1);
    require(w.rank() == 1 && w.extent(0) == f,
            "matvec: dimension mismatch, h " + shape_str(h.shape()) + " vs w " + shape_str(w.shape()));
    Tensor out({t});
    CMapRM hm(h.data(), t, f);
    Eigen::Map<Vec>(out.data(), t).noalias() = hm * Eigen::Map<const Vec>(w.data(), f);

    Tensor ht = h, wt = w, o = out;
    tape.record(out, {h, w}, [ht, wt, o, t, f]() mutable {
        Eigen::Map<const Vec> og(o.grad().data(), t);
        if (ht.requires_grad()) {
            MapRM hg(ht.grad().data(), t, f);
            hg.noalias() += og * Eigen::Map<const Vec>(wt.data(), f).transpose();
        }
        if (wt.requires_grad()) {
            CMapRM hm(ht.data(), t, f);
            Eigen::Map<Vec>(wt.grad().data(), f).noalias() += hm.transpose() * og;
        }
    });
    return out;
}

Tensor weighted_mean_rows(ComputationTape& tape, const Tensor& h, const Tensor& a) {
    require(h.rank() == 2, "weighted_mean_rows: h must be [T,F]");
    const long t = h.extent(0), f = h.extent(1);
    require(a.rank() == 1 && a.extent(0) == t,
            "weighted_mean_rows: length mismatch, h " + shape_str(h.shape()) + " vs a " +
                shape_str(a.shape()));
    Tensor out({f});
    CMapRM hm(h.data(), t, f);
    const double inv_t = 1.0 / static_cast<double>(t);
    Eigen::Map<Vec>(out.data(), f).noalias() = inv_t * (hm.transpose() * Eigen::Map<const Vec>(a.data(), t));

    Tensor ht = h, at = a, o = out;
    tape.record(out, {h, a}, [ht, at, o, t, f, inv_t]() mutable {
        Eigen::Map<const Vec> og(o.grad().data(), f);
        if (ht.requires_grad()) {
            MapRM hg(ht.grad().data(), t, f);
            hg.noalias() += inv_t * (Eigen::Map<const Vec>(at.data(), t) * og.transpose());
        }
        if (at.requires_grad()) {
            CMapRM hm(ht.data(), t, f);
            Eigen::Map<Vec>(at.grad().data(), t).noalias() += inv_t * (hm * og);
        }
    });
    return out;
}

Tensor mean_rows(ComputationTape& tape, const Tensor& h) {
    require(h.rank() == 2, "mean_rows: h must be [T,F]");
    const long t = h.extent(0), f = h.extent(1);
    Tensor out({f});
    CMapRM hm(h.data(), t, f);
    Eigen::Map<Vec>(out.data(), f) = hm.colwise().mean().transpose();

    Tensor ht = h, o = out;
    tape.record(out, {h}, [ht, o, t, f]() mutable {
        if (!ht.requires_grad()) return;
        MapRM hg(ht.grad().data(), t, f);
        hg.rowwise() += (o.grad() / static_cast<double>(t)).matrix().transpose();
    });
    return out;
}

Tensor row(ComputationTape& tape, const Tensor& h, long t) {
    require(h.rank() == 2, "row: input must be [T,F]");
    require(t >= 0 && t < h.extent(0), "row: index out of range");
    const long f = h.extent(1);
    Tensor out({f});
    std::memcpy(out.data(), h.data() + t * f, sizeof(double) * f);
    Tensor ht = h, o = out;
    tape.record(out, {h}, [ht, o, t, f]() mutable {
        if (!ht.requires_grad()) return;
        Eigen::Map<Vec>(ht.grad().data() + t * f, f) += o.grad().matrix();
    });
    return out;
}

Tensor stack_rows(ComputationTape& tape, const std::vector<Tensor>& rows) {
    require(!rows.empty(), "stack_rows: need at least one row");
    const long f = rows[0].size();
    for (const Tensor& r : rows)
        require(r.rank() == 1 && r.size() == f, "stack_rows: rows must share length");
    const long t = static_cast<long>(rows.size());
    Tensor out({t, f});
    for (long i = 0; i < t; ++i)
        std::memcpy(out.data() + i * f, rows[static_cast<size_t>(i)].data(), sizeof(double) * f);
    auto rs = std::make_shared<std::vector<Tensor>>(rows);
    Tensor o = out;
    tape.record(out, rows, [rs, o, f]() mutable {
        for (size_t i = 0; i < rs->size(); ++i) {
            Tensor& r = (*rs)[i];
            if (r.requires_grad())
                r.grad() += Eigen::Map<const Array>(o.grad().data() + static_cast<long>(i) * f, f);
        }
    });
    return out;
}

Tensor concat1d(ComputationTape& tape, const Tensor& a, const Tensor& b) {
    require(a.rank() == 1 && b.rank() == 1, "concat1d: inputs must be rank 1");
    const long na = a.size(), nb = b.size();
    Tensor out({na + nb});
    std::memcpy(out.data(), a.data(), sizeof(double) * na);
    std::memcpy(out.data() + na, b.data(), sizeof(double) * nb);
    Tensor at = a, bt = b, o = out;
    tape.record(out, {a, b}, [at, bt, o, na, nb]() mutable {
        if (at.requires_grad()) at.grad() += Eigen::Map<const Array>(o.grad().data(), na);
        if (bt.requires_grad()) bt.grad() += Eigen::Map<const Array>(o.grad().data() + na, nb);
    });
    return out;
}

Tensor slice1d(ComputationTape& tape, const Tensor& x, long start, long len) {
    require(x.rank() == 1, "slice1d: input must be rank 1");
    require(start >= 0 && len >= 1 && start + len <= x.size(), "slice1d: range out of bounds");
    Tensor out({len});
    std::memcpy(out.data(), x.data() + start, sizeof(double) * len);
    Tensor xt = x, o = out;
    tape.record(out, {x}, [xt, o, start, len]() mutable {
        if (xt.requires_grad())
            Eigen::Map<Array>(xt.grad().data() + start, len) += o.grad();
    });
    return out;
}

Tensor add(ComputationTape& tape, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    out.values() = a.values() + b.values();
    Tensor at = a, bt = b, o = out;
    tape.record(out, {a, b}, [at, bt, o]() mutable {
        if (at.requires_grad()) at.grad() += o.grad();
        if (bt.requires_grad()) bt.grad() += o.grad();
    });
    return out;
}

Tensor mul(ComputationTape& tape, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    out.values() = a.values() * b.values();
    Tensor at = a, bt = b, o = out;
    tape.record(out, {a, b}, [at, bt, o]() mutable {
        if (at.requires_grad()) at.grad() += o.grad() * bt.values();
        if (bt.requires_grad()) bt.grad() += o.grad() * at.values();
    });
    return out;
}

Tensor scale(ComputationTape& tape, const Tensor& a, double c) {
    Tensor out(a.shape());
    out.values() = a.values() * c;
    Tensor at = a, o = out;
    tape.record(out, {a}, [at, o, c]() mutable {
        if (at.requires_grad()) at.grad() += o.grad() * c;
    });
    return out;
}

Tensor sum(ComputationTape& tape, const Tensor& a) {
    Tensor out({1});
    out.values()[0] = a.values().sum();
    Tensor at = a, o = out;
    tape.record(out, {a}, [at, o]() mutable {
        if (at.requires_grad()) at.grad() += o.grad()[0];
    });
    return out;
}

Tensor reshape(ComputationTape& tape, const Tensor& a, std::vector<long> shape) {
    require(shape_product(shape) == a.size(),
            "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape));
    out.values() = a.values();
    Tensor at = a, o = out;
    tape.record(out, {a}, [at, o]() mutable {
        if (at.requires_grad()) at.grad() += o.grad();
    });
    return out;
}

Tensor bce_with_logits(ComputationTape& tape, const Tensor& logit, double label) {
    require(logit.size() == 1, "bce_with_logits: logit must be scalar");
    require(label == 0.0 || label == 1.0, "bce_with_logits: label must be 0 or 1");
    const double l = logit.values()[0];
    Tensor out({1});
    // softplus(l) - y*l, with softplus computed from -|l| to avoid overflow
    out.values()[0] = std::max(l, 0.0) - label * l + std::log1p(std::exp(-std::abs(l)));
    Tensor lt = logit, o = out;
    tape.record(out, {logit}, [lt, o, label]() mutable {
        if (lt.requires_grad())
            lt.grad()[0] += o.grad()[0] * (sigmoid_value(lt.values()[0]) - label);
    });
    return out;
}

double bce_loss(std::span<const double> probabilities, std::span<const double> labels) {
    if (probabilities.size() != labels.size())
        throw ShapeError("bce_loss: length mismatch, " + std::to_string(probabilities.size()) +
                         " probabilities vs " + std::to_string(labels.size()) + " labels");
    if (probabilities.empty()) throw ShapeError("bce_loss: empty batch");
    double s = 0;
    for (size_t i = 0; i < probabilities.size(); ++i) {
        const double p = probabilities[i], y = labels[i];
        s += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return -s / static_cast<double>(probabilities.size());
}

}  // namespace bline
