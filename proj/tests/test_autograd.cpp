#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "bline/adam.hpp"
#include "bline/gradcheck.hpp"
#include "bline/ops.hpp"
#include "oracles.hpp"

using namespace bline;

namespace {

std::vector<double> random_vec(long n, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = u(rng);
    return v;
}

std::vector<double> to_vec(const Tensor& t) {
    return {t.data(), t.data() + t.size()};
}

}  // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.grad().size() == 6);
}

TEST_CASE("conv2d trivial cases") {
    ComputationTape tape;
    std::mt19937 rng(1);
    Tensor zero({1, 3, 3});
    Tensor k({1, 1, 3, 3}, random_vec(9, rng));
    Tensor b({1});
    Tensor out = conv2d(tape, zero, k, b);
    CHECK(out.shape() == std::vector<long>{1, 1, 1});
    CHECK(out.item() == 0.0);

    // delta at center sifts out the kernel's center weight
    Tensor delta({1, 3, 3});
    delta.values()[4] = 1.0;
    CHECK(conv2d(tape, delta, k, b).item() == doctest::Approx(k.values()[4]).epsilon(1e-15));
}

TEST_CASE("conv2d shape errors") {
    ComputationTape tape;
    Tensor x({2, 8, 8});
    Tensor k({4, 3, 3, 3});  // Ci mismatch
    Tensor b({4});
    CHECK_THROWS_AS(conv2d(tape, x, k, b), ShapeError);
    Tensor small({1, 2, 2});
    Tensor k1({1, 1, 3, 3});
    Tensor b1({1});
    CHECK_THROWS_AS(conv2d(tape, small, k1, b1), ShapeError);
}

TEST_CASE("conv2d matches nested-loop oracle") {
    std::mt19937 rng(42);
    for (int trial = 0; trial < 120; ++trial) {
        std::uniform_int_distribution<long> dim(3, 9), chan(1, 4);
        const long ci = chan(rng), co = chan(rng), h = dim(rng), w = dim(rng);
        Tensor x({ci, h, w}, random_vec(ci * h * w, rng));
        Tensor k({co, ci, 3, 3}, random_vec(co * ci * 9, rng));
        Tensor b({co}, random_vec(co, rng));
        ComputationTape tape;
        Tensor out = conv2d(tape, x, k, b);
        auto want = oracle::conv2d(to_vec(x), ci, h, w, to_vec(k), co, to_vec(b));
        for (long i = 0; i < out.size(); ++i)
            CHECK(out.values()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("conv3d degenerate and oracle cases") {
    std::mt19937 rng(7);
    // all-zero input
    {
        ComputationTape tape;
        Tensor x({1, 2, 4, 4});
        Tensor k({2, 1, 3, 3, 3}, random_vec(54, rng));
        Tensor b({2});
        Tensor out = conv3d(tape, x, k, b);
        CHECK(out.shape() == std::vector<long>{2, 2, 2, 2});
        CHECK(out.values().abs().maxCoeff() == 0.0);
    }
    // T=1 with zero outer temporal slices reduces to conv2d of the center slice
    {
        Tensor x({1, 1, 5, 5}, random_vec(25, rng));
        Tensor k3({1, 1, 3, 3, 3});
        Tensor k2({1, 1, 3, 3}, random_vec(9, rng));
        for (long u = 0; u < 3; ++u)
            for (long v = 0; v < 3; ++v) k3.values()[(1 * 3 + u) * 3 + v] = k2.values()[u * 3 + v];
        Tensor b({1});
        ComputationTape tape;
        Tensor o3 = conv3d(tape, x, k3, b);
        Tensor x2({1, 5, 5}, to_vec(x));
        Tensor o2 = conv2d(tape, x2, k2, b);
        for (long i = 0; i < o2.size(); ++i)
            CHECK(o3.values()[i] == doctest::Approx(o2.values()[i]).epsilon(1e-15));
    }
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<long> dim(3, 7), tdim(1, 5), chan(1, 3);
        const long ci = chan(rng), co = chan(rng), t = tdim(rng), h = dim(rng), w = dim(rng);
        Tensor x({ci, t, h, w}, random_vec(ci * t * h * w, rng));
        Tensor k({co, ci, 3, 3, 3}, random_vec(co * ci * 27, rng));
        Tensor b({co}, random_vec(co, rng));
        ComputationTape tape;
        Tensor out = conv3d(tape, x, k, b);
        auto want = oracle::conv3d(to_vec(x), ci, t, h, w, to_vec(k), co, to_vec(b));
        for (long i = 0; i < out.size(); ++i)
            CHECK(out.values()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("maxpool2d") {
    ComputationTape tape;
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    CHECK(maxpool2d(tape, x).item() == 4.0);

    Tensor c({2, 4, 4});
    c.values().setConstant(3.5);
    Tensor out = maxpool2d(tape, c);
    CHECK(out.values().minCoeff() == 3.5);
    CHECK(out.values().maxCoeff() == 3.5);

    CHECK_THROWS_AS(maxpool2d(tape, Tensor({1, 1, 5})), ShapeError);

    std::mt19937 rng(3);
    Tensor r({3, 9, 9}, random_vec(3 * 81, rng));
    Tensor ro = maxpool2d(tape, r);
    CHECK(ro.shape() == std::vector<long>{3, 4, 4});
    auto want = oracle::maxpool2d(to_vec(r), 3, 9, 9);
    for (long i = 0; i < ro.size(); ++i) CHECK(ro.values()[i] == want[static_cast<size_t>(i)]);
}

TEST_CASE("maxpool gradient goes to first argmax in row-major order") {
    ComputationTape tape;
    Tensor x({1, 2, 2}, {7, 7, 7, 7});
    x.set_requires_grad(true);
    Tensor loss = sum(tape, maxpool2d(tape, x));
    backward(loss, tape);
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 0.0);
    CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("elementwise activations") {
    ComputationTape tape;
    Tensor x({3}, {-1, 0, 2});
    Tensor r = elementwise(tape, Activation::relu, x);
    CHECK(r.values()[0] == 0.0);
    CHECK(r.values()[1] == 0.0);
    CHECK(r.values()[2] == 2.0);
    Tensor z({1}, {0.0});
    CHECK(elementwise(tape, Activation::tanh, z).item() == 0.0);
    CHECK(elementwise(tape, Activation::sigmoid, z).item() == 0.5);
}

TEST_CASE("activation gradients match finite differences") {
    std::mt19937 rng(11);
    for (Activation kind : {Activation::relu, Activation::tanh, Activation::sigmoid}) {
        Tensor x({5}, random_vec(5, rng, 0.1, 1.5));  // away from relu's kink
        x.set_requires_grad(true);
        std::vector<Tensor> params{x};
        auto fwd = [&]() {
            ComputationTape tape;
            return sum(tape, elementwise(tape, kind, x)).item();
        };
        auto bwd = [&]() {
            ComputationTape tape;
            backward(sum(tape, elementwise(tape, kind, x)), tape);
        };
        auto res = finite_diff_check(fwd, params, bwd, 1e-5, 0, 1);
        CHECK(res.max_rel_error < 1e-6);
    }
}

TEST_CASE("dense identity, constant and oracle") {
    ComputationTape tape;
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor zb({3});
    Tensor x({3}, {2, -1, 5});
    Tensor out = dense(tape, x, eye, zb);
    for (long i = 0; i < 3; ++i) CHECK(out.values()[i] == x.values()[i]);

    Tensor zw({2, 3});
    Tensor b({2}, {4, -7});
    Tensor out2 = dense(tape, x, zw, b);
    CHECK(out2.values()[0] == 4.0);
    CHECK(out2.values()[1] == -7.0);

    std::mt19937 rng(5);
    for (int trial = 0; trial < 120; ++trial) {
        std::uniform_int_distribution<long> dim(1, 8);
        const long din = dim(rng), dout = dim(rng);
        Tensor xi({din}, random_vec(din, rng));
        Tensor w({dout, din}, random_vec(dout * din, rng));
        Tensor bi({dout}, random_vec(dout, rng));
        Tensor y = dense(tape, xi, w, bi);
        auto want = oracle::dense(to_vec(xi), to_vec(w), to_vec(bi), dout, din);
        for (long i = 0; i < dout; ++i)
            CHECK(y.values()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(dense(tape, Tensor({4}), Tensor({2, 3}), Tensor({2})), ShapeError);
}

TEST_CASE("softmax_over_time") {
    ComputationTape tape;
    Tensor u({3});
    Tensor su = softmax_over_time(tape, u);
    for (long i = 0; i < 3; ++i) CHECK(su.values()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor e({3}, {1, 2, 3});
    Tensor s = softmax_over_time(tape, e);
    CHECK(s.values()[0] == doctest::Approx(0.09003).epsilon(1e-4));
    CHECK(s.values()[1] == doctest::Approx(0.24473).epsilon(1e-4));
    CHECK(s.values()[2] == doctest::Approx(0.66524).epsilon(1e-4));

    std::mt19937 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<long> dim(1, 20);
        const long t = dim(rng);
        auto ev = random_vec(t, rng, -30, 30);
        Tensor et({t}, ev);
        Tensor st = softmax_over_time(tape, et);
        CHECK(std::abs(st.values().sum() - 1.0) < 1e-9);
        CHECK(st.values().minCoeff() >= 0.0);
        auto want = oracle::softmax(ev);
        for (long i = 0; i < t; ++i)
            CHECK(st.values()[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-9));
        // shift invariance
        std::uniform_real_distribution<double> uc(-50, 50);
        const double c = uc(rng);
        for (auto& v : ev) v += c;
        Tensor shifted = softmax_over_time(tape, Tensor({t}, ev));
        for (long i = 0; i < t; ++i) CHECK(std::abs(shifted.values()[i] - st.values()[i]) < 1e-9);
    }
}

TEST_CASE("batchnorm") {
    std::mt19937 rng(13);
    // constant batch -> output equals beta
    {
        ComputationTape tape;
        Tensor x({4, 2});
        x.values().setConstant(2.5);
        Tensor gamma({2}, {1, 1}), beta({2}, {0.3, -0.8});
        BatchNormState st(2);
        Tensor y = batchnorm(tape, x, gamma, beta, st, Mode::train, 1);
        for (long i = 0; i < 4; ++i) {
            CHECK(y.values()[2 * i] == doctest::Approx(0.3).epsilon(1e-12));
            CHECK(y.values()[2 * i + 1] == doctest::Approx(-0.8).epsilon(1e-12));
        }
    }
    // standardized batch is (nearly) fixed
    {
        ComputationTape tape;
        Tensor x({6, 1}, {-1.46385011, -0.87831007, -0.29277002, 0.29277002, 0.87831007, 1.46385011});
        Tensor gamma({1}, {1.0}), beta({1}, {0.0});
        BatchNormState st(1);
        Tensor y = batchnorm(tape, x, gamma, beta, st, Mode::train, 1);
        for (long i = 0; i < 6; ++i) CHECK(std::abs(y.values()[i] - x.values()[i]) < 1e-4);
    }
    // train-mode moments
    {
        ComputationTape tape;
        Tensor x({50, 3}, random_vec(150, rng, -2, 5));
        Tensor gamma({3}, {1, 1, 1}), beta({3});
        BatchNormState st(3);
        Tensor y = batchnorm(tape, x, gamma, beta, st, Mode::train, 1);
        for (long f = 0; f < 3; ++f) {
            double m = 0, v = 0;
            for (long i = 0; i < 50; ++i) m += y.values()[i * 3 + f];
            m /= 50;
            for (long i = 0; i < 50; ++i) v += std::pow(y.values()[i * 3 + f] - m, 2);
            v /= 50;
            CHECK(std::abs(m) < 1e-4);
            CHECK(std::abs(v - 1.0) < 1e-3);
        }
    }
    // B < 2 rejected in train mode
    {
        ComputationTape tape;
        Tensor x({1, 3});
        Tensor gamma({3}), beta({3});
        BatchNormState st(3);
        CHECK_THROWS_AS(batchnorm(tape, x, gamma, beta, st, Mode::train, 1), ShapeError);
        CHECK_NOTHROW(batchnorm(tape, x, gamma, beta, st, Mode::infer, 1));
    }
}

TEST_CASE("dropout") {
    std::mt19937 rng(17);
    ComputationTape tape;
    Tensor x({100}, random_vec(100, rng));
    Tensor y0 = dropout(tape, x, 0.0, Mode::train, rng);
    for (long i = 0; i < 100; ++i) CHECK(y0.values()[i] == x.values()[i]);
    Tensor yi = dropout(tape, x, 0.7, Mode::infer, rng);
    for (long i = 0; i < 100; ++i) CHECK(yi.values()[i] == x.values()[i]);
    CHECK_THROWS_AS(dropout(tape, x, 1.0, Mode::train, rng), ShapeError);

    const long n = 100000;
    Tensor big({n});
    big.values().setConstant(1.0);
    Tensor yd = dropout(tape, big, 0.2, Mode::train, rng);
    long survivors = 0;
    for (long i = 0; i < n; ++i)
        if (yd.values()[i] != 0.0) ++survivors;
    CHECK(std::abs(static_cast<double>(survivors) / n - 0.8) < 0.01);
    CHECK(std::abs(yd.values().mean() - 1.0) < 0.02);
}

TEST_CASE("backward basics") {
    std::mt19937 rng(19);
    Tensor x({6}, random_vec(6, rng));
    x.set_requires_grad(true);
    {
        ComputationTape tape;
        Tensor loss = sum(tape, x);
        x.zero_grad();
        backward(loss, tape);
        for (long i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);
    }
    {
        ComputationTape tape;
        Tensor loss = scale(tape, sum(tape, mul(tape, x, x)), 0.5);
        x.zero_grad();
        backward(loss, tape);
        for (long i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(x.values()[i]).epsilon(1e-14));
    }
    // accumulation without reset
    {
        ComputationTape tape;
        Tensor loss = sum(tape, x);
        x.zero_grad();
        backward(loss, tape);
        backward(loss, tape);
        for (long i = 0; i < 6; ++i) CHECK(x.grad()[i] == 2.0);
    }
    // errors
    {
        ComputationTape tape;
        Tensor notscalar = mul(tape, x, x);
        CHECK_THROWS_AS(backward(notscalar, tape), ShapeError);
        ComputationTape other;
        Tensor off = sum(other, x);
        CHECK_THROWS_AS(backward(off, tape), ShapeError);
    }
}

TEST_CASE("backward determinism after grad reset") {
    std::mt19937 rng(23);
    Tensor x({8}, random_vec(8, rng));
    x.set_requires_grad(true);
    Tensor w({3, 8}, random_vec(24, rng));
    w.set_requires_grad(true);
    Tensor b({3}, random_vec(3, rng));
    b.set_requires_grad(true);
    auto run = [&]() {
        for (Tensor* t : {&x, &w, &b}) t->zero_grad();
        ComputationTape tape;
        Tensor loss = sum(tape, elementwise(tape, Activation::tanh, dense(tape, x, w, b)));
        backward(loss, tape);
        return std::tuple{Array(x.grad()), Array(w.grad()), Array(b.grad())};
    };
    auto [x1, w1, b1] = run();
    auto [x2, w2, b2] = run();
    CHECK((x1 == x2).all());
    CHECK((w1 == w2).all());
    CHECK((b1 == b2).all());
}

TEST_CASE("adam") {
    // zero gradient is a fixed point
    {
        Tensor p({3}, {1, 2, 3});
        p.set_requires_grad(true);
        p.zero_grad();
        std::vector<Tensor> params{p};
        AdamState st(params);
        adam_step(params, st, 0.1, 0.0);
        CHECK(p.values()[0] == 1.0);
        CHECK(p.values()[1] == 2.0);
        CHECK(p.values()[2] == 3.0);
        CHECK(st.t == 1);
    }
    // first bias-corrected step moves by ~lr
    {
        Tensor p({1}, {1.0});
        p.set_requires_grad(true);
        p.grad()[0] = 1.0;
        std::vector<Tensor> params{p};
        AdamState st(params);
        adam_step(params, st, 0.001, 0.0);
        CHECK(p.values()[0] == doctest::Approx(0.999).epsilon(1e-6));
    }
    // convergence on (p-3)^2
    {
        Tensor p({1}, {0.0});
        p.set_requires_grad(true);
        std::vector<Tensor> params{p};
        AdamState st(params);
        for (int i = 0; i < 200; ++i) {
            p.zero_grad();
            p.grad()[0] = 2.0 * (p.values()[0] - 3.0);
            adam_step(params, st, 0.1, 0.0);
        }
        CHECK(std::abs(p.values()[0] - 3.0) < 0.05);
    }
    // missing gradient rejected
    {
        Tensor p({2}, {0.0, 0.0});
        p.set_requires_grad(true);
        std::vector<Tensor> params{p};
        AdamState st(params);
        CHECK_THROWS_AS(adam_step(params, st, 0.1, 0.0), ShapeError);
    }
}

TEST_CASE("finite_diff_check on smooth chains") {
    std::mt19937 rng(29);
    Tensor x({4}, random_vec(4, rng));
    Tensor w({3, 4}, random_vec(12, rng));
    w.set_requires_grad(true);
    Tensor b({3}, random_vec(3, rng));
    b.set_requires_grad(true);
    std::vector<Tensor> params{w, b};
    auto fwd = [&]() {
        ComputationTape tape;
        return sum(tape, elementwise(tape, Activation::tanh, dense(tape, x, w, b))).item();
    };
    auto bwd = [&]() {
        ComputationTape tape;
        backward(sum(tape, elementwise(tape, Activation::tanh, dense(tape, x, w, b))), tape);
    };
    auto res = finite_diff_check(fwd, params, bwd, 1e-5, 0, 2);
    CHECK(res.max_rel_error < 1e-6);
    CHECK(res.coords_checked == 15);
}

TEST_CASE("bce loss") {
    std::vector<double> p{0.5}, y{1.0};
    CHECK(bce_loss(p, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    std::vector<double> p2{1.0 - 1e-12}, y2{1.0};
    CHECK(bce_loss(p2, y2) < 1e-10);
    std::mt19937 rng(31);
    for (int trial = 0; trial < 150; ++trial) {
        std::uniform_int_distribution<long> dim(1, 10);
        const long n = dim(rng);
        auto probs = random_vec(n, rng, 0.01, 0.99);
        std::vector<double> labels(static_cast<size_t>(n));
        std::bernoulli_distribution coin(0.5);
        for (auto& l : labels) l = coin(rng) ? 1.0 : 0.0;
        CHECK(bce_loss(probs, labels) == doctest::Approx(oracle::bce(probs, labels)).epsilon(1e-10));
    }
    CHECK_THROWS_AS(bce_loss(std::vector<double>{0.5}, std::vector<double>{1, 0}), ShapeError);
}
