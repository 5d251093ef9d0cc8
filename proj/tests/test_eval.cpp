#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "bline/eval.hpp"
#include "bline/synth.hpp"
#include "oracles.hpp"

using namespace bline;

TEST_CASE("precision/recall/f1 worked example: TP=3 FP=1 FN=2") {
    std::vector<int> pred{1, 1, 1, 1, 0, 0, 0, 0};
    std::vector<int> act{1, 1, 1, 0, 1, 1, 0, 0};
    Scores s = precision_recall_f1(pred, act);
    CHECK(s.precision == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(s.recall == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s.f1 == doctest::Approx(2.0 * 0.75 * 0.6 / (0.75 + 0.6)).epsilon(1e-12));
}

TEST_CASE("precision/recall/f1 degenerate cases yield zero") {
    std::vector<int> zeros{0, 0, 0};
    std::vector<int> ones{1, 1, 1};
    Scores s = precision_recall_f1(zeros, zeros);  // no positives anywhere
    CHECK(s.precision == 0.0);
    CHECK(s.recall == 0.0);
    CHECK(s.f1 == 0.0);
    s = precision_recall_f1(zeros, ones);  // no predicted positives
    CHECK(s.precision == 0.0);
    CHECK(s.recall == 0.0);
    s = precision_recall_f1(ones, zeros);  // no actual positives
    CHECK(s.recall == 0.0);
    CHECK(s.precision == 0.0);
    s = precision_recall_f1(ones, ones);  // perfect
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f1 == 1.0);
}

TEST_CASE("precision/recall/f1 against a counting oracle") {
    std::mt19937 rng(77);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> pred(25), act(25);
        for (int i = 0; i < 25; ++i) {
            pred[static_cast<size_t>(i)] = coin(rng) ? 1 : 0;
            act[static_cast<size_t>(i)] = coin(rng) ? 1 : 0;
        }
        long tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < 25; ++i) {
            if (pred[static_cast<size_t>(i)] && act[static_cast<size_t>(i)]) ++tp;
            if (pred[static_cast<size_t>(i)] && !act[static_cast<size_t>(i)]) ++fp;
            if (!pred[static_cast<size_t>(i)] && act[static_cast<size_t>(i)]) ++fn;
        }
        const double p = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double r = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f = (p + r > 0) ? 2 * p * r / (p + r) : 0.0;
        Scores s = precision_recall_f1(pred, act);
        CHECK(s.precision == doctest::Approx(p).epsilon(1e-12));
        CHECK(s.recall == doctest::Approx(r).epsilon(1e-12));
        CHECK(s.f1 == doctest::Approx(f).epsilon(1e-12));
    }
}

TEST_CASE("minmax_normalize") {
    std::vector<double> a{0.2, 0.5, 0.3};
    auto n = minmax_normalize(a);
    REQUIRE(n.size() == 3);
    CHECK(n[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(n[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    // Constant input maps everything to 0.5.
    std::vector<double> c{0.7, 0.7, 0.7, 0.7};
    auto nc = minmax_normalize(c);
    for (double v : nc) CHECK(v == 0.5);
}

TEST_CASE("binarize_attention threshold is inclusive") {
    std::vector<double> n{0.0, 0.5, 0.49, 1.0, 0.51};
    CHECK(binarize_attention(n) == std::set<long>{1, 3, 4});
    CHECK(binarize_attention(n, 0.0) == std::set<long>{0, 1, 2, 3, 4});
    CHECK(binarize_attention(n, 1.0) == std::set<long>{3});
    CHECK_THROWS(binarize_attention(n, 1.01));
}

TEST_CASE("temporal IoU worked example and edge cases") {
    std::set<long> p, a;
    for (long t = 10; t < 21; ++t) p.insert(t);   // {10..20}, 11 frames
    for (long t = 12; t < 26; ++t) a.insert(t);   // {12..25}, 14 frames
    // Intersection {12..20} = 9, union {10..25} = 16.
    CHECK(temporal_iou(p, a) == doctest::Approx(9.0 / 16.0).epsilon(1e-12));
    CHECK(temporal_iou({}, {}) == 1.0);
    CHECK(temporal_iou(p, {}) == 0.0);
    CHECK(temporal_iou({}, a) == 0.0);
    CHECK(temporal_iou(a, a) == 1.0);
    // Matches the brute-force oracle on random sets.
    std::mt19937 rng(5);
    std::bernoulli_distribution coin(0.3);
    for (int trial = 0; trial < 50; ++trial) {
        std::set<long> x, y;
        for (long t = 0; t < 30; ++t) {
            if (coin(rng)) x.insert(t);
            if (coin(rng)) y.insert(t);
        }
        CHECK(temporal_iou(x, y) == doctest::Approx(oracle::iou(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("localization accuracy counts clips above each alpha") {
    // Two clips: one with IoU 1 (weights peak exactly on gt), one with IoU 0.
    LocalizedClip good;
    good.weights = {0.0, 0.0, 1.0, 1.0, 0.0};
    good.gt_frames = {2, 3};
    LocalizedClip bad;
    bad.weights = {1.0, 0.0, 0.0, 0.0, 0.0};
    bad.gt_frames = {3, 4};
    std::vector<double> alphas{0.1, 0.2, 0.3, 0.4};
    auto acc = localization_accuracy({good, bad}, alphas);
    REQUIRE(acc.size() == 4);
    for (double a : alphas) CHECK(acc.at(a) == doctest::Approx(0.5).epsilon(1e-12));
    // Accuracy is non-increasing in alpha.
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<LocalizedClip> clips;
    for (int i = 0; i < 12; ++i) {
        LocalizedClip c;
        for (int t = 0; t < 10; ++t) c.weights.push_back(dist(rng));
        c.gt_frames = {2, 3, 4, 5};
        clips.push_back(std::move(c));
    }
    std::vector<double> grid{0.05, 0.15, 0.25, 0.35, 0.45, 0.6, 0.8};
    auto racc = localization_accuracy(clips, grid);
    for (size_t i = 1; i < grid.size(); ++i) CHECK(racc.at(grid[i]) <= racc.at(grid[i - 1]));
}

TEST_CASE("representative frame accuracy") {
    LocalizedClip hit;
    hit.weights = {0.1, 0.9, 0.2};
    hit.gt_frames = {1, 2};
    LocalizedClip miss;
    miss.weights = {0.9, 0.1, 0.2};
    miss.gt_frames = {1, 2};
    LocalizedClip tie;  // argmax ties resolve to the smallest index (0), not in gt
    tie.weights = {0.5, 0.5, 0.5};
    tie.gt_frames = {1, 2};
    CHECK(representative_frame_accuracy({hit}) == 1.0);
    CHECK(representative_frame_accuracy({hit, miss}) == 0.5);
    CHECK(representative_frame_accuracy({hit, miss, tie}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("evaluate wires the pieces together") {
    SynthConfig cfg;
    cfg.bline_clips = 3;
    cfg.non_bline_clips = 3;
    cfg.frames_per_clip = 8;
    cfg.fps = 8.0;
    cfg.height = 16;
    cfg.width = 16;
    cfg.min_interval = 3;
    cfg.max_interval = 5;
    cfg.seed = 22;
    Dataset ds = synth_dataset(cfg);

    ModelGeometry g;
    g.frame_size = 16;
    g.channels = {4, 4, 8, 8};
    g.feature_dim = 16;
    g.hidden_size = 8;
    ModelParams p = init_params(Variant::c2d_lstm_a, g, 1);
    Evaluation ev = evaluate(p, ds);
    CHECK(ev.report.n_clips == 6);
    CHECK(ev.report.n_bline_clips == 3);
    CHECK(ev.report.has_localization);
    REQUIRE(ev.clips.size() == 6);
    for (const ClipEval& ce : ev.clips) {
        CHECK(ce.probability >= 0.0);
        CHECK(ce.probability <= 1.0);
        CHECK(ce.predicted_label == (ce.probability >= 0.5 ? 1 : 0));
        CHECK(ce.trace.weights.size() == 8);
        // Binarization of the trace matches the reported frame set.
        CHECK(ce.predicted_frames == binarize_attention(ce.trace.normalized, 0.5));
    }
    // Localization curves only use the B-line clips.
    for (double a : kDefaultAlphas) {
        CHECK(ev.report.loc_accuracy.at(a) >= 0.0);
        CHECK(ev.report.loc_accuracy.at(a) <= 1.0);
    }
    // A test set with no B-line clips reports no localization.
    SynthConfig neg = cfg;
    neg.bline_clips = 0;
    Evaluation nev = evaluate(p, synth_dataset(neg));
    CHECK(!nev.report.has_localization);
    CHECK(nev.report.n_bline_clips == 0);
}
