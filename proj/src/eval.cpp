#include "bline/eval.hpp"

#include <algorithm>
#include <cmath>

namespace bline {

Scores precision_recall_f1(std::span<const int> predicted, std::span<const int> actual) {
    if (predicted.size() != actual.size())
        throw ShapeError("precision_recall_f1: length mismatch, " + std::to_string(predicted.size()) +
                         " vs " + std::to_string(actual.size()));
    if (predicted.empty()) throw ShapeError("precision_recall_f1: empty input");
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] && actual[i]) ++tp;
        if (predicted[i] && !actual[i]) ++fp;
        if (!predicted[i] && actual[i]) ++fn;
    }
    const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    return {p, r, f1};
}

std::vector<double> minmax_normalize(std::span<const double> a) {
    if (a.empty()) throw ShapeError("minmax_normalize: empty input");
    const auto [mn, mx] = std::minmax_element(a.begin(), a.end());
    std::vector<double> out(a.size());
    if (*mx == *mn) {
        std::fill(out.begin(), out.end(), 0.5);  // degenerate rule
        return out;
    }
    const double span = *mx - *mn;
    for (size_t i = 0; i < a.size(); ++i) out[i] = (a[i] - *mn) / span;
    return out;
}

std::set<long> binarize_attention(std::span<const double> normalized, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw ShapeError("binarize_attention: threshold must be in [0,1], got " +
                         std::to_string(threshold));
    std::set<long> out;
    for (size_t i = 0; i < normalized.size(); ++i)
        if (normalized[i] >= threshold) out.insert(static_cast<long>(i));
    return out;
}

double temporal_iou(const std::set<long>& predicted, const std::set<long>& actual) {
    if (predicted.empty() && actual.empty()) return 1.0;
    if (predicted.empty() || actual.empty()) return 0.0;
    long inter = 0;
    for (long t : predicted) inter += actual.count(t);
    const long uni = static_cast<long>(predicted.size() + actual.size()) - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::map<double, double> localization_accuracy(const std::vector<LocalizedClip>& clips,
                                               std::span<const double> alphas) {
    if (clips.empty()) throw ShapeError("localization_accuracy: no B-line clips");
    std::vector<double> ious;
    ious.reserve(clips.size());
    for (const LocalizedClip& c : clips) {
        if (c.gt_frames.empty())
            throw ShapeError("localization_accuracy: clip with empty ground truth");
        const auto pred = binarize_attention(minmax_normalize(c.weights), 0.5);
        ious.push_back(temporal_iou(pred, c.gt_frames));
    }
    std::map<double, double> out;
    for (double a : alphas) {
        long hit = 0;
        for (double iou : ious)
            if (iou >= a) ++hit;
        out[a] = static_cast<double>(hit) / static_cast<double>(ious.size());
    }
    return out;
}

double representative_frame_accuracy(const std::vector<LocalizedClip>& clips) {
    if (clips.empty()) throw ShapeError("representative_frame_accuracy: no B-line clips");
    long hit = 0;
    for (const LocalizedClip& c : clips) {
        if (c.gt_frames.empty())
            throw ShapeError("representative_frame_accuracy: clip with empty ground truth");
        long best = 0;
        for (size_t i = 1; i < c.weights.size(); ++i)
            if (c.weights[i] > c.weights[static_cast<size_t>(best)]) best = static_cast<long>(i);
        if (c.gt_frames.count(best)) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(clips.size());
}

Evaluation evaluate(ModelParams& params, const Dataset& test_set, std::span<const double> alphas) {
    if (test_set.clips.empty()) throw ShapeError("evaluate: empty test set");
    Evaluation ev;
    std::vector<int> pred, actual;
    std::vector<LocalizedClip> bline;
    for (size_t i = 0; i < test_set.clips.size(); ++i) {
        const VideoClip& clip = test_set.clips[i];
        const ClipAnnotation& ann = test_set.annotations[i];
        Tensor x = clip_to_tensor(clip, params.geom.frame_size);
        Prediction pr = predict(params, x);

        ClipEval ce;
        ce.clip_id = clip.id;
        ce.probability = pr.probability;
        ce.predicted_label = pr.probability >= 0.5 ? 1 : 0;
        ce.actual_label = ann.label == Label::bline ? 1 : 0;
        ce.trace = pr.trace;
        ce.predicted_frames = binarize_attention(ce.trace.normalized, 0.5);
        for (long t : ann.frame_set()) ce.gt_frames.insert(t);

        pred.push_back(ce.predicted_label);
        actual.push_back(ce.actual_label);
        if (!ce.gt_frames.empty()) bline.push_back(LocalizedClip{ce.trace.weights, ce.gt_frames});
        ev.clips.push_back(std::move(ce));
    }
    const Scores s = precision_recall_f1(pred, actual);
    ev.report.precision = s.precision;
    ev.report.recall = s.recall;
    ev.report.f1 = s.f1;
    ev.report.n_clips = static_cast<long>(test_set.clips.size());
    ev.report.n_bline_clips = static_cast<long>(bline.size());
    if (!bline.empty()) {
        ev.report.has_localization = true;
        ev.report.loc_accuracy = localization_accuracy(bline, alphas);
        ev.report.rep_frame_accuracy = representative_frame_accuracy(bline);
    }
    return ev;
}

}  // namespace bline
