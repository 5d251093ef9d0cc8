#ifndef BLINE_EVAL_HPP
#define BLINE_EVAL_HPP

#include <map>
#include <set>
#include <span>
#include <vector>

#include "bline/data.hpp"
#include "bline/model.hpp"

namespace bline {

struct EvalReport {
    double precision = 0, recall = 0, f1 = 0;
    std::map<double, double> loc_accuracy;  // alpha -> accuracy, B-line clips only
    double rep_frame_accuracy = 0;
    bool has_localization = false;  // false when the test set has no B-line clips
    long n_clips = 0, n_bline_clips = 0;
};

struct Scores {
    double precision, recall, f1;
};

// Positive class = bline; any 0/0 yields 0.
Scores precision_recall_f1(std::span<const int> predicted, std::span<const int> actual);

// (a - min) / (max - min); all 0.5 when the input is constant.
std::vector<double> minmax_normalize(std::span<const double> a);

// Frame t predicted iff normalized[t] >= threshold.
std::set<long> binarize_attention(std::span<const double> normalized, double threshold = 0.5);

// |P n A| / |P u A|; 1 when both empty, 0 when exactly one is empty.
double temporal_iou(const std::set<long>& predicted, const std::set<long>& actual);

struct LocalizedClip {
    std::vector<double> weights;  // raw attention weights a_t
    std::set<long> gt_frames;     // non-empty
};

// accuracy(alpha) = fraction of clips with IoU(binarize(minmax(a)), gt) >= alpha.
std::map<double, double> localization_accuracy(const std::vector<LocalizedClip>& clips,
                                               std::span<const double> alphas);

// Fraction of clips whose argmax-attention frame is in the ground truth.
double representative_frame_accuracy(const std::vector<LocalizedClip>& clips);

inline const std::vector<double> kDefaultAlphas{0.1, 0.2, 0.3, 0.4};

struct ClipEval {
    std::string clip_id;
    double probability;
    int predicted_label;  // 1 = bline
    int actual_label;
    AttentionTrace trace;
    std::set<long> predicted_frames;
    std::set<long> gt_frames;
};

struct Evaluation {
    EvalReport report;
    std::vector<ClipEval> clips;
};

// Infer-mode forward per clip; probability threshold 0.5; binarization
// threshold 0.5 on the min-max-normalized attention weights.
Evaluation evaluate(ModelParams& params, const Dataset& test_set,
                    std::span<const double> alphas = kDefaultAlphas);

}  // namespace bline

#endif
