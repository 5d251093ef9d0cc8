#ifndef BLINE_TRAIN_HPP
#define BLINE_TRAIN_HPP

#include "bline/adam.hpp"
#include "bline/data.hpp"
#include "bline/eval.hpp"
#include "bline/model.hpp"

namespace bline {

struct TrainConfig {
    Variant variant = Variant::c2d_lstm_a;
    double learning_rate = 1e-4;
    long batch_size = 20;
    long epochs = 60;
    double dropout_rate = 0.2;
    double l2 = 1e-5;
    unsigned seed = 0;
    bool augment_hflip = true;
    ModelGeometry geom;

    void validate() const;
};

struct EpochRecord {
    long epoch;
    double train_loss;
    double val_precision, val_recall, val_f1;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

// Seeded shuffling per epoch, hflip doubling of the training pool, minibatch
// BCE -> backward -> Adam with coupled L2; validation metrics each epoch.
// Deterministic per (config, data, seed).
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set);

struct FoldResult {
    int fold;
    ModelParams params;
    TrainHistory history;
    EvalReport report;
};

struct CvAggregate {
    double mean_precision, std_precision;
    double mean_recall, std_recall;
    double mean_f1, std_f1;
};

struct CvResult {
    std::vector<FoldResult> folds;
    CvAggregate aggregate;
};

// Folds are independent model instances; `jobs` worker threads may run them
// in parallel with a deterministic join.
CvResult run_cv(const TrainConfig& cfg, const Dataset& dataset, const FoldSplit& folds,
                int jobs = 1);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace bline

#endif
