#include "bline/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

namespace bline {

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw DataError("train config: learning_rate must be positive");
    if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (epochs < 0) throw DataError("train config: epochs must be >= 0");
    if (dropout_rate < 0 || dropout_rate >= 1) throw DataError("train config: dropout_rate in [0,1)");
    if (l2 < 0) throw DataError("train config: l2 must be >= 0");
}

namespace {

struct Example {
    const VideoClip* clip;
    bool flipped;
    double label;
};

std::vector<Example> build_pool(const Dataset& ds, bool augment) {
    std::vector<Example> pool;
    for (size_t i = 0; i < ds.clips.size(); ++i) {
        const double y = ds.annotations[i].label == Label::bline ? 1.0 : 0.0;
        pool.push_back(Example{&ds.clips[i], false, y});
        if (augment) pool.push_back(Example{&ds.clips[i], true, y});
    }
    return pool;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set) {
    cfg.validate();
    if (train_set.clips.empty()) throw DataError("train: empty training set");
    long pos = 0;
    for (const ClipAnnotation& a : train_set.annotations)
        if (a.label == Label::bline) ++pos;
    if (pos == 0 || pos == static_cast<long>(train_set.annotations.size()))
        throw DataError("train: training set must contain both classes");

    TrainResult res;
    res.params = init_params(cfg.variant, cfg.geom, cfg.seed);
    std::vector<Tensor> params = res.params.trainable();
    AdamState adam(params);

    std::vector<Example> pool = build_pool(train_set, cfg.augment_hflip);
    std::seed_seq drop_seq{cfg.seed, 0xD0u};
    std::mt19937 dropout_rng(drop_seq);

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::seed_seq sq{cfg.seed, static_cast<unsigned>(epoch + 1)};
        std::mt19937 shuffle_rng(sq);
        std::shuffle(pool.begin(), pool.end(), shuffle_rng);

        double loss_sum = 0;
        const long n = static_cast<long>(pool.size());
        for (long b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const long bn = std::min(cfg.batch_size, n - b0);
            for (Tensor& p : params) p.zero_grad();
            for (long k = 0; k < bn; ++k) {
                const Example& ex = pool[static_cast<size_t>(b0 + k)];
                ComputationTape tape;
                Tensor x = clip_to_tensor(*ex.clip, cfg.geom.frame_size, ex.flipped);
                RunContext ctx{Mode::train, cfg.dropout_rate, &dropout_rng};
                ForwardTensors ft = forward(tape, res.params, x, ctx);
                Tensor loss = bce_with_logits(tape, ft.logit, ex.label);
                const double lv = loss.item();
                if (!std::isfinite(lv))
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(b0 / cfg.batch_size) + ", clip '" +
                                       ex.clip->id + "'");
                loss_sum += lv;
                Tensor scaled = scale(tape, loss, 1.0 / static_cast<double>(bn));
                backward(scaled, tape);
            }
            adam_step(params, adam, cfg.learning_rate, cfg.l2);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        if (!val_set.clips.empty()) {
            Evaluation ev = evaluate(res.params, val_set);
            rec.val_precision = ev.report.precision;
            rec.val_recall = ev.report.recall;
            rec.val_f1 = ev.report.f1;
        } else {
            rec.val_precision = rec.val_recall = rec.val_f1 = 0.0;
        }
        res.history.push_back(rec);
    }
    return res;
}

CvResult run_cv(const TrainConfig& cfg, const Dataset& dataset, const FoldSplit& folds, int jobs) {
    for (size_t i = 0; i < dataset.clips.size(); ++i)
        if (!folds.fold_of.count(dataset.clips[i].group))
            throw DataError("run_cv: clip '" + dataset.clips[i].id + "' group '" +
                            dataset.clips[i].group + "' has no fold assignment");

    std::vector<std::pair<Dataset, Dataset>> splits(static_cast<size_t>(folds.k));
    for (int f = 0; f < folds.k; ++f) {
        auto& [train_ds, test_ds] = splits[static_cast<size_t>(f)];
        train_ds.fps = test_ds.fps = dataset.fps;
        for (size_t i = 0; i < dataset.clips.size(); ++i) {
            Dataset& dst = folds.fold_of.at(dataset.clips[i].group) == f ? test_ds : train_ds;
            dst.clips.push_back(dataset.clips[i]);
            dst.annotations.push_back(dataset.annotations[i]);
        }
        if (test_ds.clips.empty())
            throw DataError("run_cv: fold " + std::to_string(f) + " has no test clips");
    }

    CvResult res;
    res.folds.resize(static_cast<size_t>(folds.k));
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(folds.k));
    auto worker = [&]() {
        for (int f = next.fetch_add(1); f < folds.k; f = next.fetch_add(1)) {
            try {
                auto& [train_ds, test_ds] = splits[static_cast<size_t>(f)];
                TrainResult tr = train(cfg, train_ds, test_ds);
                Evaluation ev = evaluate(tr.params, test_ds);
                res.folds[static_cast<size_t>(f)] =
                    FoldResult{f, std::move(tr.params), std::move(tr.history), ev.report};
            } catch (...) {
                errors[static_cast<size_t>(f)] = std::current_exception();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < std::min(jobs, folds.k); ++j) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    auto moments = [&](auto get) {
        double m = 0;
        for (const FoldResult& fr : res.folds) m += get(fr.report);
        m /= static_cast<double>(res.folds.size());
        double v = 0;
        for (const FoldResult& fr : res.folds) v += (get(fr.report) - m) * (get(fr.report) - m);
        v /= static_cast<double>(res.folds.size());
        return std::pair<double, double>{m, std::sqrt(v)};
    };
    std::tie(res.aggregate.mean_precision, res.aggregate.std_precision) =
        moments([](const EvalReport& r) { return r.precision; });
    std::tie(res.aggregate.mean_recall, res.aggregate.std_recall) =
        moments([](const EvalReport& r) { return r.recall; });
    std::tie(res.aggregate.mean_f1, res.aggregate.std_f1) =
        moments([](const EvalReport& r) { return r.f1; });
    return res;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    std::ofstream f(path);
    if (!f) throw DataError("write_history_csv: cannot open " + path.string());
    f << "epoch,train_loss,val_precision,val_recall,val_f1\n";
    char line[256];
    for (const EpochRecord& r : history) {
        std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                      r.val_precision, r.val_recall, r.val_f1);
        f << line;
    }
}

}  // namespace bline
