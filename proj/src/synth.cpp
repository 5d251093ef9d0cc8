#include "bline/synth.hpp"

#include <cmath>
#include <random>

namespace bline {

namespace {

// Fan-shaped sector mask with apex above the top edge.
struct FanGeometry {
    long h, w;
    double apex_x, apex_y, half_angle, r_min, r_max;
    double pleural_row;  // image row of the pleural band at the fan axis

    explicit FanGeometry(long height, long width)
        : h(height),
          w(width),
          apex_x(0.5 * static_cast<double>(width - 1)),
          apex_y(-0.18 * static_cast<double>(height)),
          half_angle(0.60),
          r_min(0.16 * static_cast<double>(height)),
          r_max(1.22 * static_cast<double>(height)),
          pleural_row(0.30 * static_cast<double>(height)) {}

    bool inside(long row, long col) const {
        const double dy = static_cast<double>(row) - apex_y;
        const double dx = static_cast<double>(col) - apex_x;
        const double r = std::sqrt(dx * dx + dy * dy);
        if (r < r_min || r > r_max) return false;
        return std::abs(std::atan2(dx, dy)) <= half_angle;
    }
};

// One 3x3 box-blur pass (clamped borders).
void box_blur(Frame& f, long h, long w) {
    Frame out(h * w);
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            float s = 0;
            for (long di = -1; di <= 1; ++di)
                for (long dj = -1; dj <= 1; ++dj) {
                    const long r = std::clamp(i + di, 0L, h - 1);
                    const long c = std::clamp(j + dj, 0L, w - 1);
                    s += f[r * w + c];
                }
            out[i * w + j] = s / 9.0f;
        }
    f = out;
}

struct Streak {
    double col;     // column at pleural depth
    double width;   // gaussian half-width, px
    double gain;    // peak added brightness
};

// Temporal envelope: 2-frame raised ramps at both interval ends.
double streak_envelope(long t, long s, long e) {
    if (t < s || t >= e) return 0.0;
    const double rise = std::min(1.0, (static_cast<double>(t - s) + 1.0) / 3.0);
    const double fall = std::min(1.0, (static_cast<double>(e - 1 - t) + 1.0) / 3.0);
    return std::min(rise, fall);
}

}  // namespace

void SynthConfig::validate() const {
    if (bline_clips < 0 || non_bline_clips < 0) throw DataError("synth: negative clip count");
    if (frames_per_clip < 1 || height < 8 || width < 8) throw DataError("synth: degenerate geometry");
    if (min_interval < 3) throw DataError("synth: planted intervals must be >= 3 frames");
    if (max_interval < min_interval) throw DataError("synth: interval bounds out of order");
    if (max_interval > frames_per_clip)
        throw DataError("synth: interval longer than clip (" + std::to_string(max_interval) + " > " +
                        std::to_string(frames_per_clip) + " frames)");
    if (min_streaks < 1 || max_streaks < min_streaks || max_streaks > 3)
        throw DataError("synth: streak count must be within 1..3");
    if (fps <= 0) throw DataError("synth: fps must be positive");
}

Dataset synth_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.fps = cfg.fps;
    const long total = cfg.bline_clips + cfg.non_bline_clips;
    const FanGeometry fan(cfg.height, cfg.width);
    const long h = cfg.height, w = cfg.width;

    for (long ci = 0; ci < total; ++ci) {
        const bool is_bline = ci < cfg.bline_clips;
        std::seed_seq sq{cfg.seed, static_cast<unsigned>(ci)};
        std::mt19937 rng(sq);
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        VideoClip clip;
        char id[32];
        std::snprintf(id, sizeof(id), "%s%04ld", is_bline ? "bl" : "nb", ci);
        clip.id = id;
        clip.group = clip.id;
        clip.fps = cfg.fps;
        clip.height = h;
        clip.width = w;

        ClipAnnotation ann;
        ann.clip_id = clip.id;

        // static per-clip gain field (probe/tissue inhomogeneity)
        Frame gain(h * w);
        for (long i = 0; i < h * w; ++i) gain[i] = static_cast<float>(0.75 + 0.5 * u01(rng));
        box_blur(gain, h, w);
        box_blur(gain, h, w);

        std::vector<Streak> streaks;
        long istart = 0, iend = 0;
        if (is_bline) {
            std::uniform_int_distribution<long> ilen(cfg.min_interval, cfg.max_interval);
            const long len = ilen(rng);
            std::uniform_int_distribution<long> is0(0, cfg.frames_per_clip - len);
            istart = is0(rng);
            iend = istart + len;
            ann.label = Label::bline;
            ann.bline_intervals.emplace_back(istart, iend);

            std::uniform_int_distribution<int> ns(cfg.min_streaks, cfg.max_streaks);
            const int n = ns(rng);
            for (int k = 0; k < n; ++k) {
                Streak s;
                s.col = (0.22 + 0.56 * u01(rng)) * static_cast<double>(w - 1);
                s.width = 1.5 + 1.5 * u01(rng);
                s.gain = cfg.streak_brightness * (1.0 + 0.25 * u01(rng));
                streaks.push_back(s);
            }
        }

        const double wobble_hz = 0.25 + 0.15 * u01(rng);
        for (long t = 0; t < cfg.frames_per_clip; ++t) {
            Frame noise(h * w);
            for (long i = 0; i < h * w; ++i) noise[i] = static_cast<float>(u01(rng));
            box_blur(noise, h, w);

            // breathing wobble of the pleural line
            const double pl_row = fan.pleural_row +
                                  1.5 * std::sin(2.0 * M_PI * wobble_hz * static_cast<double>(t) / cfg.fps);
            const double env = is_bline ? streak_envelope(t, istart, iend) : 0.0;

            Frame frame(h * w);
            for (long r = 0; r < h; ++r)
                for (long c = 0; c < w; ++c) {
                    const long idx = r * w + c;
                    if (!fan.inside(r, c)) {
                        frame[idx] = 0.02f;
                        continue;
                    }
                    double v = cfg.speckle_level * gain[idx] * (0.35 + 1.3 * noise[idx]);
                    const double dp = static_cast<double>(r) - pl_row;
                    v += 0.75 * std::exp(-dp * dp / (2.0 * 1.8 * 1.8));  // pleural band
                    if (env > 0.0 && dp > 1.0) {
                        for (const Streak& s : streaks) {
                            const double dc = static_cast<double>(c) - s.col;
                            v += env * s.gain * std::exp(-dc * dc / (2.0 * s.width * s.width));
                        }
                    }
                    frame[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            clip.frames.push_back(std::move(frame));
        }
        ds.clips.push_back(std::move(clip));
        ds.annotations.push_back(std::move(ann));
    }
    return ds;
}

void synth_generate(const SynthConfig& cfg, const std::filesystem::path& root) {
    save_dataset(synth_dataset(cfg), root);
}

}  // namespace bline
