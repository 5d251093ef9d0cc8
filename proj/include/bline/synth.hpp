#ifndef BLINE_SYNTH_HPP
#define BLINE_SYNTH_HPP

#include "bline/data.hpp"

namespace bline {

// Synthetic LUS-like clips: speckle background inside a fan mask, a bright
// pleural band, and (for B-line clips) 1-3 vertical streaks planted during an
// annotated interval with 2-frame onset/offset ramps.
struct SynthConfig {
    long bline_clips = 120;
    long non_bline_clips = 120;
    long frames_per_clip = 30;
    long height = 64;
    long width = 64;
    double fps = 30.0;
    unsigned seed = 0;
    // Planted interval length bounds, frames. Intervals long relative to the
    // clip (some spanning it entirely) leave too few quiet frames for the
    // degenerate "attend the artifact-free frames" solution, which classifies
    // just as well but localizes the complement of the B-line interval.
    long min_interval = 10;
    long max_interval = 30;
    int min_streaks = 1;
    int max_streaks = 3;
    double streak_brightness = 0.55;
    double speckle_level = 0.30;  // background intensity scale

    void validate() const;
};

// Fully deterministic per seed.
Dataset synth_dataset(const SynthConfig& cfg);

// synth_dataset + save_dataset.
void synth_generate(const SynthConfig& cfg, const std::filesystem::path& root);

}  // namespace bline

#endif
