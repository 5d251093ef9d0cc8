#ifndef BLINE_DATA_HPP
#define BLINE_DATA_HPP

#include <Eigen/Dense>
#include <map>
#include <filesystem>
#include <string>
#include <vector>

#include "bline/tensor.hpp"

namespace bline {

// Dataset/annotation validation failures (CLI exit code 2).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Label { non_bline, bline };

using Frame = Eigen::ArrayXf;  // flat [H*W] intensities in [0,1]

struct VideoClip {
    std::string id;
    std::string group;  // sub-clips sliced from one source video share this
    double fps = 30.0;
    long height = 0, width = 0;
    std::vector<Frame> frames;

    long num_frames() const { return static_cast<long>(frames.size()); }
};

// Half-open [start,end) frame intervals, sorted, non-overlapping, in bounds.
struct ClipAnnotation {
    std::string clip_id;
    Label label = Label::non_bline;
    std::vector<std::pair<long, long>> bline_intervals;

    std::vector<long> frame_set() const;  // all annotated frame indices
};

void validate_annotation(const ClipAnnotation& ann, long frame_count);

struct Dataset {
    double fps = 30.0;
    std::vector<VideoClip> clips;
    std::vector<ClipAnnotation> annotations;  // parallel to clips
};

// Layout: <root>/annotations.json + <root>/frames/<clip_id>/<%05d>.pgm
Dataset load_dataset(const std::filesystem::path& root);
void save_dataset(const Dataset& ds, const std::filesystem::path& root);

// One-second windows, stride 0.8*L, plus a tail window covering [N-L,N) when
// the stride grid ends early. Sub-annotations are intersected and re-indexed.
std::vector<std::pair<VideoClip, ClipAnnotation>> slice_clips(const VideoClip& video,
                                                              const ClipAnnotation& ann);

// Bilinear, corner-aligned sampling.
Frame resize_frame(const Frame& frame, long h, long w, long out_h, long out_w);

VideoClip hflip(const VideoClip& clip);

struct FoldSplit {
    int k = 5;
    std::map<std::string, int> fold_of;  // group id -> fold
};

// Seeded shuffle, round-robin deal; fold sizes differ by at most one group.
FoldSplit kfold_split(std::vector<std::string> group_ids, int k, unsigned seed);

// Model input [T,1,64,64]; resizes when needed, mirrors columns when flipped.
Tensor clip_to_tensor(const VideoClip& clip, long target_size = 64, bool flipped = false);

// PGM (P5, maxval 255); P6 is accepted and converted with Rec. 601 weights.
void write_pgm(const std::filesystem::path& path, const Frame& frame, long h, long w);
Frame read_pgm(const std::filesystem::path& path, long& h, long& w);

}  // namespace bline

#endif
