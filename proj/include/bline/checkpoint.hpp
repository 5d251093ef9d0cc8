#ifndef BLINE_CHECKPOINT_HPP
#define BLINE_CHECKPOINT_HPP

#include <filesystem>

#include "bline/model.hpp"

namespace bline {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Flat binary container: "BLNC" magic, format version, variant tag, geometry,
// then named blocks (name length, name bytes, rank, extents, little-endian
// 64-bit floats). Bit-exact round trip.
void save_checkpoint(const std::filesystem::path& path, ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace bline

#endif
