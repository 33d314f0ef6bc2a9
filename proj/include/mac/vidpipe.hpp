#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mac/diffcore/ops.hpp"

namespace mac::vid {

// Raw frames, frame-major then row-major then channel: M x H x W x C.
struct VideoClip {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::vector<std::uint8_t> samples;
  std::uint64_t id = 0;

  std::uint8_t at(std::uint32_t m, std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
    return samples[((static_cast<std::size_t>(m) * height + y) * width + x) * channels + c];
  }
  std::uint8_t& at(std::uint32_t m, std::uint32_t y, std::uint32_t x, std::uint32_t c) {
    return samples[((static_cast<std::size_t>(m) * height + y) * width + x) * channels + c];
  }
  std::size_t frame_bytes() const { return static_cast<std::size_t>(height) * width * channels; }
  void validate() const;
};

struct Image {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::vector<std::uint8_t> samples;
};

// Flattened non-overlapping patches. Token t = frame * N + spatial, spatial in
// raster order; each row holds P*P*C raw sample values (y, x, c order).
struct PatchSet {
  diff::Array tokens;  // [M*N, P*P*C]
  std::vector<std::uint32_t> frame_index;
  std::vector<std::uint32_t> spatial_index;
  std::uint32_t patch = 0;
  std::uint32_t frames = 0;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t channels = 3;

  std::uint32_t patches_per_frame() const { return grid_h * grid_w; }
};

enum class MaskStrategy : std::uint8_t { none, random, tube };

std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& s);

struct MaskPlan {
  MaskStrategy strategy = MaskStrategy::none;
  double ratio = 0.0;
  std::uint32_t frames = 0;
  std::uint32_t patches_per_frame = 0;
  std::vector<std::vector<std::uint32_t>> visible;  // per frame, ascending
  std::uint64_t seed = 0;

  std::size_t visible_count() const;
};

// Learnable spatial (N_max x D) and temporal (M_max x D) tables.
struct PositionalTables {
  diff::Parameter* spatial = nullptr;
  diff::Parameter* temporal = nullptr;
};

struct PatchProjection {
  diff::Parameter* weight = nullptr;  // [P*P*C, D]
  diff::Parameter* bias = nullptr;    // [D]
};

// Encoder input: one row per visible patch, plus where it came from.
struct VisibleTokens {
  diff::Var embeddings;  // [T, D]
  std::vector<std::uint32_t> frame_index;
  std::vector<std::uint32_t> spatial_index;

  std::size_t count() const { return frame_index.size(); }
};

// Masked patches per frame: round-half-up of ratio * n.
std::uint32_t masked_count(double ratio, std::uint32_t n);

// Ascending indices of [0, n) that are not in `masked`, whatever order the
// masked indices were drawn in.
std::vector<std::uint32_t> visible_complement(std::uint32_t n, std::span<const std::uint32_t> masked);

PatchSet patchify(const VideoClip& clip, std::uint32_t patch);
VideoClip unpatchify(const PatchSet& patches);

MaskPlan sample_mask(MaskStrategy strategy, double ratio, std::uint32_t frames, std::uint32_t patches_per_frame,
                     std::uint64_t seed);

// Projects visible patches and adds E_s[spatial] + E_t[frame]. Masked patches
// are never read and do not appear in the output.
VisibleTokens embed_and_gather(diff::Tape& tape, const PatchSet& patches, const MaskPlan& plan,
                               const PatchProjection& proj, const PositionalTables& pos);

VideoClip image_as_clip(const Image& image, std::uint64_t id = 0);

// Subset of frames in the given order.
VideoClip select_frames(const VideoClip& clip, std::span<const std::uint32_t> frames);
// Resize the shorter side to `size` (bilinear) and take the centered size x size crop.
VideoClip resize_center_crop(const VideoClip& clip, std::uint32_t size);

// Pixel value -> encoder input scale.
inline double normalize_sample(double v) { return v / 127.5 - 1.0; }

}  // namespace mac::vid
