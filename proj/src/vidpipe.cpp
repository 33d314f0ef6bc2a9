#include "mac/vidpipe.hpp"

#include <algorithm>
#include <cmath>

#include "mac/errors.hpp"
#include "mac/rng.hpp"

namespace mac::vid {

void VideoClip::validate() const {
  if (frames < 1) throw ContractError("clip " + std::to_string(id) + " has no frames");
  if (samples.size() != static_cast<std::size_t>(frames) * frame_bytes()) {
    throw FormatError("clip " + std::to_string(id) + " holds " + std::to_string(samples.size()) +
                      " samples, expected " + std::to_string(static_cast<std::size_t>(frames) * frame_bytes()));
  }
}

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::none: return "none";
    case MaskStrategy::random: return "random";
    case MaskStrategy::tube: return "tube";
  }
  return "none";
}

MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "none") return MaskStrategy::none;
  if (s == "random") return MaskStrategy::random;
  if (s == "tube") return MaskStrategy::tube;
  throw ConfigError("unknown mask strategy '" + s + "' (expected none|random|tube)");
}

std::size_t MaskPlan::visible_count() const {
  std::size_t n = 0;
  for (const auto& f : visible) n += f.size();
  return n;
}

std::uint32_t masked_count(double ratio, std::uint32_t n) {
  // The epsilon absorbs representation error in products like 0.35 * 10.
  return static_cast<std::uint32_t>(std::floor(ratio * n + 0.5 + 1e-9));
}

std::vector<std::uint32_t> visible_complement(std::uint32_t n, std::span<const std::uint32_t> masked) {
  std::vector<bool> hidden(n, false);
  for (std::uint32_t i : masked) {
    if (i >= n) throw ContractError("masked index " + std::to_string(i) + " outside frame of " + std::to_string(n));
    hidden[i] = true;
  }
  std::vector<std::uint32_t> vis;
  for (std::uint32_t i = 0; i < n; ++i)
    if (!hidden[i]) vis.push_back(i);
  return vis;
}

PatchSet patchify(const VideoClip& clip, std::uint32_t patch) {
  clip.validate();
  if (patch == 0 || clip.height % patch != 0 || clip.width % patch != 0) {
    throw ConfigError("frame size " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  PatchSet ps;
  ps.patch = patch;
  ps.frames = clip.frames;
  ps.grid_h = clip.height / patch;
  ps.grid_w = clip.width / patch;
  ps.channels = clip.channels;
  const std::uint32_t n = ps.patches_per_frame();
  const std::size_t width = static_cast<std::size_t>(patch) * patch * clip.channels;
  ps.tokens = diff::Array({static_cast<std::size_t>(clip.frames) * n, width}, diff::Precision::f64);
  ps.frame_index.reserve(static_cast<std::size_t>(clip.frames) * n);
  ps.spatial_index.reserve(static_cast<std::size_t>(clip.frames) * n);
  for (std::uint32_t m = 0; m < clip.frames; ++m) {
    for (std::uint32_t s = 0; s < n; ++s) {
      const std::uint32_t gy = s / ps.grid_w, gx = s % ps.grid_w;
      const std::size_t row = static_cast<std::size_t>(m) * n + s;
      double* dst = ps.tokens.data() + row * width;
      for (std::uint32_t y = 0; y < patch; ++y)
        for (std::uint32_t x = 0; x < patch; ++x)
          for (std::uint32_t c = 0; c < clip.channels; ++c)
            *dst++ = clip.at(m, gy * patch + y, gx * patch + x, c);
      ps.frame_index.push_back(m);
      ps.spatial_index.push_back(s);
    }
  }
  return ps;
}

VideoClip unpatchify(const PatchSet& ps) {
  VideoClip clip;
  clip.frames = ps.frames;
  clip.height = ps.grid_h * ps.patch;
  clip.width = ps.grid_w * ps.patch;
  clip.channels = ps.channels;
  clip.samples.resize(static_cast<std::size_t>(clip.frames) * clip.frame_bytes());
  const std::size_t width = static_cast<std::size_t>(ps.patch) * ps.patch * ps.channels;
  for (std::size_t row = 0; row < ps.frame_index.size(); ++row) {
    const std::uint32_t m = ps.frame_index[row], s = ps.spatial_index[row];
    const std::uint32_t gy = s / ps.grid_w, gx = s % ps.grid_w;
    const double* src = ps.tokens.data() + row * width;
    for (std::uint32_t y = 0; y < ps.patch; ++y)
      for (std::uint32_t x = 0; x < ps.patch; ++x)
        for (std::uint32_t c = 0; c < ps.channels; ++c)
          clip.at(m, gy * ps.patch + y, gx * ps.patch + x, c) = static_cast<std::uint8_t>(*src++);
  }
  return clip;
}

MaskPlan sample_mask(MaskStrategy strategy, double ratio, std::uint32_t frames, std::uint32_t patches_per_frame,
                     std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("video mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  if (frames == 0 || patches_per_frame == 0) throw ContractError("mask plan over an empty patch grid");
  MaskPlan plan;
  plan.strategy = strategy;
  plan.ratio = strategy == MaskStrategy::none ? 0.0 : ratio;
  plan.frames = frames;
  plan.patches_per_frame = patches_per_frame;
  plan.seed = seed;

  const std::uint32_t masked = strategy == MaskStrategy::none ? 0 : masked_count(ratio, patches_per_frame);
  if (masked >= patches_per_frame) {
    throw ConfigError("degenerate mask plan: ratio " + std::to_string(ratio) + " masks all " +
                      std::to_string(patches_per_frame) + " patches of a frame");
  }

  auto complement = [patches_per_frame](const std::vector<std::uint32_t>& masked_idx) {
    return visible_complement(patches_per_frame, masked_idx);
  };

  Rng rng(seed);
  plan.visible.resize(frames);
  if (strategy == MaskStrategy::tube) {
    const auto vis = complement(rng.sample_without_replacement(patches_per_frame, masked));
    for (auto& f : plan.visible) f = vis;
  } else {
    for (auto& f : plan.visible) f = complement(rng.sample_without_replacement(patches_per_frame, masked));
  }
  return plan;
}

VisibleTokens embed_and_gather(diff::Tape& tape, const PatchSet& patches, const MaskPlan& plan,
                               const PatchProjection& proj, const PositionalTables& pos) {
  const std::uint32_t n = patches.patches_per_frame();
  if (plan.frames != patches.frames || plan.patches_per_frame != n || plan.visible.size() != patches.frames) {
    throw ContractError("mask plan (" + std::to_string(plan.frames) + " frames x " +
                        std::to_string(plan.patches_per_frame) + ") does not match patch set (" +
                        std::to_string(patches.frames) + " x " + std::to_string(n) + ")");
  }
  const std::size_t width = patches.tokens.row_width();
  VisibleTokens out;
  std::vector<double> rows;
  rows.reserve(plan.visible_count() * width);
  for (std::uint32_t m = 0; m < plan.frames; ++m) {
    for (std::uint32_t s : plan.visible[m]) {
      if (s >= n) throw ContractError("mask plan index " + std::to_string(s) + " outside frame of " + std::to_string(n));
      const double* src = patches.tokens.data() + (static_cast<std::size_t>(m) * n + s) * width;
      for (std::size_t j = 0; j < width; ++j) rows.push_back(normalize_sample(src[j]));
      out.frame_index.push_back(m);
      out.spatial_index.push_back(s);
    }
  }
  if (out.count() == 0) throw ContractError("mask plan leaves no visible tokens");

  if (proj.weight->value.dim(0) != width) {
    throw DimensionError("patch projection expects rows of " + std::to_string(proj.weight->value.dim(0)) +
                         " values, patches have " + std::to_string(width));
  }
  if (pos.spatial->value.dim(0) < n || pos.temporal->value.dim(0) < plan.frames) {
    throw ConfigError("clip with " + std::to_string(plan.frames) + " frames x " + std::to_string(n) +
                      " patches exceeds positional tables " + diff::shape_string(pos.temporal->value.shape()) + "/" +
                      diff::shape_string(pos.spatial->value.shape()));
  }
  diff::Var x = tape.constant(diff::Array({out.count(), width}, std::move(rows), diff::Precision::f64));
  diff::Var h = diff::add_rowvec(diff::matmul(x, tape.parameter(*proj.weight)), tape.parameter(*proj.bias));
  std::vector<std::int64_t> s_idx(out.spatial_index.begin(), out.spatial_index.end());
  std::vector<std::int64_t> t_idx(out.frame_index.begin(), out.frame_index.end());
  diff::Var es = diff::embedding_lookup(tape.parameter(*pos.spatial), s_idx);
  diff::Var et = diff::embedding_lookup(tape.parameter(*pos.temporal), t_idx);
  out.embeddings = diff::add(diff::add(h, es), et);
  return out;
}

VideoClip image_as_clip(const Image& image, std::uint64_t id) {
  VideoClip clip;
  clip.frames = 1;
  clip.height = image.height;
  clip.width = image.width;
  clip.channels = image.channels;
  clip.samples = image.samples;
  clip.id = id;
  clip.validate();
  return clip;
}

VideoClip select_frames(const VideoClip& clip, std::span<const std::uint32_t> frames) {
  VideoClip out = clip;
  out.frames = static_cast<std::uint32_t>(frames.size());
  out.samples.clear();
  out.samples.reserve(frames.size() * clip.frame_bytes());
  for (std::uint32_t f : frames) {
    if (f >= clip.frames) {
      throw ContractError("frame " + std::to_string(f) + " out of range for clip with " +
                          std::to_string(clip.frames) + " frames");
    }
    const auto begin = clip.samples.begin() + static_cast<std::ptrdiff_t>(f * clip.frame_bytes());
    out.samples.insert(out.samples.end(), begin, begin + static_cast<std::ptrdiff_t>(clip.frame_bytes()));
  }
  return out;
}

VideoClip resize_center_crop(const VideoClip& clip, std::uint32_t size) {
  clip.validate();
  if (clip.height == size && clip.width == size) return clip;
  const double scale = static_cast<double>(size) / std::min(clip.height, clip.width);
  const std::uint32_t rh = std::max<std::uint32_t>(size, static_cast<std::uint32_t>(std::lround(clip.height * scale)));
  const std::uint32_t rw = std::max<std::uint32_t>(size, static_cast<std::uint32_t>(std::lround(clip.width * scale)));
  const std::uint32_t oy = (rh - size) / 2, ox = (rw - size) / 2;
  VideoClip out;
  out.frames = clip.frames;
  out.height = size;
  out.width = size;
  out.channels = clip.channels;
  out.id = clip.id;
  out.samples.resize(static_cast<std::size_t>(out.frames) * out.frame_bytes());
  for (std::uint32_t m = 0; m < clip.frames; ++m)
    for (std::uint32_t y = 0; y < size; ++y)
      for (std::uint32_t x = 0; x < size; ++x) {
        // Pixel-center mapping back into the source frame.
        const double sy = std::clamp((y + oy + 0.5) / scale - 0.5, 0.0, clip.height - 1.0);
        const double sx = std::clamp((x + ox + 0.5) / scale - 0.5, 0.0, clip.width - 1.0);
        const auto y0 = static_cast<std::uint32_t>(sy), x0 = static_cast<std::uint32_t>(sx);
        const std::uint32_t y1 = std::min(y0 + 1, clip.height - 1), x1 = std::min(x0 + 1, clip.width - 1);
        const double fy = sy - y0, fx = sx - x0;
        for (std::uint32_t c = 0; c < clip.channels; ++c) {
          const double v = (1 - fy) * ((1 - fx) * clip.at(m, y0, x0, c) + fx * clip.at(m, y0, x1, c)) +
                           fy * ((1 - fx) * clip.at(m, y1, x0, c) + fx * clip.at(m, y1, x1, c));
          out.at(m, y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
  return out;
}

}  // namespace mac::vid
