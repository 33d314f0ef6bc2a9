#pragma once

#include <cstdint>

#include "json.hpp"
#include "mac/encoders.hpp"

namespace mac {

// Analytic cost accounting. 1 multiply-accumulate = 2 FLOPs; softmax,
// layernorm and GELU cost 5 FLOPs per element; bias and residual adds 1.
struct SubnetCost {
  std::uint64_t params = 0;
  double flops = 0.0;
};

struct FlopsReport {
  SubnetCost video, text, heads;  // heads include the log-temperature
  std::size_t frames = 0;
  std::size_t visible_per_frame = 0;
  std::size_t patches_per_frame = 0;
  std::size_t text_len = 0;

  std::uint64_t total_params() const { return video.params + text.params + heads.params; }
  double total_flops() const { return video.flops + text.flops + heads.flops; }
  nlohmann::json to_json() const;
};

std::uint64_t video_param_count(const EncoderConfig& cfg);
std::uint64_t text_param_count(const EncoderConfig& cfg);
std::uint64_t head_param_count(const EncoderConfig& cfg);

// Temporal groups are taken to hold visible_per_frame / N * frames tokens each
// (N groups), spatial groups visible_per_frame tokens (one per frame); every
// group also sees the [CLS] key, and [CLS] attends to all rows. Temporal
// attention is not counted for single-frame input.
FlopsReport count_params_flops(const EncoderConfig& cfg, std::size_t frames, std::size_t visible_per_frame,
                               std::size_t text_len);

}  // namespace mac
