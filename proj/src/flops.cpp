#include "mac/flops.hpp"

#include "mac/errors.hpp"

namespace mac {

namespace {

constexpr double kNonlinear = 5.0;

double linear_flops(double rows, double in, double out) { return 2.0 * rows * in * out + rows * out; }

std::uint64_t attention_params(std::uint64_t d) { return 4 * (d * d + d); }
std::uint64_t norm_params(std::uint64_t d) { return 2 * d; }
std::uint64_t mlp_params(std::uint64_t d, std::uint64_t hidden) { return d * hidden + hidden + hidden * d + d; }

// Projections, attention core and output for `rows` rows. `score_elems` is
// the number of query-key pairs summed over groups (per head).
double attention_flops(double rows, double d, double heads, double score_elems) {
  double f = 4.0 * linear_flops(rows, d, d);
  f += 2.0 * 2.0 * score_elems * d;  // QK^T and AV, across all heads d = heads * dh
  f += kNonlinear * heads * score_elems;
  return f;
}

double mlp_flops(double rows, double d, double hidden) {
  return linear_flops(rows, d, hidden) + kNonlinear * rows * hidden + linear_flops(rows, hidden, d);
}

}  // namespace

std::uint64_t video_param_count(const EncoderConfig& c) {
  const std::uint64_t d = c.width;
  std::uint64_t block = 3 * norm_params(d) + 2 * attention_params(d) + mlp_params(d, d * c.mlp_ratio);
  return c.patch_width() * d + d + (c.max_patches + c.max_frames) * d + d + c.depth * block + norm_params(d);
}

std::uint64_t text_param_count(const EncoderConfig& c) {
  const std::uint64_t w = c.text_width;
  std::uint64_t block = 2 * norm_params(w) + attention_params(w) + mlp_params(w, w * c.mlp_ratio);
  return c.vocab_size * w + c.max_text_len * w + c.text_depth * block + norm_params(w);
}

std::uint64_t head_param_count(const EncoderConfig& c) {
  return c.width * c.projection + c.projection + c.text_width * c.projection + c.projection + 1;
}

FlopsReport count_params_flops(const EncoderConfig& cfg, std::size_t frames, std::size_t visible_per_frame,
                               std::size_t text_len) {
  cfg.validate();
  const std::size_t grid = cfg.frame_size / cfg.patch;
  const std::size_t n = grid * grid;
  if (visible_per_frame > n) throw ConfigError("visible_per_frame exceeds patches per frame");
  if (frames == 0 || frames > cfg.max_frames) throw ConfigError("frames outside [1, max_frames]");
  if (text_len == 0 || text_len > cfg.max_text_len) throw ConfigError("text_len outside [1, max_text_len]");

  FlopsReport r;
  r.frames = frames;
  r.visible_per_frame = visible_per_frame;
  r.patches_per_frame = n;
  r.text_len = text_len;

  const double d = static_cast<double>(cfg.width);
  const double heads = static_cast<double>(cfg.heads);
  const double tokens = static_cast<double>(frames * visible_per_frame);
  const double rows = tokens + 1.0;

  double v = linear_flops(tokens, static_cast<double>(cfg.patch_width()), d) + 2.0 * tokens * d;
  const bool temporal = frames > 1 && visible_per_frame > 0;
  // Each non-[CLS] query sees its group plus [CLS]; [CLS] sees every row.
  const double tgroup = static_cast<double>(visible_per_frame) / static_cast<double>(n) * static_cast<double>(frames);
  const double t_scores = tokens * (tgroup + 1.0) + rows;
  const double s_scores = tokens * (static_cast<double>(visible_per_frame) + 1.0) + rows;
  double block = 0.0;
  if (temporal) block += kNonlinear * rows * d + attention_flops(rows, d, heads, t_scores) + rows * d;
  block += kNonlinear * rows * d + attention_flops(rows, d, heads, s_scores) + rows * d;
  block += kNonlinear * rows * d + mlp_flops(rows, d, d * static_cast<double>(cfg.mlp_ratio)) + rows * d;
  v += static_cast<double>(cfg.depth) * block + kNonlinear * d;
  r.video = {video_param_count(cfg), v};

  const double w = static_cast<double>(cfg.text_width);
  const double l = static_cast<double>(text_len);
  double t = l * w;
  double tblock = kNonlinear * l * w + attention_flops(l, w, static_cast<double>(cfg.text_heads), l * l) + l * w;
  tblock += kNonlinear * l * w + mlp_flops(l, w, w * static_cast<double>(cfg.mlp_ratio)) + l * w;
  t += static_cast<double>(cfg.text_depth) * tblock + kNonlinear * w;
  r.text = {text_param_count(cfg), t};

  const double p = static_cast<double>(cfg.projection);
  r.heads = {head_param_count(cfg), linear_flops(1, d, p) + linear_flops(1, w, p) + 2.0 * kNonlinear * p};
  return r;
}

nlohmann::json FlopsReport::to_json() const {
  auto sub = [](const SubnetCost& s) { return nlohmann::json{{"params", s.params}, {"flops", s.flops}}; };
  return {{"video_encoder", sub(video)},
          {"text_encoder", sub(text)},
          {"heads", sub(heads)},
          {"total_params", total_params()},
          {"total_flops", total_flops()},
          {"total_gflops", total_flops() / 1e9},
          {"total_params_millions", static_cast<double>(total_params()) / 1e6},
          {"frames", frames},
          {"visible_per_frame", visible_per_frame},
          {"patches_per_frame", patches_per_frame},
          {"text_len", text_len}};
}

}  // namespace mac
