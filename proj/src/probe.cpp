#include "mac/probe.hpp"

#include <cmath>

#include "mac/errors.hpp"
#include "mac/rng.hpp"
#include "mac/trainer.hpp"

namespace mac {

namespace {

constexpr std::uint64_t kProbeVideo = 11;
constexpr std::uint64_t kProbeText = 12;

MeanStd summarize(const std::vector<double>& xs) {
  double sum = 0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

std::vector<double> values_of(const diff::Var& v) {
  auto s = v.value().values();
  return {s.begin(), s.end()};
}

}  // namespace

void ProbeConfig::validate() const {
  if (trials < 2) throw ConfigError("probe trials must be at least 2");
  if (!(rho_v >= 0.0 && rho_v < 1.0)) throw ConfigError("probe rho_v must lie in [0, 1)");
  if (!(rho_t >= 0.0 && rho_t < 1.0)) throw ConfigError("probe rho_t must lie in [0, 1)");
  if (frames == 0) throw ConfigError("probe frames must be positive");
  if (threads == 0) throw ConfigError("probe threads must be positive");
}

nlohmann::json ProbeConfig::to_json() const {
  return {{"trials", trials}, {"rho_v", rho_v},   {"rho_t", rho_t},
          {"clips", clips},   {"frames", frames}, {"strategy", vid::to_string(strategy)},
          {"seed", seed}};
}

nlohmann::json ProbeReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  for (const auto& c : clips) {
    per.push_back({{"id", c.id}, {"video", ms(c.video)}, {"text", ms(c.text)}, {"cross", ms(c.cross)}});
  }
  return {{"clips", per}, {"video_mean", video_mean}, {"text_mean", text_mean}, {"cross_mean", cross_mean}};
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine of vectors with different lengths");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine of a zero vector");
  // sqrt of the product: for a == b this is exactly na, so the result is 1
  return dot / std::sqrt(na * nb);
}

ProbeReport similarity_probe(const MacModel& model, const text::Vocabulary& vocab, const data::Dataset& data,
                             const ProbeConfig& cfg) {
  cfg.validate();
  const EncoderConfig& ec = model.config();
  const std::size_t count = cfg.clips == 0 ? data.size() : std::min(cfg.clips, data.size());
  const auto side = static_cast<std::uint32_t>(ec.frame_size / ec.patch);

  ProbeReport report;
  report.clips.resize(count);
  parallel_for(count, cfg.threads, [&](std::size_t c) {
    const vid::VideoClip& clip = data.clip(c);
    const auto frames = strided_frames(clip.frames, cfg.frames, 0);
    const text::TextSequence seq = text::tokenize(data.samples()[c].caption, vocab, ec.max_text_len);

    std::vector<double> full_v, full_t;
    {
      diff::Tape tape;
      full_v = values_of(embed_video(tape, model, clip, frames, nullptr));
      full_t = values_of(embed_text(tape, model, seq));
    }
    std::vector<double> sv, st, sx;
    for (std::size_t k = 0; k < cfg.trials; ++k) {
      diff::Tape tape;
      const vid::MaskPlan plan =
          vid::sample_mask(cfg.strategy, cfg.rho_v, static_cast<std::uint32_t>(frames.size()), side * side,
                           derive_seed(cfg.seed, {kProbeVideo, c, k}));
      const auto mv = values_of(embed_video(tape, model, clip, frames, &plan));
      const auto masked = text::apply_text_mask(seq, text::sample_text_mask(seq, cfg.rho_t, derive_seed(cfg.seed, {kProbeText, c, k})));
      const auto mt = values_of(embed_text(tape, model, masked));
      sv.push_back(cosine(mv, full_v));
      st.push_back(cosine(mt, full_t));
      sx.push_back(cosine(mv, mt));
    }
    report.clips[c] = {data.samples()[c].id, summarize(sv), summarize(st), summarize(sx)};
  });
  for (const auto& c : report.clips) {
    report.video_mean += c.video.mean;
    report.text_mean += c.text.mean;
    report.cross_mean += c.cross.mean;
  }
  report.video_mean /= static_cast<double>(count);
  report.text_mean /= static_cast<double>(count);
  report.cross_mean /= static_cast<double>(count);
  return report;
}

}  // namespace mac
