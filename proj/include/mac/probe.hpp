#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "mac/dataset.hpp"
#include "mac/encoders.hpp"
#include "mac/textpipe.hpp"
#include "mac/vidpipe.hpp"

namespace mac {

struct ProbeConfig {
  std::size_t trials = 100;
  double rho_v = 0.6;
  double rho_t = 0.15;
  std::size_t clips = 16;  // first N samples; 0 = all
  std::size_t frames = 4;
  vid::MaskStrategy strategy = vid::MaskStrategy::random;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct MeanStd {
  double mean = 0, std = 0;
};

struct ProbeClip {
  std::uint64_t id = 0;
  MeanStd video;  // masked video vs full video
  MeanStd text;   // masked caption vs full caption
  MeanStd cross;  // masked video vs masked caption, same trial
};

struct ProbeReport {
  std::vector<ProbeClip> clips;
  // Means of the per-clip means.
  double video_mean = 0, text_mean = 0, cross_mean = 0;

  nlohmann::json to_json() const;
};

// Cosine similarity with norms taken separately, so identical inputs give 1.
double cosine(std::span<const double> a, std::span<const double> b);

// Re-masks each clip and caption `trials` times and compares projected
// embeddings against the unmasked view. Frames are strided from phase 0.
ProbeReport similarity_probe(const MacModel& model, const text::Vocabulary& vocab, const data::Dataset& data,
                             const ProbeConfig& cfg);

}  // namespace mac
