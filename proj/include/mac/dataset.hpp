#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mac/vidpipe.hpp"

namespace mac::data {

inline constexpr std::array<const char*, 4> kShapes = {"square", "ring", "cross", "dot"};
inline constexpr std::array<const char*, 4> kColors = {"red", "green", "blue", "yellow"};
inline constexpr std::array<const char*, 4> kMotions = {"nowhere", "horizontally", "vertically", "diagonally"};
inline constexpr std::size_t kLatentCount = kShapes.size() * kColors.size() * kMotions.size();

struct Latent {
  std::uint32_t shape = 0;
  std::uint32_t color = 0;
  std::uint32_t motion = 0;

  std::uint32_t index() const;  // 0..63
  static Latent from_index(std::uint32_t i);
  friend bool operator==(const Latent&, const Latent&) = default;
};

struct DatasetSpec {
  std::uint32_t count = 256;
  std::uint32_t frames = 8;
  std::uint32_t frame_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

// The template is a function of the latent tuple, so equal tuples share a caption.
std::string caption_for(const Latent& z);
std::optional<Latent> parse_caption(const std::string& caption);

// Sample i has latent tuple i mod 64; position and pixel noise come from the
// per-sample seed.
vid::VideoClip render_clip(const Latent& z, const DatasetSpec& spec, std::uint64_t sample_seed);

// "MACV1", then M, H, W, C as u32 little-endian, then the samples.
void write_clip(const std::filesystem::path& path, const vid::VideoClip& clip);
vid::VideoClip read_clip(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_clip(const vid::VideoClip& clip);

struct Sample {
  std::uint64_t id = 0;
  std::string caption;
  std::string clip;  // relative to the dataset root
  Latent latent;
};

// Writes manifest.jsonl, spec.json and clips/NNNNNN.macv under `root`.
void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

class Dataset {
 public:
  static Dataset load(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  // Clips are read once at load time.
  const vid::VideoClip& clip(std::size_t i) const { return clips_.at(i); }
  std::vector<std::string> captions() const;

 private:
  std::filesystem::path root_;
  std::vector<Sample> samples_;
  std::vector<vid::VideoClip> clips_;
};

}  // namespace mac::data
