#include "mac/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mac/errors.hpp"
#include "mac/rng.hpp"
#include "mac/textpipe.hpp"

namespace mac::data {

namespace fs = std::filesystem;

namespace {

constexpr char kClipMagic[5] = {'M', 'A', 'C', 'V', '1'};
constexpr std::size_t kClipHeader = sizeof(kClipMagic) + 4 * 4;
constexpr int kObject = 10;
constexpr int kSpeed = 3;
constexpr int kJitter = 2;

constexpr std::array<std::array<int, 3>, 4> kRgb = {{{220, 40, 40}, {40, 200, 60}, {50, 80, 230}, {230, 210, 40}}};

// Footprints of 100, 64, 36 and 12 pixels.
bool inside(std::uint32_t shape, int x, int y) {
  const double cx = x - 4.5, cy = y - 4.5;
  switch (shape) {
    case 0: return true;
    case 1: return x < 2 || x > 7 || y < 2 || y > 7;
    case 2: return std::abs(cx) <= 1.0 || std::abs(cy) <= 1.0;
    default: return cx * cx + cy * cy <= 2.5;
  }
}

template <std::size_t N>
std::optional<std::uint32_t> lookup(const std::array<const char*, N>& names, const std::string& w) {
  for (std::size_t i = 0; i < N; ++i)
    if (w == names[i]) return static_cast<std::uint32_t>(i);
  return std::nullopt;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::string clip_name(std::uint64_t i) {
  std::ostringstream s;
  s << "clips/" << std::setw(6) << std::setfill('0') << i << ".macv";
  return s.str();
}

}  // namespace

std::uint32_t Latent::index() const {
  return (shape * static_cast<std::uint32_t>(kColors.size()) + color) * static_cast<std::uint32_t>(kMotions.size()) + motion;
}

Latent Latent::from_index(std::uint32_t i) {
  i %= kLatentCount;
  const auto m = static_cast<std::uint32_t>(kMotions.size()), c = static_cast<std::uint32_t>(kColors.size());
  return {i / (m * c), (i / m) % c, i % m};
}

void DatasetSpec::validate() const {
  if (count == 0) throw ConfigError("dataset count must be positive");
  if (frames == 0) throw ConfigError("dataset frames must be positive");
  if (frame_size < kObject + kSpeed * (frames - 1)) {
    throw ConfigError("frame_size " + std::to_string(frame_size) + " too small for " + std::to_string(frames) +
                      " frames of motion (needs " + std::to_string(kObject + kSpeed * (frames - 1)) + ")");
  }
}

nlohmann::json DatasetSpec::to_json() const {
  return {{"count", count}, {"frames", frames}, {"frame_size", frame_size}, {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number_unsigned()) throw ConfigError("dataset spec key '" + k + "' must be a non-negative integer");
    if (k == "count") s.count = v.get<std::uint32_t>();
    else if (k == "frames") s.frames = v.get<std::uint32_t>();
    else if (k == "frame_size") s.frame_size = v.get<std::uint32_t>();
    else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else throw ConfigError("unknown dataset spec key '" + k + "'");
  }
  s.validate();
  return s;
}

std::string caption_for(const Latent& z) {
  const std::string c = kColors[z.color], s = kShapes[z.shape], m = kMotions[z.motion];
  if (z.index() % 2 == 0) return "a " + c + " " + s + " moving " + m;
  return "the " + c + " " + s + " moves " + m;
}

std::optional<Latent> parse_caption(const std::string& caption) {
  auto w = text::normalize_words(caption);
  if (w.size() != 5) return std::nullopt;
  auto c = lookup(kColors, w[1]);
  auto s = lookup(kShapes, w[2]);
  auto m = lookup(kMotions, w[4]);
  if (!c || !s || !m) return std::nullopt;
  Latent z{*s, *c, *m};
  const bool even = z.index() % 2 == 0;
  if (even && (w[0] != "a" || w[3] != "moving")) return std::nullopt;
  if (!even && (w[0] != "the" || w[3] != "moves")) return std::nullopt;
  return z;
}

vid::VideoClip render_clip(const Latent& z, const DatasetSpec& spec, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  const int size = static_cast<int>(spec.frame_size);
  const int free = size - kObject;
  // Start so the whole path stays inside the frame.
  // Direction sign is drawn per sample; the label is the axis of motion. Paths
  // are centred with a small jitter.
  auto axis = [&](int step) {
    const int sign = rng.below(2) ? 1 : -1;
    const int travel = step * static_cast<int>(spec.frames - 1);
    const int centre = (free - travel) / 2;
    const int jitter = static_cast<int>(rng.below(2 * kJitter + 1)) - kJitter;
    const int start = std::clamp(centre + jitter, 0, free - travel);
    return std::pair{sign > 0 ? start : start + travel, sign * step};
  };
  const int hs = z.motion == 1 || z.motion == 3 ? kSpeed : 0;
  const int vs = z.motion == 2 || z.motion == 3 ? kSpeed : 0;
  const auto [x0, dx] = axis(hs);
  const auto [y0, dy] = axis(vs);
  vid::VideoClip clip;
  clip.frames = spec.frames;
  clip.height = spec.frame_size;
  clip.width = spec.frame_size;
  clip.channels = 3;
  clip.samples.resize(static_cast<std::size_t>(spec.frames) * clip.frame_bytes());
  for (std::uint32_t m = 0; m < spec.frames; ++m) {
    const int ox = x0 + dx * static_cast<int>(m), oy = y0 + dy * static_cast<int>(m);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool hit = x >= ox && x < ox + kObject && y >= oy && y < oy + kObject && inside(z.shape, x - ox, y - oy);
        for (std::uint32_t c = 0; c < 3; ++c) {
          int v = hit ? kRgb[z.color][c] + static_cast<int>(rng.below(25)) - 12 : static_cast<int>(rng.below(41));
          clip.at(m, static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x), c) =
              static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
      }
    }
  }
  return clip;
}

std::vector<std::uint8_t> encode_clip(const vid::VideoClip& clip) {
  clip.validate();
  std::vector<std::uint8_t> out(kClipMagic, kClipMagic + sizeof(kClipMagic));
  put_u32(out, clip.frames);
  put_u32(out, clip.height);
  put_u32(out, clip.width);
  put_u32(out, clip.channels);
  out.insert(out.end(), clip.samples.begin(), clip.samples.end());
  return out;
}

void write_clip(const fs::path& path, const vid::VideoClip& clip) {
  auto bytes = encode_clip(clip);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write clip " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("short write on clip " + path.string());
}

vid::VideoClip read_clip(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open clip " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < kClipHeader || std::memcmp(bytes.data(), kClipMagic, sizeof(kClipMagic)) != 0) {
    throw FormatError(path.string() + ": not a MACV1 clip");
  }
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  vid::VideoClip c;
  c.frames = u32(5);
  c.height = u32(9);
  c.width = u32(13);
  c.channels = u32(17);
  const std::size_t expect = static_cast<std::size_t>(c.frames) * c.height * c.width * c.channels;
  if (bytes.size() != kClipHeader + expect) {
    throw FormatError(path.string() + ": expected " + std::to_string(kClipHeader + expect) + " bytes, found " +
                      std::to_string(bytes.size()));
  }
  c.samples.assign(bytes.begin() + kClipHeader, bytes.end());
  return c;
}

void generate_dataset(const DatasetSpec& spec, const fs::path& root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(root / "clips", ec);
  if (ec) throw FormatError("cannot create dataset directory " + root.string() + ": " + ec.message());
  std::ofstream manifest(root / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw FormatError("cannot write " + (root / "manifest.jsonl").string());
  for (std::uint64_t i = 0; i < spec.count; ++i) {
    const Latent z = Latent::from_index(static_cast<std::uint32_t>(i % kLatentCount));
    const std::string rel = clip_name(i);
    vid::VideoClip clip = render_clip(z, spec, derive_seed(spec.seed, {i}));
    clip.id = i;
    write_clip(root / rel, clip);
    nlohmann::json rec = {{"id", i},
                          {"caption", caption_for(z)},
                          {"clip", rel},
                          {"latent", {{"shape", kShapes[z.shape]}, {"color", kColors[z.color]}, {"motion", kMotions[z.motion]}}}};
    manifest << rec.dump() << '\n';
  }
  std::ofstream(root / "spec.json", std::ios::binary) << spec.to_json().dump(2) << '\n';
  if (!manifest) throw FormatError("short write on manifest in " + root.string());
}

Dataset Dataset::load(const fs::path& root) {
  Dataset d;
  d.root_ = root;
  const fs::path mpath = root / "manifest.jsonl";
  std::ifstream in(mpath);
  if (!in) throw FormatError("cannot open " + mpath.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = mpath.string() + ":" + std::to_string(lineno);
    try {
      auto j = nlohmann::json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::uint64_t>();
      s.caption = j.at("caption").get<std::string>();
      s.clip = j.at("clip").get<std::string>();
      const auto& lat = j.at("latent");
      auto sh = lookup(kShapes, lat.at("shape").get<std::string>());
      auto co = lookup(kColors, lat.at("color").get<std::string>());
      auto mo = lookup(kMotions, lat.at("motion").get<std::string>());
      if (!sh || !co || !mo) throw FormatError(where + ": unknown latent factor");
      s.latent = {*sh, *co, *mo};
      d.samples_.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    vid::VideoClip c = read_clip(root / d.samples_.back().clip);
    c.id = d.samples_.back().id;
    d.clips_.push_back(std::move(c));
  }
  if (d.samples_.empty()) throw FormatError(mpath.string() + ": dataset is empty");
  return d;
}

std::vector<std::string> Dataset::captions() const {
  std::vector<std::string> out;
  for (const auto& s : samples_) out.push_back(s.caption);
  return out;
}

}  // namespace mac::data
