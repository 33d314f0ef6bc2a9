#include <algorithm>
#include <set>

#include "doctest.h"
#include "mac/errors.hpp"
#include "mac/rng.hpp"
#include "mac/vidpipe.hpp"

using namespace mac;
using namespace mac::vid;

namespace {

VideoClip random_clip(std::uint32_t m, std::uint32_t h, std::uint32_t w, std::uint64_t seed) {
  VideoClip c;
  c.frames = m;
  c.height = h;
  c.width = w;
  c.channels = 3;
  c.samples.resize(static_cast<std::size_t>(m) * h * w * 3);
  Rng rng(seed);
  for (auto& v : c.samples) v = static_cast<std::uint8_t>(rng.below(256));
  return c;
}

struct Tables {
  diff::ParameterSet params;
  PatchProjection proj;
  PositionalTables pos;

  Tables(std::size_t patch_width, std::size_t d, std::size_t n_max, std::size_t m_max, std::uint64_t seed) {
    Rng rng(seed);
    auto rnd = [&rng](diff::Shape s) {
      diff::Array a(std::move(s));
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.truncated_normal(0.02);
      a.round_to_precision();
      return a;
    };
    proj.weight = &params.add("w", rnd({patch_width, d}));
    proj.bias = &params.add("b", rnd({d}));
    pos.spatial = &params.add("es", rnd({n_max, d}));
    pos.temporal = &params.add("et", rnd({m_max, d}));
  }
};

}  // namespace

TEST_CASE("patchify token counts") {
  CHECK(patchify(random_clip(1, 224, 224, 1), 16).patches_per_frame() == 196);
  PatchSet ps = patchify(random_clip(4, 32, 32, 2), 16);
  CHECK(ps.tokens.dim(0) == 16);
  CHECK(ps.tokens.dim(1) == 16 * 16 * 3);
  // Frame-major, raster-order spatial.
  CHECK(ps.frame_index[5] == 1);
  CHECK(ps.spatial_index[5] == 1);
}

TEST_CASE("patchify round trip is bit-identical") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    VideoClip c = random_clip(3, 24, 40, seed);
    VideoClip back = unpatchify(patchify(c, 8));
    CHECK(back.samples == c.samples);
    CHECK(back.frames == c.frames);
  }
}

TEST_CASE("indivisible resolution is a configuration error") {
  CHECK_THROWS_AS(patchify(random_clip(1, 30, 32, 0), 8), ConfigError);
}

TEST_CASE("mask counts follow round-half-up per frame") {
  MaskPlan p = sample_mask(MaskStrategy::random, 0.6, 4, 196, 9);
  for (const auto& f : p.visible) CHECK(f.size() == 78);
  CHECK(masked_count(0.6, 196) == 118);
  CHECK(masked_count(0.5, 5) == 3);
  CHECK(masked_count(0.35, 10) == 4);

  MaskPlan zero = sample_mask(MaskStrategy::random, 0.0, 4, 16, 1);
  for (const auto& f : zero.visible) CHECK(f.size() == 16);

  MaskPlan none = sample_mask(MaskStrategy::none, 0.9, 2, 16, 1);
  for (const auto& f : none.visible) CHECK(f.size() == 16);
}

TEST_CASE("visible counts are exact over a ratio grid") {
  for (std::uint32_t n : {1u, 2u, 7u, 16u, 49u, 196u}) {
    for (int step = 0; step < 20; ++step) {
      const double ratio = step * 0.05;
      const std::uint32_t masked = masked_count(ratio, n);
      if (masked >= n) {
        CHECK_THROWS_AS(sample_mask(MaskStrategy::random, ratio, 3, n, 1), ConfigError);
        continue;
      }
      for (MaskStrategy s : {MaskStrategy::random, MaskStrategy::tube}) {
        MaskPlan p = sample_mask(s, ratio, 3, n, step);
        for (const auto& f : p.visible) {
          CHECK(f.size() == n - masked);
          CHECK(std::is_sorted(f.begin(), f.end()));
          CHECK(std::adjacent_find(f.begin(), f.end()) == f.end());
        }
      }
    }
  }
}

TEST_CASE("ratio outside [0,1) is rejected") {
  CHECK_THROWS_AS(sample_mask(MaskStrategy::random, 1.0, 1, 16, 0), ConfigError);
  CHECK_THROWS_AS(sample_mask(MaskStrategy::random, -0.1, 1, 16, 0), ConfigError);
  CHECK_THROWS_AS(sample_mask(MaskStrategy::random, 0.98, 1, 16, 0), ConfigError);
}

TEST_CASE("tube masks replicate across frames; random masks differ") {
  MaskPlan tube = sample_mask(MaskStrategy::tube, 0.6, 4, 16, 3);
  for (std::uint32_t m = 1; m < 4; ++m) CHECK(tube.visible[m] == tube.visible[0]);

  int differing = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    MaskPlan r = sample_mask(MaskStrategy::random, 0.6, 4, 16, seed);
    bool all_same = true;
    for (std::uint32_t m = 1; m < 4; ++m) all_same = all_same && r.visible[m] == r.visible[0];
    if (!all_same) ++differing;
  }
  CHECK(differing > 990);
}

TEST_CASE("random masking is uniform over spatial indices") {
  const std::uint32_t n = 20;
  const double ratio = 0.6;
  const int trials = 10000;
  std::vector<int> masked(n, 0);
  for (int seed = 0; seed < trials; ++seed) {
    MaskPlan p = sample_mask(MaskStrategy::random, ratio, 1, n, static_cast<std::uint64_t>(seed) * 7919);
    std::set<std::uint32_t> vis(p.visible[0].begin(), p.visible[0].end());
    for (std::uint32_t i = 0; i < n; ++i)
      if (!vis.count(i)) ++masked[i];
  }
  REQUIRE(masked_count(ratio, n) == 12);
  for (std::uint32_t i = 0; i < n; ++i) {
    CAPTURE(i);
    CHECK(std::abs(masked[i] / static_cast<double>(trials) - ratio) < 0.02);
  }
}

TEST_CASE("embed_and_gather drops masked tokens and shares E_s across frames") {
  VideoClip c = random_clip(4, 32, 32, 4);
  PatchSet ps = patchify(c, 8);
  Tables tb(8 * 8 * 3, 12, 16, 4, 1);

  diff::Tape t;
  MaskPlan all = sample_mask(MaskStrategy::none, 0.0, 4, 16, 0);
  VisibleTokens full = embed_and_gather(t, ps, all, tb.proj, tb.pos);
  CHECK(full.count() == 64);
  CHECK(full.embeddings.shape() == diff::Shape{64, 12});

  MaskPlan masked = sample_mask(MaskStrategy::random, 0.6, 4, 16, 5);
  VisibleTokens part = embed_and_gather(t, ps, masked, tb.proj, tb.pos);
  CHECK(part.count() == 4 * 6);

  // Zero projection and temporal table: rows reduce to E_s[spatial].
  tb.proj.weight->value.fill(0.0);
  tb.proj.bias->value.fill(0.0);
  tb.pos.temporal->value.fill(0.0);
  diff::Tape t2;
  VisibleTokens es_only = embed_and_gather(t2, ps, all, tb.proj, tb.pos);
  const diff::Array& v = es_only.embeddings.value();
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(v.at(3, j) == v.at(16 + 3, j));
    CHECK(v.at(3, j) == v.at(48 + 3, j));
    CHECK(v.at(3, j) == tb.pos.spatial->value.at(3, j));
  }
}

TEST_CASE("visible lists are canonical regardless of draw order") {
  std::vector<std::uint32_t> a{9, 2, 14, 5};
  std::vector<std::uint32_t> b{5, 14, 2, 9};
  CHECK(visible_complement(16, a) == visible_complement(16, b));

  VideoClip c = random_clip(2, 16, 16, 8);
  PatchSet ps = patchify(c, 8);
  Tables tb(8 * 8 * 3, 8, 4, 2, 3);
  MaskPlan p1 = sample_mask(MaskStrategy::random, 0.5, 2, 4, 1);
  MaskPlan p2 = p1;
  std::vector<std::uint32_t> m0{3, 0}, m1{2, 1};
  std::vector<std::uint32_t> m0r{0, 3}, m1r{1, 2};
  p1.visible = {visible_complement(4, m0), visible_complement(4, m1)};
  p2.visible = {visible_complement(4, m0r), visible_complement(4, m1r)};
  diff::Tape t;
  CHECK(embed_and_gather(t, ps, p1, tb.proj, tb.pos).embeddings.value() ==
        embed_and_gather(t, ps, p2, tb.proj, tb.pos).embeddings.value());
}

TEST_CASE("masked patch content is never read") {
  VideoClip c = random_clip(4, 32, 32, 10);
  Tables tb(8 * 8 * 3, 8, 16, 4, 2);
  MaskPlan plan = sample_mask(MaskStrategy::random, 0.6, 4, 16, 77);
  diff::Tape t;
  diff::Array base = embed_and_gather(t, patchify(c, 8), plan, tb.proj, tb.pos).embeddings.value();
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    VideoClip fuzzed = c;
    for (std::uint32_t m = 0; m < 4; ++m) {
      std::set<std::uint32_t> vis(plan.visible[m].begin(), plan.visible[m].end());
      for (std::uint32_t s = 0; s < 16; ++s) {
        if (vis.count(s)) continue;
        for (std::uint32_t y = 0; y < 8; ++y)
          for (std::uint32_t x = 0; x < 8; ++x)
            for (std::uint32_t ch = 0; ch < 3; ++ch)
              fuzzed.at(m, (s / 4) * 8 + y, (s % 4) * 8 + x, ch) = static_cast<std::uint8_t>(rng.below(256));
      }
    }
    CHECK(embed_and_gather(t, patchify(fuzzed, 8), plan, tb.proj, tb.pos).embeddings.value() == base);
  }
}

TEST_CASE("images become single-frame clips") {
  Image img;
  img.height = 224;
  img.width = 224;
  img.samples.resize(224 * 224 * 3);
  Rng rng(3);
  for (auto& v : img.samples) v = static_cast<std::uint8_t>(rng.below(256));
  VideoClip c = image_as_clip(img);
  CHECK(c.frames == 1);
  PatchSet a = patchify(c, 16);
  PatchSet b = patchify(image_as_clip(img), 16);
  CHECK(a.tokens.dim(0) == 196);
  CHECK(a.tokens == b.tokens);
  CHECK(a.spatial_index == b.spatial_index);
}

TEST_CASE("resize and center crop") {
  VideoClip c = random_clip(2, 48, 64, 1);
  VideoClip r = resize_center_crop(c, 32);
  CHECK(r.height == 32);
  CHECK(r.width == 32);
  CHECK(r.frames == 2);
  VideoClip same = random_clip(1, 32, 32, 2);
  CHECK(resize_center_crop(same, 32).samples == same.samples);

  // A constant frame stays constant.
  VideoClip flat = c;
  std::fill(flat.samples.begin(), flat.samples.end(), 77);
  for (auto v : resize_center_crop(flat, 20).samples) CHECK(v == 77);

  const std::vector<std::uint32_t> pick{1};
  VideoClip one = select_frames(c, pick);
  CHECK(one.frames == 1);
  CHECK(std::equal(one.samples.begin(), one.samples.end(), c.samples.begin() + c.frame_bytes()));
}
