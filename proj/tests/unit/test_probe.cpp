#include <doctest.h>

#include "mac/errors.hpp"
#include "mac/probe.hpp"
#include "support/tmpdir.hpp"

using namespace mac;
using mac::testing::TempDir;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.depth = 1;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.text_depth = 1;
  c.text_width = 16;
  c.text_heads = 2;
  c.projection = 8;
  return c;
}

struct Fixture {
  TempDir dir;
  data::Dataset data;
  text::Vocabulary vocab;
  Fixture() : data(make(dir)) {
    auto caps = data.captions();
    vocab = text::Vocabulary::build(caps);
  }
  static data::Dataset make(const TempDir& d) {
    data::DatasetSpec spec;
    spec.count = 4;
    spec.seed = 2;
    data::generate_dataset(spec, d / "data");
    return data::Dataset::load(d / "data");
  }
};

}  // namespace

TEST_CASE("cosine") {
  std::vector<double> a{1, 2, 3}, b{-1, -2, -3}, c{3, 0, -1};
  CHECK(cosine(a, a) == 1.0);
  CHECK(cosine(a, b) == -1.0);
  CHECK(cosine(a, c) == doctest::Approx(0.0));
  std::vector<double> odd{0.1, 0.7, 1e-3, 0.33};
  CHECK(cosine(odd, odd) == 1.0);
  CHECK_THROWS_AS(cosine(a, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("unmasked views are exactly self-similar") {
  Fixture f;
  MacModel m(tiny(), 3);
  ProbeConfig cfg;
  cfg.trials = 5;
  cfg.rho_v = 0.0;
  cfg.rho_t = 0.0;
  auto r = similarity_probe(m, f.vocab, f.data, cfg);
  REQUIRE(r.clips.size() == 4);
  for (const auto& c : r.clips) {
    CHECK(c.video.mean == 1.0);
    CHECK(c.video.std == 0.0);
    CHECK(c.text.mean == 1.0);
    CHECK(c.text.std == 0.0);
  }
  CHECK(r.video_mean == 1.0);
}

TEST_CASE("masked probe is deterministic and below one") {
  Fixture f;
  MacModel m(tiny(), 3);
  ProbeConfig cfg;
  cfg.trials = 6;
  cfg.clips = 3;
  cfg.seed = 4;
  auto a = similarity_probe(m, f.vocab, f.data, cfg);
  cfg.threads = 2;
  auto b = similarity_probe(m, f.vocab, f.data, cfg);
  CHECK(a.to_json().dump() == b.to_json().dump());
  REQUIRE(a.clips.size() == 3);
  for (const auto& c : a.clips) {
    CHECK(c.video.mean < 1.0);
    CHECK(c.video.std > 0.0);
    CHECK(c.cross.mean <= 1.0);
  }
  cfg.seed = 5;
  CHECK(similarity_probe(m, f.vocab, f.data, cfg).video_mean != a.video_mean);

  for (auto s : {vid::MaskStrategy::tube, vid::MaskStrategy::none}) {
    cfg.strategy = s;
    auto r = similarity_probe(m, f.vocab, f.data, cfg);
    if (s == vid::MaskStrategy::none) CHECK(r.video_mean == 1.0);
  }
}

TEST_CASE("probe config is validated") {
  Fixture f;
  MacModel m(tiny(), 3);
  ProbeConfig cfg;
  cfg.trials = 1;
  CHECK_THROWS_AS(similarity_probe(m, f.vocab, f.data, cfg), ConfigError);
  cfg = {};
  cfg.rho_v = 1.0;
  CHECK_THROWS_AS(similarity_probe(m, f.vocab, f.data, cfg), ConfigError);
}
