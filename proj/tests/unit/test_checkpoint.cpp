#include <doctest.h>

#include <cmath>

#include "mac/checkpoint.hpp"
#include "mac/errors.hpp"
#include "mac/optimizer.hpp"
#include "mac/trainer.hpp"
#include "support/tmpdir.hpp"

using namespace mac;
using mac::testing::TempDir;
using mac::testing::read_bytes;
using mac::testing::write_bytes;

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

std::vector<ckpt::Entry> sample_entries() {
  return {{"a", {2, 3}, {1.f, -2.f, 0.5f, 1e-30f, -0.f, 3.25f}},
          {"scalar", {1}, {0.07f}},
          {"deep.name/with.dots", {2, 1, 2}, {9.f, 8.f, 7.f, 6.f}}};
}

}  // namespace

TEST_CASE("u64 packing is exact across the range") {
  for (std::uint64_t v : {0ull, 1ull, 65535ull, 65536ull, 0xdeadbeefcafebabeull, ~0ull}) {
    auto f = ckpt::pack_u64(v);
    REQUIRE(f.size() == 4);
    for (float x : f) CHECK(x == std::floor(x));
    CHECK(ckpt::unpack_u64(f.data()) == v);
  }
}

TEST_CASE("encode and decode round trip is byte-identical") {
  auto entries = sample_entries();
  auto bytes = ckpt::encode(entries);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "MACCKPT1");
  auto back = ckpt::decode(bytes);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == entries[i].name);
    CHECK(back[i].shape == entries[i].shape);
    CHECK(std::memcmp(back[i].values.data(), entries[i].values.data(), 4 * back[i].values.size()) == 0);
  }
  CHECK(ckpt::encode(back) == bytes);

  TempDir d;
  ckpt::save(d / "x.ckpt", entries);
  CHECK(read_bytes(d / "x.ckpt") == bytes);
  CHECK(ckpt::encode(ckpt::load(d / "x.ckpt")) == bytes);
}

TEST_CASE("corruption is detected") {
  auto bytes = ckpt::encode(sample_entries());

  SUBCASE("truncation") {
    for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
      std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<long>(cut));
      try {
        ckpt::decode(t);
        FAIL("expected FormatError");
      } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("CRC") != std::string::npos);
      }
    }
  }
  SUBCASE("flipped payload bit") {
    auto t = bytes;
    t[20] ^= 0x10;
    CHECK_THROWS_WITH_AS(ckpt::decode(t), doctest::Contains("CRC"), FormatError);
  }
  SUBCASE("bad magic") {
    auto t = bytes;
    t[0] = 'X';
    CHECK_THROWS_WITH_AS(ckpt::decode(t), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("missing file") {
    TempDir d;
    CHECK_THROWS_AS(ckpt::load(d / "none.ckpt"), FormatError);
  }
  SUBCASE("values not matching shape are refused at encode") {
    std::vector<ckpt::Entry> bad = {{"a", {2, 2}, {1.f}}};
    CHECK_THROWS_AS(ckpt::encode(bad), ContractError);
  }
}

TEST_CASE("model checkpoints round trip and reject foreign configs") {
  MacModel a(tiny(), 3);
  auto entries = checkpoint_entries(a, nullptr, 11, 2);
  auto rebuilt = model_from_checkpoint(entries);
  CHECK(rebuilt->config() == a.config());
  CHECK(ckpt::encode(checkpoint_entries(*rebuilt, nullptr, 11, 2)) == ckpt::encode(entries));

  MacModel other(tiny(), 99);
  load_parameters(other, entries);
  CHECK(ckpt::encode(checkpoint_entries(other, nullptr, 11, 2)) == ckpt::encode(entries));

  EncoderConfig wide = tiny();
  wide.width = 32;
  wide.heads = 4;
  MacModel w(wide, 3);
  try {
    load_parameters(w, entries);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("video.") != std::string::npos);
    CHECK(msg.find("shape") != std::string::npos);
  }

  auto dropped = entries;
  std::erase_if(dropped, [](const ckpt::Entry& e) { return e.name == "logit.log_tau"; });
  CHECK_THROWS_WITH_AS(load_parameters(other, dropped), doctest::Contains("log_tau"), FormatError);
}

TEST_CASE("AdamW matches a hand-rolled update") {
  diff::ParameterSet ps;
  auto& w = ps.add("w", diff::Array({2, 2}, {0.5, -0.25, 1.0, 2.0}, diff::Precision::f64));
  auto& b = ps.add("b", diff::Array({2}, {0.1, -0.1}, diff::Precision::f64));
  AdamConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(ps, cfg);

  // oracle state
  std::vector<double> wv(w.value.values().begin(), w.value.values().end());
  std::vector<double> bv(b.value.values().begin(), b.value.values().end());
  std::vector<double> wm(4, 0), ws(4, 0), bm(2, 0), bs(2, 0);
  const double lr = 0.01;
  for (int t = 1; t <= 5; ++t) {
    for (std::size_t i = 0; i < 4; ++i) w.grad[i] = std::sin(t + static_cast<double>(i));
    for (std::size_t i = 0; i < 2; ++i) b.grad[i] = std::cos(t * 0.7 + static_cast<double>(i));
    auto upd = [&](std::vector<double>& val, std::vector<double>& m, std::vector<double>& s, const diff::Array& g,
                   double decay) {
      for (std::size_t i = 0; i < val.size(); ++i) {
        m[i] = 0.9 * m[i] + 0.1 * g[i];
        s[i] = 0.999 * s[i] + 0.001 * g[i] * g[i];
        const double mh = m[i] / (1 - std::pow(0.9, t)), sh = s[i] / (1 - std::pow(0.999, t));
        val[i] = val[i] - lr * (mh / (std::sqrt(sh) + 1e-8) + decay * val[i]);
      }
    };
    upd(wv, wm, ws, w.grad, 0.1);
    upd(bv, bm, bs, b.grad, 0.0);
    opt.step(lr);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.value[i] == doctest::Approx(wv[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < 2; ++i) CHECK(b.value[i] == doctest::Approx(bv[i]).epsilon(1e-13));
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("AdamW with zero learning rate leaves values untouched") {
  MacModel m(tiny(), 1);
  auto before = ckpt::encode(checkpoint_entries(m, nullptr, 0, 0));
  AdamW opt(m.params(), {});
  for (auto& p : m.params())
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] = 0.3;
  opt.step(0.0);
  CHECK(ckpt::encode(checkpoint_entries(m, nullptr, 0, 0)) == before);
}

TEST_CASE("optimizer state survives a checkpoint") {
  diff::ParameterSet ps;
  auto& w = ps.add("w", diff::Array({2, 2}, {0.5, -0.25, 1.0, 2.0}));
  AdamW a(ps, {});
  for (std::size_t i = 0; i < 4; ++i) w.grad[i] = 0.1 * static_cast<double>(i + 1);
  a.step(1e-3);
  a.step(1e-3);
  auto state = ckpt::decode(ckpt::encode(a.state_entries()));

  diff::ParameterSet ps2;
  auto& w2 = ps2.add("w", w.value);
  AdamW b(ps2, {});
  b.load_state(state);
  CHECK(b.steps() == 2);
  w2.grad = w.grad;
  a.step(1e-3);
  b.step(1e-3);
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.value[i] == w2.value[i]);

  diff::ParameterSet ps3;
  ps3.add("w", diff::Array({4}));
  AdamW c(ps3, {});
  CHECK_THROWS_WITH_AS(c.load_state(state), doctest::Contains("adam.m/w"), FormatError);
}
