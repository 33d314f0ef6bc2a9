// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mac/checkpoint.hpp"
#include "mac/dataset.hpp"
#include "mac/errors.hpp"
#include "mac/probe.hpp"
#include "mac/trainer.hpp"
#include "support/block_gradcheck.hpp"
#include "support/infonce_oracle.hpp"
#include "support/primitive_cases.hpp"
#include "support/tmpdir.hpp"

using namespace mac;
using diff::Array;
using diff::Precision;
using diff::Tape;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Everything criteria 6-9 share: the datasets and the trained model.
struct Workspace {
  testing::TempDir dir;
  std::optional<data::Dataset> train, held;
  text::Vocabulary vocab;
  std::unique_ptr<MacModel> trained;
  double train_seconds = 0;

  static constexpr std::uint64_t kSeed = 1;

  std::size_t threads() const {
    return std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 4);
  }

  void ensure_data() {
    if (train) return;
    data::DatasetSpec tr;
    tr.count = 256;
    tr.seed = 1;
    data::DatasetSpec te;
    te.count = 64;
    te.seed = 2;
    data::generate_dataset(tr, dir / "train");
    data::generate_dataset(te, dir / "held");
    train = data::Dataset::load(dir / "train");
    held = data::Dataset::load(dir / "held");
    const auto caps = train->captions();
    vocab = text::Vocabulary::build(caps);
  }

  TrainConfig schedule() const {
    TrainConfig c;  // defaults are the acceptance schedule
    c.seed = kSeed;
    c.threads = threads();
    c.rho_v = 0.6;
    c.rho_t = 0.15;
    c.modality = MaskModality::both;
    return c;
  }

  MacModel& ensure_trained() {
    ensure_data();
    if (!trained) {
      trained = std::make_unique<MacModel>(EncoderConfig::desk(), kSeed);
      Trainer t(*trained, vocab, *train, schedule(), {});
      const auto t0 = Clock::now();
      t.run();
      train_seconds = seconds_since(t0);
    }
    return *trained;
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

json run_cli(const std::string& args) {
  const std::string cmd = "'" MAC_CLI_PATH "' " + args;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) throw std::runtime_error("cannot start " + cmd);
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = ::pclose(p);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw std::runtime_error(cmd + " failed");
  return json::parse(out);
}

bool within(double got, double target, double rel) { return std::abs(got - target) <= rel * target; }

// 1. paper-scale FLOPs and parameters through the CLI.
Outcome flops_claim() {
  const auto t0 = Clock::now();
  const json full = run_cli("flops --scale paper --mask-ratio 0.0");
  const json masked = run_cli("flops --scale paper --mask-ratio 0.6");
  const double secs = seconds_since(t0) / 2;
  const double g0 = full["report"]["total_gflops"], g6 = masked["report"]["total_gflops"];
  const double mp = full["report"]["total_params_millions"];
  const double mp6 = masked["report"]["total_params_millions"];
  const bool ok = within(g0, 189.3, 0.15) && within(g6, 83.3, 0.15) && within(mp, 180.7, 0.05) && mp == mp6 &&
                  secs < 1.0;
  return {ok, "unmasked " + fmt(g0) + "G (189.3G +-15%), rho_v=0.6 " + fmt(g6) + "G (83.3G +-15%), params " +
                  fmt(mp) + "M (180.7M +-5%), " + fmt(secs, 3) + " s per call"};
}

// 2. masked / unmasked FLOPs ratio.
Outcome flops_ratio() {
  const auto t0 = Clock::now();
  const json masked = run_cli("flops --scale paper --mask-ratio 0.6");
  const double secs = seconds_since(t0);
  const double ratio = masked["report"]["total_flops"].get<double>() / masked["unmasked"]["total_flops"].get<double>();
  return {ratio <= 0.5 && secs < 1.0, "ratio " + fmt(ratio, 4) + " (<= 0.5), " + fmt(secs, 3) + " s"};
}

// 3. InfoNCE against the double loop.
Outcome objective_oracle() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t batches = 0;
  for (std::size_t b : {1u, 2u, 4u, 8u}) {
    for (std::uint64_t k = 0; k < 100; ++k) {
      Rng rng(derive_seed(3, {b, k}));
      const Array v = testing::unit_rows(b, 32, rng), t = testing::unit_rows(b, 32, rng);
      const double tau = std::exp(std::log(0.01) + rng.uniform() * (std::log(1.0) - std::log(0.01)));
      const double oracle = testing::naive_loss(v, t, tau);
      Tape tape(Precision::f64);
      const double taped =
          infonce_loss(tape.leaf(v), tape.leaf(t), tape.constant(Array({1}, {std::log(tau)}, Precision::f64)))
              .value()
              .item();
      worst = std::max({worst, std::abs(taped - oracle), std::abs(infonce_value(v, t, tau) - oracle)});
      ++batches;
    }
  }
  Rng rng(77);
  const Array one = testing::unit_rows(1, 32, rng);
  Tape tape(Precision::f64);
  const double aligned_taped =
      infonce_loss(tape.leaf(one), tape.leaf(one), tape.constant(Array({1}, {std::log(0.07)}, Precision::f64)))
          .value()
          .item();
  const double aligned = infonce_value(one, one, 0.07);
  const double secs = seconds_since(t0);
  const bool ok = worst <= 1e-10 && aligned == 0.0 && aligned_taped == 0.0 && secs < 5.0;
  std::ostringstream d;
  d << batches << " batches, max |loss - oracle| " << std::scientific << std::setprecision(2) << worst
    << " (<= 1e-10), B=1 aligned loss " << aligned + 0.0 << " / taped " << aligned_taped + 0.0;
  return {ok, d.str()};
}

// 4. finite differences for every primitive and a full block.
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_prim = 0;
  std::string worst_prim_name;
  const auto cases = testing::primitive_cases();
  for (const auto& c : cases) {
    const double e = testing::primitive_worst_error(c, 10);
    if (e > worst_prim) {
      worst_prim = e;
      worst_prim_name = c.name;
    }
  }
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.patch = 4;
  cfg.frame_size = 8;
  cfg.max_frames = 2;
  cfg.max_patches = 4;
  cfg.text_depth = 1;
  cfg.text_width = 8;
  cfg.text_heads = 2;
  cfg.max_text_len = 6;
  cfg.vocab_size = 12;
  cfg.projection = 4;
  double worst_block = 0;
  std::string worst_block_name;
  std::size_t coords = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = testing::block_gradcheck(cfg, seed);
    coords += r.coordinates;
    if (r.max_rel_error > worst_block) {
      worst_block = r.max_rel_error;
      worst_block_name = r.worst_parameter;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << cases.size() << " primitives x 10 seeds worst " << std::scientific << std::setprecision(2) << worst_prim << " ("
    << worst_prim_name << "); block+projection+loss x 10 seeds, " << coords << " coordinates, worst " << worst_block
    << " (" << worst_block_name << "); limit 1e-4, " << std::fixed << secs << " s";
  return {worst_prim < 1e-4 && worst_block < 1e-4 && secs < 60.0, d.str()};
}

// 5. masking invariants.
Outcome masking_invariants() {
  const auto t0 = Clock::now();
  std::size_t grid = 0, grid_bad = 0;
  std::size_t tube_bad = 0;
  for (std::uint32_t n : {1u, 2u, 4u, 7u, 16u, 49u, 196u}) {
    for (std::uint32_t k = 0; k < 20; ++k) {
      // round-half-up of k/20 * n, in integers
      const std::uint32_t masked = (k * n + 10) / 20;
      if (masked >= n) continue;
      for (std::uint32_t frames : {1u, 2u, 4u}) {
        for (auto s : {vid::MaskStrategy::random, vid::MaskStrategy::tube}) {
          const auto plan = vid::sample_mask(s, k / 20.0, frames, n, derive_seed(5, {n, k, frames}));
          ++grid;
          bool ok = plan.visible.size() == frames;
          for (const auto& f : plan.visible) {
            std::set<std::uint32_t> uniq(f.begin(), f.end());
            ok = ok && f.size() == n - masked && uniq.size() == f.size() && (f.empty() || f.back() < n);
          }
          if (!ok) ++grid_bad;
          if (s == vid::MaskStrategy::tube) {
            for (const auto& f : plan.visible)
              if (f != plan.visible[0]) ++tube_bad;
          }
        }
      }
    }
  }

  // whole words: out-of-vocabulary words split into several pieces
  const auto vocab = text::Vocabulary::from_tokens({"a", "red", "cube", "moves", "left", "wob", "##bli", "##ng"});
  const auto seq = text::tokenize("a red wobbling cube moves left wobbling", vocab, 16);
  std::size_t words_bad = 0, word_trials = 0;
  for (double ratio : {0.15, 0.3, 0.5, 0.9}) {
    const std::size_t expect =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(seq.word_groups.size()) + 0.5 + 1e-9));
    for (std::uint64_t s = 0; s < 200; ++s) {
      ++word_trials;
      const auto m = text::apply_text_mask(seq, text::sample_text_mask(seq, ratio, s));
      std::size_t full = 0;
      bool ok = m.ids[0] == text::Vocabulary::kCls;
      for (const auto& g : seq.word_groups) {
        std::size_t hit = 0;
        for (std::size_t i = g.begin; i < g.end; ++i) hit += m.ids[i] == text::Vocabulary::kMask;
        ok = ok && (hit == 0 || hit == g.end - g.begin);
        full += hit == g.end - g.begin;
      }
      for (std::size_t i = seq.length; i < m.ids.size(); ++i) ok = ok && m.ids[i] == text::Vocabulary::kPad;
      if (!ok || full != expect) ++words_bad;
    }
  }
  const bool multi_piece =
      std::any_of(seq.word_groups.begin(), seq.word_groups.end(), [](const auto& g) { return g.end - g.begin > 1; });

  // masked content fuzzing
  MacModel model(EncoderConfig::desk(), 9);
  const auto clip = testing::random_clip(4, 32, 1);
  std::size_t fuzz_bad = 0;
  for (auto strategy : {vid::MaskStrategy::random, vid::MaskStrategy::tube}) {
    const auto plan = vid::sample_mask(strategy, 0.6, 4, 16, 21);
    Tape tape;
    const Array base = encode_video(tape, model, vid::patchify(clip, 8), plan).value();
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      vid::VideoClip fuzz = clip;
      for (std::uint32_t m = 0; m < 4; ++m)
        for (std::uint32_t s = 0; s < 16; ++s) {
          if (std::binary_search(plan.visible[m].begin(), plan.visible[m].end(), s)) continue;
          for (std::uint32_t y = 0; y < 8; ++y)
            for (std::uint32_t x = 0; x < 8; ++x)
              for (std::uint32_t c = 0; c < 3; ++c)
                fuzz.at(m, (s / 4) * 8 + y, (s % 4) * 8 + x, c) = static_cast<std::uint8_t>(rng.below(256));
        }
      Tape t2;
      const Array got = encode_video(t2, model, vid::patchify(fuzz, 8), plan).value();
      if (!(got == base)) ++fuzz_bad;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "grid " << grid - grid_bad << "/" << grid << " plans exact, tube column violations " << tube_bad
    << ", whole-word " << word_trials - words_bad << "/" << word_trials << ", fuzzed v_cls mismatches " << fuzz_bad
    << "/200, " << fmt(secs) << " s";
  return {grid_bad == 0 && tube_bad == 0 && words_bad == 0 && multi_piece && fuzz_bad == 0 && secs < 30.0, d.str()};
}

// 6. toy end-to-end alignment.
Outcome toy_alignment() {
  Workspace& w = ws();
  w.ensure_data();
  double untrained_r1 = 0, untrained_mean = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    MacModel fresh(EncoderConfig::desk(), Workspace::kSeed + s);
    const double r1 = evaluate(fresh, w.vocab, *w.held, 4, w.threads()).text_to_video.r1;
    if (s == 0) untrained_r1 = r1;
    untrained_mean += r1 / 5;
  }
  MacModel& model = w.ensure_trained();
  const EvalResult held = evaluate(model, w.vocab, *w.held, 4, w.threads());
  const EvalResult train = evaluate(model, w.vocab, *w.train, 4, w.threads());
  const auto& r = held.text_to_video;
  const bool ok = r.r1 >= 90.0 && r.median_rank == 1 && untrained_r1 <= 5.0 && w.train_seconds < 600.0;
  const TrainConfig c = w.schedule();
  std::ostringstream d;
  d << "held-out t2v R@1 " << fmt(r.r1) << " (>= 90), MedR " << r.median_rank << " (= 1), v2t R@1 "
    << fmt(held.video_to_text.r1) << "; untrained R@1 " << fmt(untrained_r1) << " (<= 5; 5-init mean "
    << fmt(untrained_mean) << ", chance 1.56); train-set t2v R@1 " << fmt(train.text_to_video.r1) << "; schedule "
    << c.epochs_a << "+" << c.epochs_b << " epochs on " << c.threads << " thread(s) in " << fmt(w.train_seconds, 1)
    << " s (< 600)";
  return {ok, d.str()};
}

// 7. every masking modality and strategy trains and reports.
Outcome ablation_harness() {
  Workspace& w = ws();
  w.ensure_data();
  struct Setting {
    MaskModality modality;
    vid::MaskStrategy strategy;
  };
  const std::vector<Setting> settings = {
      {MaskModality::both, vid::MaskStrategy::random}, {MaskModality::video, vid::MaskStrategy::random},
      {MaskModality::text, vid::MaskStrategy::random}, {MaskModality::none, vid::MaskStrategy::random},
      {MaskModality::both, vid::MaskStrategy::tube},   {MaskModality::both, vid::MaskStrategy::none},
  };
  bool ok = true;
  std::ostringstream d;
  d << "short schedule 4+12 epochs, held-out t2v R@1:";
  for (const auto& s : settings) {
    TrainConfig c = w.schedule();
    c.epochs_a = 4;
    c.epochs_b = 12;
    c.modality = s.modality;
    c.strategy = s.strategy;
    MacModel m(EncoderConfig::desk(), Workspace::kSeed);
    try {
      Trainer t(m, w.vocab, *w.train, c, {});
      const auto logs = t.run();
      const EvalResult r = evaluate(m, w.vocab, *w.held, 4, w.threads());
      const json j = r.to_json();
      const bool valid = logs.size() == 16 && std::isfinite(logs.back().loss) && r.text_to_video.queries == 64 &&
                         r.text_to_video.r1 >= 0 && r.text_to_video.r1 <= 100 && r.text_to_video.median_rank >= 1 &&
                         j.contains("video_to_text");
      ok = ok && valid;
      d << " " << to_string(s.modality) << "/" << vid::to_string(s.strategy) << " " << fmt(r.text_to_video.r1, 1)
        << (valid ? "" : "(invalid)");
    } catch (const std::exception& e) {
      ok = false;
      d << " " << to_string(s.modality) << "/" << vid::to_string(s.strategy) << " failed: " << e.what();
    }
  }
  return {ok, d.str()};
}

// 8. masked views of a trained model stay closer to the full view.
Outcome probe_direction() {
  Workspace& w = ws();
  MacModel& trained = w.ensure_trained();
  MacModel untrained(EncoderConfig::desk(), Workspace::kSeed);
  const auto t0 = Clock::now();
  std::size_t wins = 0;
  std::ostringstream d;
  d << "video masked/full cosine trained vs untrained:";
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ProbeConfig pc;
    pc.trials = 100;
    pc.clips = 16;
    pc.seed = seed;
    pc.threads = w.threads();
    const double a = similarity_probe(trained, w.vocab, *w.held, pc).video_mean;
    const double b = similarity_probe(untrained, w.vocab, *w.held, pc).video_mean;
    wins += a > b;
    d << " " << fmt(a, 4) << ">" << fmt(b, 4) << (a > b ? "" : "(no)");
  }
  const double secs = seconds_since(t0);
  d << "; " << wins << "/5 seeds, 16 clips x 100 trials, " << fmt(secs, 1) << " s (< 120)";
  return {wins == 5 && secs < 120.0, d.str()};
}

// 9. determinism and checkpoint persistence.
Outcome determinism() {
  testing::TempDir d;
  data::DatasetSpec spec;
  spec.count = 32;
  spec.seed = 4;
  data::generate_dataset(spec, d / "data");
  const auto ds = data::Dataset::load(d / "data");
  const auto caps = ds.captions();
  const auto vocab = text::Vocabulary::build(caps);
  TrainConfig c;
  c.epochs_a = 1;
  c.epochs_b = 2;
  c.batch = 8;
  c.seed = 3;
  auto train_to = [&](const std::filesystem::path& p, std::size_t threads) {
    c.threads = threads;
    MacModel m(EncoderConfig::desk(), c.seed);
    Trainer t(m, vocab, ds, c, {});
    t.run(nullptr, &p);
  };
  train_to(d / "a.ckpt", 1);
  train_to(d / "b.ckpt", 1);
  train_to(d / "c.ckpt", ws().threads() > 1 ? ws().threads() : 2);
  const auto a = testing::read_bytes(d / "a.ckpt");
  const bool same = a == testing::read_bytes(d / "b.ckpt");
  const bool same_threads = a == testing::read_bytes(d / "c.ckpt");

  const auto entries = ckpt::load(d / "a.ckpt");
  const bool encode_rt = ckpt::encode(entries) == a;
  ckpt::save(d / "again.ckpt", entries);
  const bool file_rt = testing::read_bytes(d / "again.ckpt") == a;
  auto model = model_from_checkpoint(entries);
  const bool model_rt = ckpt::encode(checkpoint_entries(*model, nullptr, 3, 3)) ==
                        ckpt::encode(std::vector<ckpt::Entry>(entries.begin(), entries.begin() + static_cast<long>(
                                                                                                  model->params().size() + 3)));

  auto rejects = [&](std::vector<std::uint8_t> bytes) {
    testing::write_bytes(d / "bad.ckpt", bytes);
    try {
      ckpt::load(d / "bad.ckpt");
    } catch (const FormatError& e) {
      return std::string(e.what()).find("CRC") != std::string::npos;
    }
    return false;
  };
  auto flipped = a;
  flipped[a.size() / 2] ^= 0x01;
  const bool crc_flip = rejects(flipped);
  const bool crc_trunc = rejects(std::vector<std::uint8_t>(a.begin(), a.end() - 7));

  std::ostringstream s;
  s << "same-seed checkpoints identical " << same << ", across thread counts " << same_threads
    << "; round trip encode " << encode_rt << " save " << file_rt << " model " << model_rt
    << "; CRC rejects flipped bit " << crc_flip << " truncation " << crc_trunc << " (" << a.size() << " bytes)";
  return {same && same_threads && encode_rt && file_rt && model_rt && crc_flip && crc_trunc, s.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> all = {
      {1, flops_claim},      {2, flops_ratio},      {3, objective_oracle}, {4, gradient_suite},  {5, masking_invariants},
      {6, toy_alignment},    {7, ablation_harness}, {8, probe_direction},  {9, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, fn] : all) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " [" << fmt(seconds_since(t0), 1)
              << " s] " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
