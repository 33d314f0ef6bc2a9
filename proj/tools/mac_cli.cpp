#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mac/checkpoint.hpp"
#include "mac/dataset.hpp"
#include "mac/errors.hpp"
#include "mac/flops.hpp"
#include "mac/probe.hpp"
#include "mac/run_config.hpp"
#include "mac/trainer.hpp"
#include "mac/vidpipe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mac;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

data::DatasetSpec read_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset spec " + path);
  try {
    return data::DatasetSpec::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

text::Vocabulary load_vocab_for(const fs::path& ckpt) {
  const fs::path p = vocab_path_for(ckpt);
  if (!fs::exists(p)) throw FormatError("vocabulary " + p.string() + " not found beside --ckpt");
  return text::Vocabulary::load(p);
}

std::string config_help() {
  std::ostringstream s;
  s << "\nConfig file keys (flat JSON object; every key optional):\n";
  for (const auto& d : RunConfig::describe()) {
    s << "  " << d.key << " = " << d.default_value;
    if (!d.unit.empty()) s << " [" << d.unit << "]";
    s << "  " << d.help << '\n';
  }
  return s.str();
}

struct GenArgs {
  std::string spec, out = "data";
  std::uint32_t count = 256, frames = 8, frame_size = 32;
  std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, bool seed_given) {
  data::DatasetSpec spec;
  if (!a.spec.empty()) {
    spec = read_spec(a.spec);
  } else {
    spec.count = a.count;
    spec.frames = a.frames;
    spec.frame_size = a.frame_size;
  }
  if (a.spec.empty() || seed_given) spec.seed = a.seed;
  spec.seed = seed_from_env(spec.seed);
  spec.validate();
  data::generate_dataset(spec, a.out);
  json cfg = spec.to_json();
  cfg["out"] = a.out;
  emit({{"command", "gen"}, {"config", cfg}, {"samples", spec.count}});
  return 0;
}

struct TrainArgs {
  std::string config, data, eval_data, out;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

int cmd_train(const TrainArgs& a, bool seed_given) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.eval_data.empty()) rc.eval_data = a.eval_data;
  if (!a.out.empty()) rc.out = a.out;
  if (seed_given) rc.train.seed = a.seed;
  if (a.threads > 0) rc.train.threads = a.threads;
  rc.train.seed = seed_from_env(rc.train.seed);
  if (rc.data.empty()) throw ConfigError("no training data: pass --data or set \"data\" in --config");
  rc.validate();

  const data::Dataset ds = data::Dataset::load(rc.data);
  const auto captions = ds.captions();
  const text::Vocabulary vocab = text::Vocabulary::build(captions);

  const fs::path out = rc.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw FormatError("cannot create --out directory " + out.string() + ": " + ec.message());
  std::ofstream(out / "config.json") << rc.to_json().dump(2) << '\n';
  const fs::path ckpt = out / "model.ckpt";
  vocab.save(vocab_path_for(ckpt));

  MacModel model(rc.encoder, rc.train.seed, rc.contrastive.tau_init);
  Trainer trainer(model, vocab, ds, rc.train, rc.contrastive);
  std::ofstream log(out / "train_log.jsonl");
  if (!log) throw FormatError("cannot write " + (out / "train_log.jsonl").string());
  const auto epochs = trainer.run(&log, &ckpt);

  json result = {{"command", "train"}, {"config", rc.to_json()}, {"checkpoint", ckpt.string()}};
  json ej = json::array();
  for (const auto& e : epochs) ej.push_back(e.to_json());
  result["epochs"] = ej;
  result["train_eval"] = evaluate(model, vocab, ds, rc.eval_frames, rc.train.threads).to_json();
  if (!rc.eval_data.empty()) {
    const data::Dataset held = data::Dataset::load(rc.eval_data);
    result["eval"] = evaluate(model, vocab, held, rc.eval_frames, rc.train.threads).to_json();
  }
  emit(result);
  return 0;
}

struct EvalArgs {
  std::string ckpt, data;
  std::size_t frames = 4, threads = 1;
};

int cmd_eval(const EvalArgs& a) {
  const auto entries = ckpt::load(a.ckpt);
  auto model = model_from_checkpoint(entries);
  const auto vocab = load_vocab_for(a.ckpt);
  const data::Dataset ds = data::Dataset::load(a.data);
  if (a.frames == 0 || a.frames > model->config().max_frames) {
    throw ConfigError("--frames must lie in [1, " + std::to_string(model->config().max_frames) + "]");
  }
  const EvalResult r = evaluate(*model, vocab, ds, a.frames, a.threads);
  json cfg = model->config().to_json();
  cfg["ckpt"] = a.ckpt;
  cfg["data"] = a.data;
  cfg["frames"] = a.frames;
  cfg["threads"] = a.threads;
  json out = r.to_json();
  out["command"] = "eval";
  out["config"] = cfg;
  emit(out);
  return 0;
}

struct FlopsArgs {
  std::string scale = "paper";
  double mask_ratio = 0.6;
  std::size_t frames = 4;
  std::size_t text_len = 0;
};

int cmd_flops(const FlopsArgs& a) {
  EncoderConfig cfg;
  if (a.scale == "paper") cfg = EncoderConfig::paper();
  else if (a.scale == "desk") cfg = EncoderConfig::desk();
  else throw ConfigError("--scale must be desk or paper, got '" + a.scale + "'");
  if (!(a.mask_ratio >= 0.0 && a.mask_ratio < 1.0)) throw ConfigError("--mask-ratio must lie in [0, 1)");
  if (a.frames == 0 || a.frames > cfg.max_frames) throw ConfigError("--frames must lie in [1, max_frames]");
  const std::size_t len = a.text_len == 0 ? cfg.max_text_len : a.text_len;
  if (len > cfg.max_text_len) throw ConfigError("--text-len exceeds the model's max_text_len");
  const auto n = static_cast<std::uint32_t>((cfg.frame_size / cfg.patch) * (cfg.frame_size / cfg.patch));
  const std::size_t visible = n - vid::masked_count(a.mask_ratio, n);
  const FlopsReport masked = count_params_flops(cfg, a.frames, visible, len);
  const FlopsReport full = count_params_flops(cfg, a.frames, n, len);
  json c = cfg.to_json();
  c["scale"] = a.scale;
  c["mask_ratio"] = a.mask_ratio;
  c["frames"] = a.frames;
  c["text_len"] = len;
  emit({{"command", "flops"},
        {"config", c},
        {"report", masked.to_json()},
        {"unmasked", full.to_json()},
        {"flops_ratio", masked.total_flops() / full.total_flops()}});
  return 0;
}

struct ProbeArgs {
  std::string ckpt, data;
  ProbeConfig probe;
  std::string strategy = "random";
};

int cmd_probe(ProbeArgs a) {
  a.probe.strategy = vid::parse_mask_strategy(a.strategy);
  a.probe.seed = seed_from_env(a.probe.seed);
  a.probe.validate();
  const auto entries = ckpt::load(a.ckpt);
  auto model = model_from_checkpoint(entries);
  const auto vocab = load_vocab_for(a.ckpt);
  const data::Dataset ds = data::Dataset::load(a.data);
  if (a.probe.frames > model->config().max_frames) throw ConfigError("--frames exceeds the model's max_frames");
  const ProbeReport r = similarity_probe(*model, vocab, ds, a.probe);
  json cfg = a.probe.to_json();
  cfg["ckpt"] = a.ckpt;
  cfg["data"] = a.data;
  cfg["threads"] = a.probe.threads;
  json out = r.to_json();
  out["command"] = "probe";
  out["config"] = cfg;
  emit(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked contrastive video-text pre-training at desk scale.\n"
               "Outputs are JSON on stdout. Exit codes: 0 ok, 1 usage or config error, 2 data, format or numeric error.\n"
               "MAC_SEED in the environment overrides --seed."};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic paired dataset");
  g->add_option("--spec", gen.spec, "Dataset spec JSON {count, frames, frame_size, seed}; replaces the size flags");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("--count", gen.count, "Number of clip-caption pairs [pairs]")->capture_default_str();
  g->add_option("--frames", gen.frames, "Frames per clip [frames]")->capture_default_str();
  g->add_option("--frame-size", gen.frame_size, "Frame side [pixels]")->capture_default_str();
  auto* gseed = g->add_option("--seed", gen.seed, "Generation seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train from a run config");
  t->add_option("--config", tr.config, "Flat JSON run config (keys below); defaults apply to missing keys");
  t->add_option("--data", tr.data, "Training set directory (overrides \"data\")");
  t->add_option("--eval-data", tr.eval_data, "Held-out set evaluated after training (overrides \"eval_data\")");
  t->add_option("--out", tr.out, "Output directory for model.ckpt, vocab.txt, train_log.jsonl, config.json (default \"run\")");
  auto* tseed = t->add_option("--seed", tr.seed, "Seed (overrides \"seed\"; default 0)");
  t->add_option("--threads", tr.threads, "Worker threads (overrides \"threads\"; default 1) [threads]");
  t->footer(config_help());

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Unmasked retrieval evaluation of a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file; vocab.txt must sit beside it")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--frames", ev.frames, "Frames per clip, strided from frame 0 [frames]")->capture_default_str();
  e->add_option("--threads", ev.threads, "Worker threads [threads]")->capture_default_str();

  FlopsArgs fl;
  auto* f = app.add_subcommand("flops", "Analytic parameter and FLOPs accounting");
  f->add_option("--scale", fl.scale, "desk or paper")->capture_default_str();
  f->add_option("--mask-ratio", fl.mask_ratio, "Video mask ratio rho_v [fraction]")->capture_default_str();
  f->add_option("--frames", fl.frames, "Frames per clip [frames]")->capture_default_str();
  f->add_option("--text-len", fl.text_len, "Text length; 0 = the scale's max_text_len [tokens]")->capture_default_str();

  ProbeArgs pr;
  auto* p = app.add_subcommand("probe", "Masked-view similarity probe");
  p->add_option("--ckpt", pr.ckpt, "Checkpoint file; vocab.txt must sit beside it")->required();
  p->add_option("--data", pr.data, "Dataset directory")->required();
  p->add_option("--trials", pr.probe.trials, "Masked views per clip [trials]")->capture_default_str();
  p->add_option("--mask-ratio", pr.probe.rho_v, "Video mask ratio rho_v [fraction]")->capture_default_str();
  p->add_option("--text-mask-ratio", pr.probe.rho_t, "Text mask ratio rho_t [fraction]")->capture_default_str();
  p->add_option("--clips", pr.probe.clips, "First N clips; 0 = all [clips]")->capture_default_str();
  p->add_option("--frames", pr.probe.frames, "Frames per clip [frames]")->capture_default_str();
  p->add_option("--strategy", pr.strategy, "random, tube or none")->capture_default_str();
  p->add_option("--seed", pr.probe.seed, "Mask seed")->capture_default_str();
  p->add_option("--threads", pr.probe.threads, "Worker threads [threads]")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen, gseed->count() > 0);
    if (*t) return cmd_train(tr, tseed->count() > 0);
    if (*e) return cmd_eval(ev);
    if (*f) return cmd_flops(fl);
    if (*p) return cmd_probe(pr);
  } catch (const ConfigError& err) {
    std::cerr << "mac: " << err.what() << '\n';
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "mac: " << err.what() << '\n';
    return kData;
  }
  return kUsage;
}
