#include "mac/run_config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "mac/errors.hpp"

namespace mac {

namespace {

using nlohmann::json;

struct Field {
  const char* key;
  const char* unit;
  const char* help;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T, class Ref>
Field field(const char* key, const char* unit, const char* help, Ref ref) {
  Field f{key, unit, help, nullptr, nullptr};
  f.get = [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); };
  f.set = [ref, key](RunConfig& c, const json& v) {
    const std::string k = key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("config key '" + k + "' must be true or false");
      ref(c) = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("config key '" + k + "' must be a string");
      ref(c) = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("config key '" + k + "' must be a number");
      ref(c) = v.get<double>();
    } else {
      if (!v.is_number_unsigned()) throw ConfigError("config key '" + k + "' must be a non-negative integer");
      ref(c) = v.get<T>();
    }
  };
  return f;
}

#define REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    // encoder
    f.push_back(field<std::size_t>("depth", "blocks", "video encoder depth", REF(encoder.depth)));
    f.push_back(field<std::size_t>("width", "channels", "video token width D", REF(encoder.width)));
    f.push_back(field<std::size_t>("heads", "heads", "video attention heads", REF(encoder.heads)));
    f.push_back(field<std::size_t>("mlp_ratio", "x", "MLP hidden width as a multiple of the token width", REF(encoder.mlp_ratio)));
    f.push_back(field<std::size_t>("patch", "pixels", "patch side P", REF(encoder.patch)));
    f.push_back(field<std::size_t>("frame_size", "pixels", "square frame side after resize", REF(encoder.frame_size)));
    f.push_back(field<std::size_t>("channels", "channels", "colour channels", REF(encoder.channels)));
    f.push_back(field<std::size_t>("max_frames", "frames", "temporal position table size", REF(encoder.max_frames)));
    f.push_back(field<std::size_t>("max_patches", "patches", "spatial position table size", REF(encoder.max_patches)));
    f.push_back(field<std::size_t>("text_depth", "blocks", "text encoder depth", REF(encoder.text_depth)));
    f.push_back(field<std::size_t>("text_width", "channels", "text token width", REF(encoder.text_width)));
    f.push_back(field<std::size_t>("text_heads", "heads", "text attention heads", REF(encoder.text_heads)));
    f.push_back(field<std::size_t>("max_text_len", "tokens", "text length L_max including [CLS]", REF(encoder.max_text_len)));
    f.push_back(field<std::size_t>("vocab_size", "tokens", "token embedding rows", REF(encoder.vocab_size)));
    f.push_back(field<std::size_t>("projection", "channels", "shared embedding width", REF(encoder.projection)));
    // schedule and optimizer
    f.push_back(field<std::size_t>("epochs_a", "epochs", "single-frame stage length", REF(train.epochs_a)));
    f.push_back(field<std::size_t>("epochs_b", "epochs", "multi-frame stage length", REF(train.epochs_b)));
    f.push_back(field<std::size_t>("batch", "pairs", "pairs per step", REF(train.batch)));
    f.push_back(field<double>("lr_a", "", "single-frame stage learning rate", REF(train.lr_a)));
    f.push_back(field<double>("lr_b", "", "multi-frame stage learning rate", REF(train.lr_b)));
    f.push_back(field<double>("lr_decay", "x", "step-decay factor", REF(train.lr_decay)));
    f.push_back(field<std::size_t>("decay_every", "epochs", "step-decay period within a stage", REF(train.decay_every)));
    f.push_back(field<double>("beta1", "", "first-moment decay", REF(train.adam.beta1)));
    f.push_back(field<double>("beta2", "", "second-moment decay", REF(train.adam.beta2)));
    f.push_back(field<double>("eps", "", "denominator epsilon", REF(train.adam.eps)));
    f.push_back(field<double>("weight_decay", "", "decoupled decay on matrices", REF(train.adam.weight_decay)));
    // masking
    f.push_back(field<double>("rho_v", "fraction", "video patch mask ratio", REF(train.rho_v)));
    f.push_back(field<double>("rho_t", "fraction", "text word mask ratio", REF(train.rho_t)));
    {
      Field s{"strategy", "", "video mask strategy: random | tube | none", nullptr, nullptr};
      s.get = [](const RunConfig& c) { return json(vid::to_string(c.train.strategy)); };
      s.set = [](RunConfig& c, const json& v) {
        if (!v.is_string()) throw ConfigError("config key 'strategy' must be a string");
        c.train.strategy = vid::parse_mask_strategy(v.get<std::string>());
      };
      f.push_back(s);
      Field m{"modality", "", "masked modalities: both | video | text | none", nullptr, nullptr};
      m.get = [](const RunConfig& c) { return json(to_string(c.train.modality)); };
      m.set = [](RunConfig& c, const json& v) {
        if (!v.is_string()) throw ConfigError("config key 'modality' must be a string");
        c.train.modality = parse_mask_modality(v.get<std::string>());
      };
      f.push_back(m);
    }
    f.push_back(field<std::size_t>("frames", "frames", "frames per clip in the multi-frame stage", REF(train.frames)));
    f.push_back(field<std::uint64_t>("seed", "", "seed for init, sampling and masks (MAC_SEED overrides)", REF(train.seed)));
    f.push_back(field<std::size_t>("threads", "threads", "per-sample worker threads", REF(train.threads)));
    // temperature
    f.push_back(field<double>("tau_init", "", "initial temperature", REF(contrastive.tau_init)));
    f.push_back(field<bool>("learnable_tau", "", "learn the temperature", REF(contrastive.learnable)));
    f.push_back(field<double>("tau_min", "", "temperature lower clamp", REF(contrastive.tau_min)));
    f.push_back(field<double>("tau_max", "", "temperature upper clamp", REF(contrastive.tau_max)));
    // paths
    f.push_back(field<std::string>("data", "path", "training set directory", REF(data)));
    f.push_back(field<std::string>("eval_data", "path", "held-out set evaluated after training (optional)", REF(eval_data)));
    f.push_back(field<std::string>("out", "path", "output directory", REF(out)));
    f.push_back(field<std::size_t>("eval_frames", "frames", "frames per clip at evaluation", REF(eval_frames)));
    return f;
  }();
  return all;
}

#undef REF

}  // namespace

std::vector<RunConfig::KeyDoc> RunConfig::describe() {
  const RunConfig defaults;
  std::vector<KeyDoc> out;
  for (const auto& f : fields()) out.push_back({f.key, f.get(defaults).dump(), f.unit, f.help});
  return out;
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(*this);
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  RunConfig c;
  for (const auto& [k, v] : j.items()) {
    auto it = by_key.find(k);
    if (it == by_key.end()) throw ConfigError("unknown config key '" + k + "'");
    try {
      it->second->set(c, v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  contrastive.validate();
  if (train.frames > encoder.max_frames) {
    throw ConfigError("frames " + std::to_string(train.frames) + " exceed max_frames " +
                      std::to_string(encoder.max_frames));
  }
  if (eval_frames == 0 || eval_frames > encoder.max_frames) {
    throw ConfigError("eval_frames must lie in [1, max_frames]");
  }
}

std::uint64_t seed_from_env(std::uint64_t fallback) {
  const char* s = std::getenv("MAC_SEED");
  if (s == nullptr || *s == '\0') return fallback;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || *s == '-') throw ConfigError(std::string("MAC_SEED '") + s + "' is not an unsigned integer");
  return v;
}

}  // namespace mac
