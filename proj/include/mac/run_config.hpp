#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mac/encoders.hpp"
#include "mac/objective.hpp"
#include "mac/trainer.hpp"

namespace mac {

// Everything a training run needs, as one flat JSON object.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  ContrastiveConfig contrastive;
  std::string data;       // training set directory
  std::string eval_data;  // optional held-out set, evaluated after training
  std::string out = "run";
  std::size_t eval_frames = 4;

  struct KeyDoc {
    std::string key, default_value, unit, help;
  };
  static std::vector<KeyDoc> describe();

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys and wrong types are
  // ConfigErrors naming the key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;
};

// MAC_SEED, when set, replaces `fallback`. A malformed value is a ConfigError.
std::uint64_t seed_from_env(std::uint64_t fallback);

}  // namespace mac
