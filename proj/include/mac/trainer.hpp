#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mac/dataset.hpp"
#include "mac/encoders.hpp"
#include "mac/metrics.hpp"
#include "mac/objective.hpp"
#include "mac/optimizer.hpp"
#include "mac/textpipe.hpp"

namespace mac {

// Which modalities are masked during training.
enum class MaskModality { both, video, text, none };
std::string to_string(MaskModality m);
MaskModality parse_mask_modality(const std::string& s);

struct TrainConfig {
  std::size_t epochs_a = 4;    // single-frame stage
  std::size_t epochs_b = 252;  // multi-frame stage
  std::size_t batch = 16;
  double lr_a = 5e-4;
  double lr_b = 5e-4;
  double lr_decay = 0.5;          // multiplied in every decay_every epochs of a stage
  std::size_t decay_every = 100;
  AdamConfig adam;
  double rho_v = 0.6;
  double rho_t = 0.15;
  vid::MaskStrategy strategy = vid::MaskStrategy::random;
  MaskModality modality = MaskModality::both;
  std::size_t frames = 4;  // stage B
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based over both stages
  char stage = 'A';
  double loss = 0;
  double margin = 0;
  double tau = 0;

  nlohmann::json to_json() const;
};

// Frames 0, s, 2s, ... shifted by `phase`, s = clip frames / count.
std::vector<std::uint32_t> strided_frames(std::uint32_t available, std::size_t count, std::uint32_t phase);

// Unit-norm [1, projection] rows.
diff::Var embed_video(diff::Tape& tape, const MacModel& model, const vid::VideoClip& clip,
                      std::span<const std::uint32_t> frames, const vid::MaskPlan* plan);
diff::Var embed_text(diff::Tape& tape, const MacModel& model, const text::TextSequence& seq);

class Trainer {
 public:
  Trainer(MacModel& model, const text::Vocabulary& vocab, const data::Dataset& data, TrainConfig cfg,
          ContrastiveConfig contrastive);

  // Runs stage A then stage B. Each finished epoch is written to `log` as a
  // JSON line and, if `checkpoint` is set, saved there. A non-finite loss
  // raises DivergenceError and leaves the last saved checkpoint in place.
  std::vector<EpochLog> run(std::ostream* log = nullptr, const std::filesystem::path* checkpoint = nullptr);

  EpochLog run_epoch(char stage, std::size_t epoch_in_stage);

  AdamW& optimizer() { return opt_; }
  std::size_t epochs_done() const { return epochs_done_; }

 private:
  struct Prepared;
  double step(char stage, const std::vector<std::size_t>& batch, double lr, double* margin);

  MacModel& model_;
  const text::Vocabulary& vocab_;
  const data::Dataset& data_;
  TrainConfig cfg_;
  ContrastiveConfig contrastive_;
  AdamW opt_;
  std::vector<text::TextSequence> captions_;
  std::size_t epochs_done_ = 0;
  std::size_t step_count_ = 0;
};

// Parameters (by name), optimizer state when given, config echo and progress.
std::vector<ckpt::Entry> checkpoint_entries(const MacModel& model, const AdamW* opt, std::uint64_t seed,
                                            std::size_t epochs_done);
// Rebuilds the model from the config echo and checks every parameter shape.
std::unique_ptr<MacModel> model_from_checkpoint(const std::vector<ckpt::Entry>& entries);
// Copies parameter values into an existing model; FormatError names any
// missing or mis-shaped parameter.
void load_parameters(MacModel& model, const std::vector<ckpt::Entry>& entries);

// Vocabulary lives beside the checkpoint.
std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint);

struct EvalResult {
  RetrievalReport text_to_video, video_to_text;
  diff::Array similarity;

  nlohmann::json to_json() const;
};

// Unmasked video and text, frames strided from phase 0.
EvalResult evaluate(const MacModel& model, const text::Vocabulary& vocab, const data::Dataset& data,
                    std::size_t frames, std::size_t threads = 1);

// Runs fn(i) for i in [0, n) over `threads` workers; each index runs once.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace mac
