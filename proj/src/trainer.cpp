#include "mac/trainer.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <ostream>
#include <thread>

#include "mac/errors.hpp"
#include "mac/rng.hpp"

namespace mac {

namespace fs = std::filesystem;
using diff::Array;
using diff::Tape;
using diff::Var;

namespace {

enum SeedTag : std::uint64_t { kShuffle = 1, kFrames = 2, kVideoMask = 3, kTextMask = 4 };

Array rows_of(const std::vector<Array>& rows) {
  const std::size_t w = rows.front().size();
  Array out({rows.size(), w});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = rows[r][j];
  return out;
}

Array row(const Array& a, std::size_t r) {
  const std::size_t w = a.row_width();
  return Array({w, 1}, std::vector<double>(a.data() + r * w, a.data() + (r + 1) * w), a.precision());
}

}  // namespace

std::string to_string(MaskModality m) {
  switch (m) {
    case MaskModality::both: return "both";
    case MaskModality::video: return "video";
    case MaskModality::text: return "text";
    default: return "none";
  }
}

MaskModality parse_mask_modality(const std::string& s) {
  if (s == "both") return MaskModality::both;
  if (s == "video") return MaskModality::video;
  if (s == "text") return MaskModality::text;
  if (s == "none") return MaskModality::none;
  throw ConfigError("mask modality must be both, video, text or none, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch < 2) throw ConfigError("batch must be at least 2");
  if (frames == 0) throw ConfigError("frames must be positive");
  if (!(lr_a >= 0.0) || !(lr_b >= 0.0)) throw ConfigError("learning rates must be non-negative");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (decay_every == 0) throw ConfigError("decay_every must be positive");
  if (!(rho_v >= 0.0 && rho_v < 1.0)) throw ConfigError("rho_v must lie in [0, 1)");
  if (!(rho_t >= 0.0 && rho_t < 1.0)) throw ConfigError("rho_t must lie in [0, 1)");
  if (threads == 0) throw ConfigError("threads must be positive");
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch}, {"stage", std::string(1, stage)}, {"loss", loss}, {"margin", margin}, {"tau", tau}};
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::uint32_t> strided_frames(std::uint32_t available, std::size_t count, std::uint32_t phase) {
  if (count == 0 || count > available) {
    throw ConfigError("cannot take " + std::to_string(count) + " frames from a clip of " + std::to_string(available));
  }
  const std::uint32_t stride = available / static_cast<std::uint32_t>(count);
  if (phase >= stride) throw ContractError("frame phase must be below the stride");
  std::vector<std::uint32_t> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(phase + static_cast<std::uint32_t>(k) * stride);
  return out;
}

Var embed_video(Tape& tape, const MacModel& model, const vid::VideoClip& clip, std::span<const std::uint32_t> frames,
                const vid::MaskPlan* plan) {
  const EncoderConfig& cfg = model.config();
  vid::VideoClip picked = vid::select_frames(clip, frames);
  if (picked.height != cfg.frame_size || picked.width != cfg.frame_size) {
    picked = vid::resize_center_crop(picked, static_cast<std::uint32_t>(cfg.frame_size));
  }
  vid::PatchSet patches = vid::patchify(picked, static_cast<std::uint32_t>(cfg.patch));
  vid::MaskPlan full;
  if (plan == nullptr) {
    full = vid::sample_mask(vid::MaskStrategy::none, 0.0, patches.frames, patches.patches_per_frame(), 0);
    plan = &full;
  }
  return project_video(tape, model, encode_video(tape, model, patches, *plan));
}

Var embed_text(Tape& tape, const MacModel& model, const text::TextSequence& seq) {
  return project_text(tape, model, text_forward(tape, model, seq));
}

Trainer::Trainer(MacModel& model, const text::Vocabulary& vocab, const data::Dataset& data, TrainConfig cfg,
                 ContrastiveConfig contrastive)
    : model_(model), vocab_(vocab), data_(data), cfg_(cfg), contrastive_(contrastive), opt_(model.params(), cfg.adam) {
  cfg_.validate();
  contrastive_.validate();
  if (data_.size() < 2) throw ConfigError("training needs at least two samples");
  if (cfg_.batch > data_.size()) {
    throw ConfigError("batch " + std::to_string(cfg_.batch) + " exceeds dataset size " + std::to_string(data_.size()));
  }
  if (vocab_.size() > model_.config().vocab_size) {
    throw ConfigError("vocabulary of " + std::to_string(vocab_.size()) + " tokens exceeds model vocab_size " +
                      std::to_string(model_.config().vocab_size));
  }
  for (const auto& s : data_.samples()) captions_.push_back(text::tokenize(s.caption, vocab_, model_.config().max_text_len));
}

double Trainer::step(char stage, const std::vector<std::size_t>& batch, double lr, double* margin) {
  const std::size_t b = batch.size();
  const std::uint64_t epoch = epochs_done_ + 1;
  const bool mask_video = cfg_.modality == MaskModality::both || cfg_.modality == MaskModality::video;
  const bool mask_text = cfg_.modality == MaskModality::both || cfg_.modality == MaskModality::text;
  const std::uint32_t n = static_cast<std::uint32_t>((model_.config().frame_size / model_.config().patch) *
                                                     (model_.config().frame_size / model_.config().patch));

  std::vector<std::unique_ptr<Tape>> tapes(b);
  std::vector<Var> vs(b), ts(b);
  std::vector<Array> vrows(b), trows(b);
  try {
    parallel_for(b, cfg_.threads, [&](std::size_t i) {
      const std::size_t idx = batch[i];
      const vid::VideoClip& clip = data_.clip(idx);
      Rng frng(derive_seed(cfg_.seed, {kFrames, epoch, idx}));
      std::vector<std::uint32_t> frames;
      if (stage == 'A') {
        frames = {static_cast<std::uint32_t>(frng.below(clip.frames))};
      } else {
        const std::uint32_t stride = clip.frames / static_cast<std::uint32_t>(cfg_.frames);
        frames = strided_frames(clip.frames, cfg_.frames, static_cast<std::uint32_t>(frng.below(std::max(stride, 1u))));
      }
      vid::MaskPlan plan = vid::sample_mask(mask_video ? cfg_.strategy : vid::MaskStrategy::none,
                                            mask_video ? cfg_.rho_v : 0.0, static_cast<std::uint32_t>(frames.size()), n,
                                            derive_seed(cfg_.seed, {kVideoMask, epoch, idx}));
      text::TextSequence seq = captions_[idx];
      if (mask_text) {
        seq = text::apply_text_mask(seq, text::sample_text_mask(seq, cfg_.rho_t, derive_seed(cfg_.seed, {kTextMask, epoch, idx})));
      }
      tapes[i] = std::make_unique<Tape>();
      vs[i] = embed_video(*tapes[i], model_, clip, frames, &plan);
      ts[i] = embed_text(*tapes[i], model_, seq);
      vrows[i] = vs[i].value();
      trows[i] = ts[i].value();
    });
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("non-finite forward pass at epoch ") + std::to_string(epoch) + ": " + e.what());
  }

  Tape lt;
  Var v = lt.leaf(rows_of(vrows));
  Var t = lt.leaf(rows_of(trows));
  Var log_tau = contrastive_.learnable ? lt.parameter(model_.log_tau()) : lt.constant(model_.log_tau().value);
  Var loss;
  try {
    loss = infonce_loss(v, t, log_tau);
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("non-finite loss at epoch ") + std::to_string(epoch) + ": " + e.what());
  }
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
  lt.backward(loss);
  if (margin) *margin = eq1_margin(v.value(), t.value());
  const Array dv = lt.grad(v), dt = lt.grad(t);

  std::vector<std::vector<std::pair<diff::Parameter*, Array>>> grads(b);
  parallel_for(b, cfg_.threads, [&](std::size_t i) {
    Tape& tape = *tapes[i];
    Var root = diff::add(diff::matmul(vs[i], tape.constant(row(dv, i))), diff::matmul(ts[i], tape.constant(row(dt, i))));
    tape.backward(root);
    grads[i] = tape.parameter_gradients();
    tapes[i].reset();
  });

  model_.params().zero_grad();
  for (const auto& per_sample : grads)
    for (const auto& [p, g] : per_sample)
      for (std::size_t k = 0; k < g.size(); ++k) p->grad[k] += g[k];
  lt.accumulate_parameter_gradients();
  for (auto& p : model_.params()) {
    if (!p->grad.all_finite()) throw DivergenceError("non-finite gradient for " + p->name + " at epoch " + std::to_string(epoch));
    p->grad.round_to_precision();
  }
  opt_.step(lr);
  clamp_log_tau(model_.log_tau(), contrastive_);
  ++step_count_;
  return value;
}

EpochLog Trainer::run_epoch(char stage, std::size_t epoch_in_stage) {
  const std::uint64_t epoch = epochs_done_ + 1;
  Rng rng(derive_seed(cfg_.seed, {kShuffle, epoch}));
  auto order = rng.sample_without_replacement(static_cast<std::uint32_t>(data_.size()), static_cast<std::uint32_t>(data_.size()));
  const double base = stage == 'A' ? cfg_.lr_a : cfg_.lr_b;
  const double lr = base * std::pow(cfg_.lr_decay, static_cast<double>(epoch_in_stage / cfg_.decay_every));

  double loss_sum = 0.0, margin_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start + 1 < order.size(); start += cfg_.batch) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    double margin = 0.0;
    loss_sum += step(stage, batch, lr, &margin);
    margin_sum += margin;
    ++steps;
  }
  ++epochs_done_;
  EpochLog log;
  log.epoch = epochs_done_;
  log.stage = stage;
  log.loss = loss_sum / static_cast<double>(steps);
  log.margin = margin_sum / static_cast<double>(steps);
  log.tau = std::exp(model_.log_tau().value[0]);
  return log;
}

std::vector<EpochLog> Trainer::run(std::ostream* log, const fs::path* checkpoint) {
  std::vector<EpochLog> out;
  auto finish = [&](const EpochLog& e) {
    out.push_back(e);
    if (log) *log << e.to_json().dump() << '\n' << std::flush;
    if (checkpoint) ckpt::save(*checkpoint, checkpoint_entries(model_, &opt_, cfg_.seed, epochs_done_));
  };
  for (std::size_t e = 0; e < cfg_.epochs_a; ++e) finish(run_epoch('A', e));
  for (std::size_t e = 0; e < cfg_.epochs_b; ++e) finish(run_epoch('B', e));
  return out;
}

std::vector<ckpt::Entry> checkpoint_entries(const MacModel& model, const AdamW* opt, std::uint64_t seed,
                                            std::size_t epochs_done) {
  std::vector<ckpt::Entry> out;
  ckpt::Entry cfg{"meta.encoder_config", {}, {}};
  const nlohmann::json echo = model.config().to_json();
  for (const auto& [k, v] : echo.items()) cfg.values.push_back(static_cast<float>(v.get<std::size_t>()));
  cfg.shape = {cfg.values.size()};
  out.push_back(std::move(cfg));
  out.push_back({"meta.seed", {4}, ckpt::pack_u64(seed)});
  out.push_back({"meta.epochs", {4}, ckpt::pack_u64(epochs_done)});
  for (const auto& p : model.params()) out.push_back(ckpt::from_array(p->name, p->value));
  if (opt) {
    auto s = opt->state_entries();
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

std::unique_ptr<MacModel> model_from_checkpoint(const std::vector<ckpt::Entry>& entries) {
  const ckpt::Entry* cfg_entry = nullptr;
  for (const auto& e : entries)
    if (e.name == "meta.encoder_config") cfg_entry = &e;
  if (!cfg_entry) throw FormatError("checkpoint lacks 'meta.encoder_config'");
  nlohmann::json j = EncoderConfig{}.to_json();
  if (cfg_entry->values.size() != j.size()) throw FormatError("checkpoint entry 'meta.encoder_config' has the wrong size");
  std::size_t i = 0;
  for (auto& [k, v] : j.items()) v = static_cast<std::size_t>(cfg_entry->values[i++]);
  auto model = std::make_unique<MacModel>(EncoderConfig::from_json(j), 0);
  load_parameters(*model, entries);
  return model;
}

void load_parameters(MacModel& model, const std::vector<ckpt::Entry>& entries) {
  std::map<std::string, const ckpt::Entry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  std::vector<Array> values;
  for (const auto& p : model.params()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second->shape != p->value.shape()) {
      throw FormatError("checkpoint parameter '" + p->name + "' has shape " + diff::shape_string(it->second->shape) +
                        ", model expects " + diff::shape_string(p->value.shape()));
    }
    values.push_back(ckpt::to_array(*it->second).with_precision(p->value.precision()));
  }
  std::size_t k = 0;
  for (auto& p : model.params()) p->value = std::move(values[k++]);
}

fs::path vocab_path_for(const fs::path& checkpoint) { return checkpoint.parent_path() / "vocab.txt"; }

nlohmann::json EvalResult::to_json() const {
  return {{"text_to_video", text_to_video.to_json()}, {"video_to_text", video_to_text.to_json()}};
}

EvalResult evaluate(const MacModel& model, const text::Vocabulary& vocab, const data::Dataset& data, std::size_t frames,
                    std::size_t threads) {
  const std::size_t n = data.size();
  std::vector<Array> vrows(n), trows(n);
  parallel_for(n, threads, [&](std::size_t i) {
    Tape tape;
    const auto& clip = data.clip(i);
    auto idx = strided_frames(clip.frames, frames, 0);
    vrows[i] = embed_video(tape, model, clip, idx, nullptr).value();
    trows[i] = embed_text(tape, model, text::tokenize(data.samples()[i].caption, vocab, model.config().max_text_len)).value();
  });
  EvalResult r;
  r.similarity = similarity(rows_of(vrows), rows_of(trows));
  r.text_to_video = retrieval_report(r.similarity, Direction::text_to_video);
  r.video_to_text = retrieval_report(r.similarity, Direction::video_to_text);
  return r;
}

}  // namespace mac
