#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "mac/diffcore/ops.hpp"
#include "mac/textpipe.hpp"
#include "mac/vidpipe.hpp"

namespace mac {

struct EncoderConfig {
  std::size_t depth = 2;
  std::size_t width = 64;  // D
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t patch = 8;
  std::size_t frame_size = 32;
  std::size_t channels = 3;
  std::size_t max_frames = 4;
  std::size_t max_patches = 16;
  std::size_t text_depth = 2;
  std::size_t text_width = 64;
  std::size_t text_heads = 4;
  std::size_t max_text_len = 16;
  std::size_t vocab_size = 64;
  std::size_t projection = 32;

  static EncoderConfig desk();
  // ViT-B/16 video tower + DistilBERT-shaped text tower. Accounting only.
  static EncoderConfig paper();

  std::size_t patch_width() const { return patch * patch * channels; }
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct AttentionParams {
  diff::Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

struct NormParams {
  diff::Parameter *gain, *bias;
};

struct MlpParams {
  diff::Parameter *w1, *b1, *w2, *b2;
};

struct VideoBlock {
  NormParams norm_t, norm_s, norm_m;
  AttentionParams attn_t, attn_s;
  MlpParams mlp;
};

struct TextBlock {
  NormParams norm_a, norm_m;
  AttentionParams attn;
  MlpParams mlp;
};

struct Head {
  diff::Parameter *weight, *bias;
};

struct ParameterShape {
  std::string name;
  diff::Shape shape;
};

class Builder;

// Both towers, both heads and the log-temperature, in one parameter set.
class MacModel {
 public:
  // log_tau starts at log(tau_init).
  explicit MacModel(const EncoderConfig& cfg, std::uint64_t seed, double tau_init = 0.07);
  MacModel(const MacModel&) = delete;
  MacModel& operator=(const MacModel&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  diff::ParameterSet& params() { return params_; }
  const diff::ParameterSet& params() const { return params_; }

  vid::PatchProjection patch_projection() const { return {patch_w_, patch_b_}; }
  vid::PositionalTables positional_tables() const { return {pos_s_, pos_t_}; }

  diff::Parameter& video_cls() const { return *video_cls_; }
  const std::vector<VideoBlock>& video_blocks() const { return video_blocks_; }
  const NormParams& video_norm() const { return video_norm_; }

  diff::Parameter& token_embedding() const { return *tok_emb_; }
  diff::Parameter& text_positions() const { return *text_pos_; }
  const std::vector<TextBlock>& text_blocks() const { return text_blocks_; }
  const NormParams& text_norm() const { return text_norm_; }

  const Head& video_head() const { return video_head_; }
  const Head& text_head() const { return text_head_; }
  diff::Parameter& log_tau() const { return *log_tau_; }

  // Names and shapes the constructor would register, without allocating.
  static std::vector<ParameterShape> layout(const EncoderConfig& cfg);

 private:
  MacModel(const EncoderConfig& cfg, std::vector<ParameterShape>& layout);
  void build(Builder& b, double tau_init);

  EncoderConfig cfg_;
  diff::ParameterSet params_;
  diff::Parameter *patch_w_, *patch_b_, *pos_s_, *pos_t_, *video_cls_;
  std::vector<VideoBlock> video_blocks_;
  NormParams video_norm_;
  diff::Parameter *tok_emb_, *text_pos_;
  std::vector<TextBlock> text_blocks_;
  NormParams text_norm_;
  Head video_head_, text_head_;
  diff::Parameter* log_tau_;
};

struct VideoForwardOptions {
  // Off: blocks run spatial attention and MLP only.
  bool temporal = true;
};

// v_cls [1, D] from visible tokens. Temporal attention runs inside each set of
// visible tokens sharing a spatial index, spatial attention inside each frame;
// the [CLS] row is a key in every group and attends to all rows. A token alone
// at its spatial index gets no temporal update, and when no spatial index has
// two visible tokens the temporal sub-attention is skipped.
diff::Var video_forward(diff::Tape& tape, const MacModel& model, const vid::VisibleTokens& tokens,
                        VideoForwardOptions opt = {});

// Patch embedding + video_forward.
diff::Var encode_video(diff::Tape& tape, const MacModel& model, const vid::PatchSet& patches,
                       const vid::MaskPlan& plan, VideoForwardOptions opt = {});

// t_cls [1, W]; [PAD] keys are excluded with an additive bias.
diff::Var text_forward(diff::Tape& tape, const MacModel& model, const text::TextSequence& seq);

// Linear head then L2 normalization, row-wise.
diff::Var project_video(diff::Tape& tape, const MacModel& model, diff::Var v_cls);
diff::Var project_text(diff::Tape& tape, const MacModel& model, diff::Var t_cls);

}  // namespace mac
