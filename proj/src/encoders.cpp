#include "mac/encoders.hpp"

#include <cmath>
#include <map>
#include <set>

#include "mac/errors.hpp"
#include "mac/rng.hpp"

namespace mac {

using diff::Array;
using diff::Parameter;
using diff::Shape;
using diff::Tape;
using diff::Var;

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskBias = -1e9;

#define MAC_CONFIG_FIELDS(X)                                                                               \
  X(depth) X(width) X(heads) X(mlp_ratio) X(patch) X(frame_size) X(channels) X(max_frames) X(max_patches) \
  X(text_depth) X(text_width) X(text_heads) X(max_text_len) X(vocab_size) X(projection)

}  // namespace

// With `layout` set, records names and shapes and allocates nothing.
class Builder {
 public:
  Builder(diff::ParameterSet& params, std::uint64_t seed, std::vector<ParameterShape>* layout = nullptr)
      : params_(params), rng_(derive_seed(seed, {0x494e4954})), layout_(layout) {}

  Parameter* normal(const std::string& name, Shape shape, double std = kInitStd) {
    if (layout_) return dry(name, std::move(shape));
    Array a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng_.truncated_normal(std);
    a.round_to_precision();
    return &params_.add(name, std::move(a));
  }
  Parameter* constant(const std::string& name, Shape shape, double v) {
    if (layout_) return dry(name, std::move(shape));
    Array a(std::move(shape));
    a.fill(v);
    return &params_.add(name, std::move(a));
  }
  // [in, out] weights, std 1/sqrt(in).
  Parameter* dense(const std::string& name, Shape shape) {
    const double std = 1.0 / std::sqrt(static_cast<double>(shape.at(0)));
    return normal(name, std::move(shape), std);
  }
  NormParams norm(const std::string& name, std::size_t d) {
    return {constant(name + ".gain", {d}, 1.0), constant(name + ".bias", {d}, 0.0)};
  }
  AttentionParams attention(const std::string& name, std::size_t d) {
    AttentionParams a;
    a.wq = dense(name + ".wq", {d, d});
    a.bq = constant(name + ".bq", {d}, 0.0);
    a.wk = dense(name + ".wk", {d, d});
    a.bk = constant(name + ".bk", {d}, 0.0);
    a.wv = dense(name + ".wv", {d, d});
    a.bv = constant(name + ".bv", {d}, 0.0);
    a.wo = dense(name + ".wo", {d, d});
    a.bo = constant(name + ".bo", {d}, 0.0);
    return a;
  }
  MlpParams mlp(const std::string& name, std::size_t d, std::size_t hidden) {
    return {dense(name + ".w1", {d, hidden}), constant(name + ".b1", {hidden}, 0.0),
            dense(name + ".w2", {hidden, d}), constant(name + ".b2", {d}, 0.0)};
  }

 private:
  Parameter* dry(const std::string& name, Shape shape) {
    layout_->push_back({name, std::move(shape)});
    return &scratch_;
  }

  diff::ParameterSet& params_;
  Rng rng_;
  std::vector<ParameterShape>* layout_;
  Parameter scratch_;
};

namespace {

Var linear(Tape& t, Var x, Parameter* w, Parameter* b) {
  return diff::add_rowvec(diff::matmul(x, t.parameter(*w)), t.parameter(*b));
}

Var norm(Tape& t, Var x, const NormParams& n) {
  return diff::layernorm(x, t.parameter(*n.gain), t.parameter(*n.bias));
}

Var mlp(Tape& t, Var x, const MlpParams& m) {
  return linear(t, diff::gelu(linear(t, x, m.w1, m.b1)), m.w2, m.b2);
}

// Row layout for grouped attention over a [CLS]-first sequence of R rows.
// Group g occupies slots [g*S, (g+1)*S); slot 0 of each group is the [CLS]
// row, -1 marks padding. `back[r-1]` is the slot of row r, or -1 when row r
// sits in no group.
struct Groups {
  std::size_t count = 0;
  std::size_t slots = 0;
  std::vector<std::int64_t> index;
  std::vector<std::int64_t> back;
  bool padded = false;
};

Groups make_groups(const std::vector<std::vector<std::int64_t>>& members, std::size_t rows) {
  Groups g;
  g.back.assign(rows - 1, -1);
  for (const auto& m : members) g.slots = std::max(g.slots, m.size() + 1);
  g.count = members.size();
  g.index.assign(g.count * g.slots, -1);
  for (std::size_t k = 0; k < members.size(); ++k) {
    g.index[k * g.slots] = 0;
    for (std::size_t j = 0; j < members[k].size(); ++j) {
      g.index[k * g.slots + 1 + j] = members[k][j];
      g.back[static_cast<std::size_t>(members[k][j]) - 1] = static_cast<std::int64_t>(k * g.slots + 1 + j);
    }
    if (members[k].size() + 1 < g.slots) g.padded = true;
  }
  return g;
}

Var split(Var x, std::size_t groups, std::size_t seq, std::size_t heads) {
  return diff::split_heads(x, groups, seq, heads);
}

// Scaled dot-product attention inside each group; padded keys get kMaskBias.
Var grouped_attention(Tape& t, Var q, Var k, Var v, const Groups& g, std::size_t heads) {
  const std::size_t d = q.shape()[1];
  Var qg = split(diff::gather_rows(q, g.index), g.count, g.slots, heads);
  Var kg = split(diff::gather_rows(k, g.index), g.count, g.slots, heads);
  Var vg = split(diff::gather_rows(v, g.index), g.count, g.slots, heads);
  Var scores = diff::scale(diff::bmm_nt(qg, kg), 1.0 / std::sqrt(static_cast<double>(d / heads)));
  if (g.padded) {
    const std::size_t s = g.slots;
    Array bias({g.count * heads, s, s});
    for (std::size_t gi = 0; gi < g.count; ++gi)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j)
            if (g.index[gi * s + j] < 0) bias[((gi * heads + h) * s + i) * s + j] = kMaskBias;
    scores = diff::add(scores, t.constant(std::move(bias)));
  }
  return diff::merge_heads(diff::bmm(diff::softmax_lastdim(scores), vg), g.count, heads);
}

// Row 0 attending to every row.
Var cls_attention(Var q, Var k, Var v, std::size_t heads) {
  const std::size_t rows = k.shape()[0];
  const std::size_t d = q.shape()[1];
  Var q0 = split(diff::slice_rows(q, 0, 1), 1, 1, heads);
  Var scores = diff::scale(diff::bmm_nt(q0, split(k, 1, rows, heads)), 1.0 / std::sqrt(static_cast<double>(d / heads)));
  return diff::merge_heads(diff::bmm(diff::softmax_lastdim(scores), split(v, 1, rows, heads)), 1, heads);
}

// Residual update for one divided sub-attention. Rows outside every group get zero.
Var sub_attention(Tape& t, const AttentionParams& a, Var y, const Groups& g, std::size_t heads) {
  Var q = linear(t, y, a.wq, a.bq);
  Var k = linear(t, y, a.wk, a.bk);
  Var v = linear(t, y, a.wv, a.bv);
  Var grouped = linear(t, grouped_attention(t, q, k, v, g, heads), a.wo, a.bo);
  Var cls = linear(t, cls_attention(q, k, v, heads), a.wo, a.bo);
  return diff::concat_rows({cls, diff::gather_rows(grouped, g.back)});
}

}  // namespace

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.depth = 12;
  c.width = 768;
  c.heads = 12;
  c.mlp_ratio = 4;
  c.patch = 16;
  c.frame_size = 224;
  c.channels = 3;
  c.max_frames = 4;
  c.max_patches = 196;
  c.text_depth = 6;
  c.text_width = 768;
  c.text_heads = 12;
  c.max_text_len = 128;
  c.vocab_size = 30522;
  c.projection = 256;
  return c;
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("encoder config: " + m); };
#define MAC_POSITIVE(f) \
  if (f == 0) fail(#f " must be positive");
  MAC_CONFIG_FIELDS(MAC_POSITIVE)
#undef MAC_POSITIVE
  if (width % heads != 0) fail("width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  if (text_width % text_heads != 0)
    fail("text_width " + std::to_string(text_width) + " not divisible by text_heads " + std::to_string(text_heads));
  if (frame_size % patch != 0) fail("frame_size must be a multiple of patch");
  const std::size_t grid = frame_size / patch;
  if (max_patches < grid * grid)
    fail("max_patches " + std::to_string(max_patches) + " below patches per frame " + std::to_string(grid * grid));
  if (max_text_len < 2) fail("max_text_len must be at least 2");
  if (vocab_size < text::Vocabulary::kReserved) fail("vocab_size must cover the reserved tokens");
}

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json j;
#define MAC_TO_JSON(f) j[#f] = f;
  MAC_CONFIG_FIELDS(MAC_TO_JSON)
#undef MAC_TO_JSON
  return j;
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("encoder config must be a JSON object");
  static const std::set<std::string> known = {
#define MAC_NAME(f) #f,
      MAC_CONFIG_FIELDS(MAC_NAME)
#undef MAC_NAME
  };
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown encoder config key '" + key + "'");
  EncoderConfig c;
#define MAC_FROM_JSON(f)                                                                           \
  if (j.contains(#f)) {                                                                           \
    if (!j[#f].is_number_unsigned()) throw ConfigError("encoder config key '" #f "' must be a non-negative integer"); \
    c.f = j[#f].get<std::size_t>();                                                               \
  }
  MAC_CONFIG_FIELDS(MAC_FROM_JSON)
#undef MAC_FROM_JSON
  c.validate();
  return c;
}

MacModel::MacModel(const EncoderConfig& cfg, std::uint64_t seed, double tau_init) : cfg_(cfg) {
  cfg_.validate();
  if (!(tau_init > 0.0)) throw ConfigError("temperature must be positive");
  Builder b(params_, seed);
  build(b, tau_init);
}

MacModel::MacModel(const EncoderConfig& cfg, std::vector<ParameterShape>& layout) : cfg_(cfg) {
  cfg_.validate();
  Builder b(params_, 0, &layout);
  build(b, 1.0);
}

std::vector<ParameterShape> MacModel::layout(const EncoderConfig& cfg) {
  std::vector<ParameterShape> out;
  MacModel skeleton(cfg, out);
  return out;
}

void MacModel::build(Builder& b, double tau_init) {
  const std::size_t d = cfg_.width;
  patch_w_ = b.dense("video.patch.weight", {cfg_.patch_width(), d});
  patch_b_ = b.constant("video.patch.bias", {d}, 0.0);
  pos_s_ = b.normal("video.pos_spatial", {cfg_.max_patches, d});
  pos_t_ = b.normal("video.pos_temporal", {cfg_.max_frames, d});
  video_cls_ = b.normal("video.cls", {1, d});
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const std::string p = "video.block" + std::to_string(i);
    VideoBlock blk;
    blk.norm_t = b.norm(p + ".norm_t", d);
    blk.attn_t = b.attention(p + ".attn_t", d);
    blk.norm_s = b.norm(p + ".norm_s", d);
    blk.attn_s = b.attention(p + ".attn_s", d);
    blk.norm_m = b.norm(p + ".norm_m", d);
    blk.mlp = b.mlp(p + ".mlp", d, d * cfg_.mlp_ratio);
    video_blocks_.push_back(blk);
  }
  video_norm_ = b.norm("video.norm", d);

  const std::size_t w = cfg_.text_width;
  tok_emb_ = b.normal("text.token_embedding", {cfg_.vocab_size, w});
  text_pos_ = b.normal("text.pos", {cfg_.max_text_len, w});
  for (std::size_t i = 0; i < cfg_.text_depth; ++i) {
    const std::string p = "text.block" + std::to_string(i);
    TextBlock blk;
    blk.norm_a = b.norm(p + ".norm_a", w);
    blk.attn = b.attention(p + ".attn", w);
    blk.norm_m = b.norm(p + ".norm_m", w);
    blk.mlp = b.mlp(p + ".mlp", w, w * cfg_.mlp_ratio);
    text_blocks_.push_back(blk);
  }
  text_norm_ = b.norm("text.norm", w);

  video_head_ = {b.dense("head.video.weight", {d, cfg_.projection}), b.constant("head.video.bias", {cfg_.projection}, 0.0)};
  text_head_ = {b.dense("head.text.weight", {w, cfg_.projection}), b.constant("head.text.bias", {cfg_.projection}, 0.0)};
  log_tau_ = b.constant("logit.log_tau", {1}, std::log(tau_init));
}

Var video_forward(Tape& tape, const MacModel& model, const vid::VisibleTokens& tokens, VideoForwardOptions opt) {
  const std::size_t count = tokens.count();
  if (count == 0) throw ContractError("video encoder needs at least one visible token");
  if (tokens.embeddings.shape() != Shape{count, model.config().width}) {
    throw DimensionError("visible tokens " + diff::shape_string(tokens.embeddings.shape()) + " vs width " +
                         std::to_string(model.config().width));
  }
  const std::size_t rows = count + 1;
  const std::size_t heads = model.config().heads;

  std::map<std::uint32_t, std::vector<std::int64_t>> by_space, by_frame;
  for (std::size_t i = 0; i < count; ++i) {
    by_space[tokens.spatial_index[i]].push_back(static_cast<std::int64_t>(i + 1));
    by_frame[tokens.frame_index[i]].push_back(static_cast<std::int64_t>(i + 1));
  }
  std::vector<std::vector<std::int64_t>> temporal_members, spatial_members;
  for (auto& [s, m] : by_space)
    if (m.size() >= 2) temporal_members.push_back(std::move(m));
  for (auto& [f, m] : by_frame) spatial_members.push_back(std::move(m));
  const bool temporal = opt.temporal && !temporal_members.empty();
  const Groups tg = temporal ? make_groups(temporal_members, rows) : Groups{};
  const Groups sg = make_groups(spatial_members, rows);

  Var z = diff::concat_rows({tape.parameter(model.video_cls()), tokens.embeddings});
  for (const VideoBlock& blk : model.video_blocks()) {
    if (temporal) z = diff::add(z, sub_attention(tape, blk.attn_t, norm(tape, z, blk.norm_t), tg, heads));
    z = diff::add(z, sub_attention(tape, blk.attn_s, norm(tape, z, blk.norm_s), sg, heads));
    z = diff::add(z, mlp(tape, norm(tape, z, blk.norm_m), blk.mlp));
  }
  return norm(tape, diff::slice_rows(z, 0, 1), model.video_norm());
}

Var encode_video(Tape& tape, const MacModel& model, const vid::PatchSet& patches, const vid::MaskPlan& plan,
                 VideoForwardOptions opt) {
  vid::VisibleTokens tokens =
      vid::embed_and_gather(tape, patches, plan, model.patch_projection(), model.positional_tables());
  return video_forward(tape, model, tokens, opt);
}

Var text_forward(Tape& tape, const MacModel& model, const text::TextSequence& seq) {
  const EncoderConfig& cfg = model.config();
  const std::size_t len = seq.ids.size();
  if (len == 0 || len > cfg.max_text_len) {
    throw DimensionError("text sequence of " + std::to_string(len) + " ids, model takes at most " +
                         std::to_string(cfg.max_text_len));
  }
  if (seq.length == 0 || seq.length > len) throw ContractError("text sequence length outside its ids");
  for (auto id : seq.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
  }
  const std::size_t heads = cfg.text_heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.text_width / heads));

  Var bias;
  if (seq.length < len) {
    Array b({heads, len, len});
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = seq.length; j < len; ++j) b[(h * len + i) * len + j] = kMaskBias;
    bias = tape.constant(std::move(b));
  }

  Var z = diff::add(diff::embedding_lookup(tape.parameter(model.token_embedding()), seq.ids),
                    diff::slice_rows(tape.parameter(model.text_positions()), 0, len));
  for (const TextBlock& blk : model.text_blocks()) {
    Var y = norm(tape, z, blk.norm_a);
    Var q = split(linear(tape, y, blk.attn.wq, blk.attn.bq), 1, len, heads);
    Var k = split(linear(tape, y, blk.attn.wk, blk.attn.bk), 1, len, heads);
    Var v = split(linear(tape, y, blk.attn.wv, blk.attn.bv), 1, len, heads);
    Var scores = diff::scale(diff::bmm_nt(q, k), inv);
    if (bias.valid()) scores = diff::add(scores, bias);
    Var att = diff::merge_heads(diff::bmm(diff::softmax_lastdim(scores), v), 1, heads);
    z = diff::add(z, linear(tape, att, blk.attn.wo, blk.attn.bo));
    z = diff::add(z, mlp(tape, norm(tape, z, blk.norm_m), blk.mlp));
  }
  return norm(tape, diff::slice_rows(z, 0, 1), model.text_norm());
}

Var project_video(Tape& tape, const MacModel& model, Var v_cls) {
  return diff::l2_normalize_lastdim(linear(tape, v_cls, model.video_head().weight, model.video_head().bias));
}

Var project_text(Tape& tape, const MacModel& model, Var t_cls) {
  return diff::l2_normalize_lastdim(linear(tape, t_cls, model.text_head().weight, model.text_head().bias));
}

}  // namespace mac
