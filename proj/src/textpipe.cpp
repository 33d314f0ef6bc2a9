#include "mac/textpipe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "mac/errors.hpp"
#include "mac/rng.hpp"
#include "mac/vidpipe.hpp"

namespace mac::text {
namespace {

constexpr std::size_t kMaxPiece = 4;
const char* const kSpecials[] = {"[PAD]", "[CLS]", "[MASK]", "[UNK]"};

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* s : kSpecials) insert(s);
}

void Vocabulary::insert(const std::string& token) {
  if (token.empty()) throw FormatError("empty vocabulary token at id " + std::to_string(tokens_.size()));
  if (ids_.count(token)) throw FormatError("duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  std::map<std::string, std::size_t> counts;
  for (const std::string& line : corpus)
    for (const std::string& w : normalize_words(line)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [w, c] : ranked) tokens.push_back(w);
  return from_tokens(tokens);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const std::string& t : tokens) v.insert(t);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary file " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < kReserved) throw FormatError(path.string() + ": fewer than four reserved lines");
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (lines[i] != kSpecials[i]) {
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " must be " + kSpecials[i]);
    }
  }
  return from_tokens(std::vector<std::string>(lines.begin() + kReserved, lines.end()));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write vocabulary file " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

namespace {

std::vector<TokenId> word_pieces(const std::string& word, const Vocabulary& vocab) {
  if (auto id = vocab.find(word)) return {*id};
  std::vector<TokenId> pieces;
  std::size_t pos = 0;
  while (pos < word.size()) {
    const std::size_t longest = std::min(kMaxPiece, word.size() - pos);
    bool matched = false;
    for (std::size_t len = longest; len >= 1; --len) {
      const std::string piece = (pos > 0 ? "##" : "") + word.substr(pos, len);
      if (auto id = vocab.find(piece)) {
        pieces.push_back(*id);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      pieces.push_back(Vocabulary::kUnk);
      pos += longest;
    }
  }
  return pieces;
}

}  // namespace

TextSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("text length limit must be at least 2, got " + std::to_string(max_len));
  TextSequence seq;
  seq.ids.push_back(Vocabulary::kCls);
  std::vector<std::vector<TokenId>> words;
  for (const std::string& w : normalize_words(text)) words.push_back(word_pieces(w, vocab));
  if (words.empty()) words.push_back({Vocabulary::kUnk});
  for (const auto& pieces : words) {
    if (seq.ids.size() + pieces.size() > max_len) break;
    seq.word_groups.push_back({seq.ids.size(), seq.ids.size() + pieces.size()});
    seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.end());
  }
  seq.length = seq.ids.size();
  seq.ids.resize(max_len, Vocabulary::kPad);
  return seq;
}

TextMaskPlan sample_text_mask(const TextSequence& seq, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("text mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  TextMaskPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.sequence_length = seq.ids.size();
  plan.group_count = seq.word_groups.size();
  const auto groups = static_cast<std::uint32_t>(seq.word_groups.size());
  const std::uint32_t count = vid::masked_count(ratio, groups);
  Rng rng(seed);
  for (std::uint32_t g : rng.sample_without_replacement(groups, count)) plan.groups.push_back(g);
  std::sort(plan.groups.begin(), plan.groups.end());
  for (std::size_t g : plan.groups)
    for (std::size_t p = seq.word_groups[g].begin; p < seq.word_groups[g].end; ++p) plan.positions.push_back(p);
  return plan;
}

TextSequence apply_text_mask(const TextSequence& seq, const TextMaskPlan& plan) {
  if (plan.sequence_length != seq.ids.size() || plan.group_count != seq.word_groups.size()) {
    throw ContractError("text mask plan for a sequence of " + std::to_string(plan.sequence_length) + " ids / " +
                        std::to_string(plan.group_count) + " words applied to one with " +
                        std::to_string(seq.ids.size()) + " / " + std::to_string(seq.word_groups.size()));
  }
  TextSequence out = seq;
  for (std::size_t p : plan.positions) {
    if (p == 0 || p >= seq.length) {
      throw ContractError("text mask position " + std::to_string(p) + " is [CLS] or padding");
    }
    out.ids[p] = Vocabulary::kMask;
  }
  return out;
}

}  // namespace mac::text
