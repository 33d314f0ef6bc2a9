#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mac::text {

using TokenId = std::int64_t;

// Token <-> id table. Ids 0..3 are the reserved specials.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();

  // Words of the normalized corpus ordered by descending frequency, ties
  // broken lexicographically.
  static Vocabulary build(std::span<const std::string> corpus);
  // Specials followed by `tokens` in the given order; duplicates rejected.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  // One token per line; line number = id; the first four lines are the specials.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::optional<TokenId> find(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void insert(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Contiguous token positions [begin, end) holding one source word.
struct WordSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

struct TextSequence {
  std::vector<TokenId> ids;            // length L_max, [CLS] first, [PAD] after `length`
  std::vector<WordSpan> word_groups;   // ordered, disjoint
  std::size_t length = 0;              // attended positions including [CLS]

  friend bool operator==(const TextSequence&, const TextSequence&) = default;
};

struct TextMaskPlan {
  std::vector<std::size_t> groups;     // masked word-group indices, ascending
  std::vector<std::size_t> positions;  // union of the chosen spans, ascending
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::size_t sequence_length = 0;     // ids.size() of the source sequence
  std::size_t group_count = 0;
};

// Lowercase and split on non-alphanumeric characters.
std::vector<std::string> normalize_words(const std::string& text);

// Words found in the vocabulary become one token; other words are split into
// greedy longest-match pieces of at most 4 characters ("##" marks a
// continuation piece), with [UNK] for pieces the vocabulary lacks. Words are
// kept whole: a word that does not fit in L_max is dropped with everything
// after it.
TextSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len);

// Masked group count is round-half-up of ratio * #groups, chosen uniformly
// without replacement.
TextMaskPlan sample_text_mask(const TextSequence& seq, double ratio, std::uint64_t seed);

// Writes [MASK] over every planned position; length and padding unchanged.
TextSequence apply_text_mask(const TextSequence& seq, const TextMaskPlan& plan);

}  // namespace mac::text
