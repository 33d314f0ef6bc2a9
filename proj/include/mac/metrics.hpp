#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mac/diffcore/array.hpp"

namespace mac {

// Rows of the similarity matrix are videos, columns texts; the true match of
// query i is item i.
enum class Direction { text_to_video, video_to_text };

std::string to_string(Direction d);

// 1-based rank of the true match for every query. Ties go to the lower index.
std::vector<std::size_t> true_match_ranks(const diff::Array& sim, Direction dir);

// Percentage of queries whose true match ranks within the top k.
double recall_at_k(const diff::Array& sim, std::size_t k, Direction dir);

// Median rank; with an even count the lower of the two central ranks.
std::size_t median_rank(const diff::Array& sim, Direction dir);

struct RetrievalReport {
  Direction direction = Direction::text_to_video;
  std::size_t queries = 0;
  double r1 = 0, r5 = 0, r10 = 0;  // negative when k exceeds the gallery
  std::size_t median_rank = 0;

  nlohmann::json to_json() const;
};

RetrievalReport retrieval_report(const diff::Array& sim, Direction dir);

}  // namespace mac
