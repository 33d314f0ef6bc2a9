#include "mac/metrics.hpp"

#include <algorithm>

#include "mac/errors.hpp"

namespace mac {

namespace {

void check_square(const diff::Array& sim) {
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1) || sim.dim(0) == 0) {
    throw DimensionError("similarity matrix must be square and non-empty, got " + diff::shape_string(sim.shape()));
  }
}

double score(const diff::Array& sim, Direction dir, std::size_t query, std::size_t item) {
  return dir == Direction::text_to_video ? sim.at(item, query) : sim.at(query, item);
}

}  // namespace

std::string to_string(Direction d) { return d == Direction::text_to_video ? "text_to_video" : "video_to_text"; }

std::vector<std::size_t> true_match_ranks(const diff::Array& sim, Direction dir) {
  check_square(sim);
  const std::size_t n = sim.dim(0);
  std::vector<std::size_t> ranks(n);
  for (std::size_t q = 0; q < n; ++q) {
    const double target = score(sim, dir, q, q);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = score(sim, dir, q, j);
      if (s > target || (s == target && j < q)) ++rank;
    }
    ranks[q] = rank;
  }
  return ranks;
}

double recall_at_k(const diff::Array& sim, std::size_t k, Direction dir) {
  check_square(sim);
  if (k == 0 || k > sim.dim(0)) {
    throw ContractError("R@" + std::to_string(k) + " undefined for a gallery of " + std::to_string(sim.dim(0)));
  }
  auto ranks = true_match_ranks(sim, dir);
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

std::size_t median_rank(const diff::Array& sim, Direction dir) {
  auto ranks = true_match_ranks(sim, dir);
  std::sort(ranks.begin(), ranks.end());
  return ranks[(ranks.size() - 1) / 2];
}

RetrievalReport retrieval_report(const diff::Array& sim, Direction dir) {
  RetrievalReport r;
  r.direction = dir;
  r.queries = sim.dim(0);
  auto at = [&](std::size_t k) { return k <= r.queries ? recall_at_k(sim, k, dir) : -1.0; };
  r.r1 = at(1);
  r.r5 = at(5);
  r.r10 = at(10);
  r.median_rank = median_rank(sim, dir);
  return r;
}

nlohmann::json RetrievalReport::to_json() const {
  auto val = [](double v) { return v < 0 ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"direction", to_string(direction)}, {"queries", queries},  {"R@1", val(r1)},
          {"R@5", val(r5)},                    {"R@10", val(r10)},    {"MedR", median_rank}};
}

}  // namespace mac
