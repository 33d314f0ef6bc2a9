#pragma once

#include <cstdint>
#include <vector>

#include "mac/checkpoint.hpp"
#include "mac/diffcore/parameter.hpp"

namespace mac {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled, matrices only
};

// Adam with decoupled weight decay on parameters of rank >= 2. Reads
// Parameter::grad; writes values rounded to their precision.
class AdamW {
 public:
  AdamW(diff::ParameterSet& params, AdamConfig cfg);

  void step(double lr);
  std::uint64_t steps() const { return steps_; }

  // "adam.step", then "adam.m/<param>" and "adam.v/<param>".
  std::vector<ckpt::Entry> state_entries() const;
  void load_state(const std::vector<ckpt::Entry>& entries);

 private:
  diff::ParameterSet& params_;
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<diff::Array> m_, v_;
};

}  // namespace mac
