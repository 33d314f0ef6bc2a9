#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mac/diffcore/array.hpp"

namespace mac::diff {

struct Parameter {
  std::string name;  // dotted path, e.g. "video.block0.attn_t.wq"
  Array value;
  Array grad;        // same shape as value

  void zero_grad();
};

// Owns a model's parameters in registration order. Addresses are stable.
class ParameterSet {
 public:
  Parameter& add(std::string name, Array value);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& get(const std::string& name);

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace mac::diff
