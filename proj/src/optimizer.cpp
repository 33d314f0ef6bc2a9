#include "mac/optimizer.hpp"

#include <cmath>
#include <map>

#include "mac/errors.hpp"

namespace mac {

AdamW::AdamW(diff::ParameterSet& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape(), p->value.precision());
    v_.emplace_back(p->value.shape(), p->value.precision());
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    diff::Parameter& p = params_[k];
    diff::Array& m = m_[k];
    diff::Array& v = v_[k];
    const double decay = p.value.rank() >= 2 ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps) + decay * p.value[i];
      p.value[i] -= lr * update;
    }
    m.round_to_precision();
    v.round_to_precision();
    p.value.round_to_precision();
  }
}

std::vector<ckpt::Entry> AdamW::state_entries() const {
  std::vector<ckpt::Entry> out;
  out.push_back({"adam.step", {4}, ckpt::pack_u64(steps_)});
  for (std::size_t k = 0; k < params_.size(); ++k) out.push_back(ckpt::from_array("adam.m/" + params_[k].name, m_[k]));
  for (std::size_t k = 0; k < params_.size(); ++k) out.push_back(ckpt::from_array("adam.v/" + params_[k].name, v_[k]));
  return out;
}

void AdamW::load_state(const std::vector<ckpt::Entry>& entries) {
  std::map<std::string, const ckpt::Entry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto need = [&](const std::string& name) -> const ckpt::Entry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks optimizer entry '" + name + "'");
    return *it->second;
  };
  const auto& s = need("adam.step");
  if (s.values.size() != 4) throw FormatError("checkpoint entry 'adam.step' has the wrong shape");
  std::uint64_t steps = ckpt::unpack_u64(s.values.data());
  std::vector<diff::Array> m, v;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (auto [prefix, dst] : {std::pair{"adam.m/", &m}, std::pair{"adam.v/", &v}}) {
      const auto& e = need(prefix + params_[k].name);
      if (e.shape != params_[k].value.shape()) {
        throw FormatError("checkpoint entry '" + e.name + "' has shape " + diff::shape_string(e.shape) + ", expected " +
                          diff::shape_string(params_[k].value.shape()));
      }
      dst->push_back(ckpt::to_array(e).with_precision(params_[k].value.precision()));
    }
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace mac
