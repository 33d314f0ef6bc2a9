#include "mac/objective.hpp"

#include <algorithm>
#include <cmath>

#include "mac/errors.hpp"

namespace mac {

using diff::Array;
using diff::Var;

void ContrastiveConfig::validate() const {
  if (!(tau_min > 0.0) || !(tau_max >= tau_min)) throw ConfigError("temperature bounds must satisfy 0 < min <= max");
  if (!(tau_init > 0.0)) throw ConfigError("temperature must be positive");
}

namespace {

void check_batch(const diff::Shape& v, const diff::Shape& t) {
  if (v.size() != 2 || t.size() != 2 || v != t) {
    throw DimensionError("embedding batches must share shape [B, P]: video " + diff::shape_string(v) + ", text " +
                         diff::shape_string(t));
  }
  if (v[0] == 0) throw ContractError("empty embedding batch");
}

}  // namespace

Var similarity(Var video, Var text) {
  check_batch(video.shape(), text.shape());
  return diff::matmul(video, diff::transpose(text));
}

Array similarity(const Array& video, const Array& text) {
  diff::Tape tape(diff::Precision::f64);
  return similarity(tape.constant(video), tape.constant(text)).value();
}

Var infonce_loss(Var video, Var text, Var log_tau) {
  if (log_tau.shape().empty() || log_tau.value().size() != 1) throw DimensionError("log_tau must hold one value");
  Var s = similarity(video, text);
  const double b = static_cast<double>(video.shape()[0]);
  Var inv_tau = diff::exp(diff::scale(log_tau, -1.0));
  Var logits = diff::mul_scalar(s, inv_tau);
  Var v2t = diff::sum(diff::diagonal(diff::log_softmax_lastdim(logits)));
  Var t2v = diff::sum(diff::diagonal(diff::log_softmax_lastdim(diff::transpose(logits))));
  return diff::scale(diff::add(v2t, t2v), -1.0 / b);
}

double infonce_value(const Array& video, const Array& text, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  diff::Tape tape(diff::Precision::f64);
  Var lt = tape.constant(Array({1}, {std::log(tau)}, diff::Precision::f64));
  return infonce_loss(tape.constant(video), tape.constant(text), lt).value().item();
}

double eq1_margin(const Array& video, const Array& text) {
  Array s = similarity(video, text);
  const std::size_t n = s.dim(0);
  if (n < 2) throw ContractError("margin needs at least two pairs");
  double diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) (i == j ? diag : off) += s.at(i, j);
  return diag / static_cast<double>(n) - off / static_cast<double>(n * (n - 1));
}

void clamp_log_tau(diff::Parameter& log_tau, const ContrastiveConfig& cfg) {
  const double lo = std::log(cfg.tau_min), hi = std::log(cfg.tau_max);
  for (std::size_t i = 0; i < log_tau.value.size(); ++i) log_tau.value[i] = std::clamp(log_tau.value[i], lo, hi);
  log_tau.value.round_to_precision();
}

}  // namespace mac
