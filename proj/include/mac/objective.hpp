#pragma once

#include "json.hpp"
#include "mac/diffcore/ops.hpp"

namespace mac {

struct ContrastiveConfig {
  double tau_init = 0.07;
  bool learnable = true;
  double tau_min = 0.01;
  double tau_max = 1.0;

  void validate() const;
};

// S[i][j] = v_i . t_j; rows video, columns text.
diff::Var similarity(diff::Var video, diff::Var text);
diff::Array similarity(const diff::Array& video, const diff::Array& text);

// Symmetric cross-entropy over S / tau, averaged over the batch:
// (1/B) sum_i [ -log softmax_row_i(i) - log softmax_col_i(i) ].
// log_tau holds one value.
diff::Var infonce_loss(diff::Var video, diff::Var text, diff::Var log_tau);

// Value only, 64-bit.
double infonce_value(const diff::Array& video, const diff::Array& text, double tau);

// mean(diag S) - mean(offdiag S).
double eq1_margin(const diff::Array& video, const diff::Array& text);

// Keeps exp(log_tau) inside [tau_min, tau_max].
void clamp_log_tau(diff::Parameter& log_tau, const ContrastiveConfig& cfg);

}  // namespace mac
