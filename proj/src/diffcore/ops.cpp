#include "mac/diffcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "mac/errors.hpp"

namespace mac::diff {
namespace {


void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(a.shape()));
  }
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

std::size_t last_dim(const Array& a) { return a.rank() == 0 ? 1 : a.shape().back(); }

Array like(const Array& a) { return Array(a.shape(), Precision::f64); }

template <typename T>
void gemm_t(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a, bool trans_b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Index M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
                     N = static_cast<Eigen::Index>(n);
  Eigen::Map<Mat> C(c, M, N);
  if (!trans_a && !trans_b) {
    C.noalias() += Eigen::Map<const Mat>(a, M, K) * Eigen::Map<const Mat>(b, K, N);
  } else if (!trans_a && trans_b) {
    C.noalias() += Eigen::Map<const Mat>(a, M, K) * Eigen::Map<const Mat>(b, N, K).transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += Eigen::Map<const Mat>(a, K, M).transpose() * Eigen::Map<const Mat>(b, K, N);
  } else {
    C.noalias() += Eigen::Map<const Mat>(a, K, M).transpose() * Eigen::Map<const Mat>(b, N, K).transpose();
  }
}

// c (+)= op(a) * op(b) on raw row-major blocks. f32 tapes multiply in single
// precision; their operands are already representable.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate, Precision precision) {
  if (precision == Precision::f64) {
    if (!accumulate) std::fill_n(c, m * n, 0.0);
    gemm_t(a, b, c, m, k, n, trans_a, trans_b);
    return;
  }
  thread_local std::vector<float> fa, fb, fc;
  fa.assign(a, a + m * k);
  fb.assign(b, b + k * n);
  fc.assign(m * n, 0.0f);
  gemm_t(fa.data(), fb.data(), fc.data(), m, k, n, trans_a, trans_b);
  if (accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] += fc[i];
  } else {
    std::copy(fc.begin(), fc.end(), c);
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Precision prec = a.tape().precision();
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Array out({m, n}, Precision::f64);
  gemm(a.value().data(), b.value().data(), out.data(), m, k, n, false, false, false, prec);
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b, m, k, n, prec](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a)) gemm(g.data(), b.value().data(), ga->data(), m, n, k, false, true, true, prec);
    if (Array* gb = t.grad_sink(b)) gemm(a.value().data(), g.data(), gb->data(), k, m, n, true, false, true, prec);
  });
}

Var bmm(Var a, Var b) {
  const Precision prec = a.tape().precision();
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  if (b.shape()[0] != B || b.shape()[1] != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Array out({B, m, n}, Precision::f64);
  for (std::size_t i = 0; i < B; ++i) {
    gemm(a.value().data() + i * m * k, b.value().data() + i * k * n, out.data() + i * m * n, m, k, n, false,
         false, false, prec);
  }
  return a.tape().record("bmm", std::move(out), {a, b}, [a, b, B, m, k, n, prec](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a)) {
      for (std::size_t i = 0; i < B; ++i)
        gemm(g.data() + i * m * n, b.value().data() + i * k * n, ga->data() + i * m * k, m, n, k, false, true, true, prec);
    }
    if (Array* gb = t.grad_sink(b)) {
      for (std::size_t i = 0; i < B; ++i)
        gemm(a.value().data() + i * m * k, g.data() + i * m * n, gb->data() + i * k * n, k, m, n, true, false, true, prec);
    }
  });
}

Var bmm_nt(Var a, Var b) {
  const Precision prec = a.tape().precision();
  require_rank("bmm_nt", a, 3);
  require_rank("bmm_nt", b, 3);
  const std::size_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[1];
  if (b.shape()[0] != B || b.shape()[2] != k) {
    throw DimensionError("bmm_nt: incompatible shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  Array out({B, m, n}, Precision::f64);
  for (std::size_t i = 0; i < B; ++i) {
    gemm(a.value().data() + i * m * k, b.value().data() + i * n * k, out.data() + i * m * n, m, k, n, false,
         true, false, prec);
  }
  return a.tape().record("bmm_nt", std::move(out), {a, b}, [a, b, B, m, k, n, prec](Tape& t, const Array&, const Array& g) {
    // c = a b^T: da = g b, db = g^T a
    if (Array* ga = t.grad_sink(a)) {
      for (std::size_t i = 0; i < B; ++i)
        gemm(g.data() + i * m * n, b.value().data() + i * n * k, ga->data() + i * m * k, m, n, k, false, false, true, prec);
    }
    if (Array* gb = t.grad_sink(b)) {
      for (std::size_t i = 0; i < B; ++i)
        gemm(g.data() + i * m * n, a.value().data() + i * m * k, gb->data() + i * n * k, n, m, k, true, false, true, prec);
    }
  });
}

Var transpose(Var a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Array out({n, m}, Precision::f64);
  const Array& x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return a.tape().record("transpose", std::move(out), {a}, [a, m, n](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  const Array &x = a.value(), &y = b.value();
  Array out = like(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Array&, const Array& g) {
    for (Var v : {a, b}) {
      if (Array* gv = t.grad_sink(v))
        for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
    }
  });
}

Var add_rowvec(Var a, Var v) {
  require_rank("add_rowvec", v, 1);
  const std::size_t n = v.shape()[0];
  if (last_dim(a.value()) != n || a.value().rank() == 0) {
    throw DimensionError("add_rowvec: " + shape_string(a.shape()) + " + " + shape_string(v.shape()));
  }
  Array out = like(a.value());
  const std::size_t rows = a.value().size() / n;
  const Array &x = a.value(), &y = v.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + y[j];
  return a.tape().record("add_rowvec", std::move(out), {a, v}, [a, v, rows, n](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Array* gv = t.grad_sink(v))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) (*gv)[j] += g[r * n + j];
  });
}

Var scale(Var a, double factor) {
  const Array& x = a.value();
  Array out = like(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return a.tape().record("scale", std::move(out), {a}, [a, factor](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
  });
}

Var mul_scalar(Var a, Var s) {
  if (s.value().size() != 1) throw DimensionError("mul_scalar: scalar operand has shape " + shape_string(s.shape()));
  const double sv = s.value()[0];
  const Array& x = a.value();
  Array out = like(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * sv;
  return a.tape().record("mul_scalar", std::move(out), {a, s}, [a, s](Tape& t, const Array&, const Array& g) {
    const double sv = s.value()[0];
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * sv;
    if (Array* gs = t.grad_sink(s)) {
      const Array& x = a.value();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
      (*gs)[0] += acc;
    }
  });
}

Var exp(Var a) {
  const Array& x = a.value();
  Array out = like(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return a.tape().record("exp", std::move(out), {a}, [a](Tape& t, const Array& y, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  Array out = like(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(a.value()[i] > 0.0)) {
      throw NumericError("log: non-positive input " + std::to_string(a.value()[i]) + " at index " +
                         std::to_string(i));
    }
    out[i] = std::log(a.value()[i]);
  }
  return a.tape().record("log", std::move(out), {a}, [a](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / a.value()[i];
  });
}

namespace {

void softmax_rows(const Array& x, Array& out) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
}

}  // namespace

Var softmax_lastdim(Var a) {
  const std::size_t n = last_dim(a.value());
  if (n < 1) throw ContractError("softmax_lastdim: empty last axis");
  Array out = like(a.value());
  softmax_rows(a.value(), out);
  return a.tape().record("softmax_lastdim", std::move(out), {a}, [a, n](Tape& t, const Array& p, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    const std::size_t rows = p.size() / n;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * p[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += p[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var log_softmax_lastdim(Var a) {
  const std::size_t n = last_dim(a.value());
  if (n < 1) throw ContractError("log_softmax_lastdim: empty last axis");
  const Array& x = a.value();
  Array out = like(x);
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] - lse;
  }
  return a.tape().record("log_softmax_lastdim", std::move(out), {a},
                         [a, n, rows](Tape& t, const Array& ls, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += g[r * n + j] - std::exp(ls[r * n + j]) * gsum;
    }
  });
}

Var layernorm(Var a, Var gain, Var bias, double eps) {
  const std::size_t n = last_dim(a.value());
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layernorm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                         " do not match last extent of " + shape_string(a.shape()));
  }
  const Array& x = a.value();
  const std::size_t rows = x.size() / n;
  Array out = like(x);
  // Normalized values and inverse deviations are kept for the backward pass.
  const Array &gv = gain.value(), &bv = bias.value();
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return a.tape().record(
      "layernorm", std::move(out), {a, gain, bias}, [a, gain, bias, n, rows, xhat, inv_std](Tape& t, const Array&, const Array& g) {
        if (Array* gg = t.grad_sink(gain))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += g[r * n + j] * (*xhat)[r * n + j];
        if (Array* gb = t.grad_sink(bias))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[r * n + j];
        Array* ga = t.grad_sink(a);
        if (ga == nullptr) return;
        const double inv_n = 1.0 / static_cast<double>(n);
        const Array& gv = gain.value();
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[r * n + j] * gv[j];
            mean_d += d;
            mean_dh += d * (*xhat)[r * n + j];
          }
          mean_d *= inv_n;
          mean_dh *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[r * n + j] * gv[j];
            (*ga)[r * n + j] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * n + j] * mean_dh);
          }
        }
      });
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Array& in = a.value();
  Array out = like(in);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = in[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  return a.tape().record("gelu", std::move(out), {a}, [a](Tape& t, const Array&, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    const Array& in = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in[i];
      const double th = std::tanh(kC * (x + kA * x * x * x));
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * x * x);
      (*ga)[i] += g[i] * d;
    }
  });
}

Var l2_normalize_lastdim(Var a) {
  const std::size_t n = last_dim(a.value());
  const Array& x = a.value();
  const std::size_t rows = x.size() / n;
  Array out = like(x);
  auto denom = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += x[r * n + j] * x[r * n + j];
    (*denom)[r] = std::max(std::sqrt(ss), kNormFloor);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / (*denom)[r];
  }
  return a.tape().record("l2_normalize_lastdim", std::move(out), {a}, [a, n, rows, denom](Tape& t, const Array&, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    const Array& x = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = (*denom)[r];
      if (d <= kNormFloor) {
        for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += g[r * n + j] / d;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * x[r * n + j];
      dot /= d * d;
      for (std::size_t j = 0; j < n; ++j) (*ga)[r * n + j] += (g[r * n + j] - x[r * n + j] * dot) / d;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t total_rows = 0;
  for (Var p : parts) {
    if (p.value().rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat_rows: " + shape_string(p.shape()) + " incompatible with " +
                           shape_string(parts[0].shape()));
    }
    total_rows += p.shape()[0];
  }
  Shape shape = parts[0].shape();
  shape[0] = total_rows;
  Array out(shape, Precision::f64);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    offsets.push_back(off);
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().size();
  }
  return parts[0].tape().record("concat_rows", std::move(out), parts, [parts, offsets](Tape& t, const Array&, const Array& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (Array* gp = t.grad_sink(parts[i]))
        for (std::size_t j = 0; j < gp->size(); ++j) (*gp)[j] += g[offsets[i] + j];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  if (a.value().rank() == 0 || begin > end || end > a.shape()[0]) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                         shape_string(a.shape()));
  }
  const std::size_t w = a.value().row_width();
  Shape shape = a.shape();
  shape[0] = end - begin;
  Array out(shape, Precision::f64);
  std::copy(a.value().data() + begin * w, a.value().data() + end * w, out.data());
  return a.tape().record("slice_rows", std::move(out), {a}, [a, begin, end, w](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < (end - begin) * w; ++i) (*ga)[begin * w + i] += g[i];
  });
}

Var gather_rows(Var a, std::span<const std::int64_t> index) {
  if (a.value().rank() == 0) throw DimensionError("gather_rows: scalar input");
  const std::size_t rows = a.shape()[0];
  const std::size_t w = a.value().row_width();
  std::vector<std::int64_t> idx(index.begin(), index.end());
  for (std::int64_t i : idx) {
    if (i < -1 || i >= static_cast<std::int64_t>(rows)) {
      throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range for " + shape_string(a.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] = idx.size();
  Array out(shape, Precision::f64);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    std::copy_n(a.value().data() + static_cast<std::size_t>(idx[r]) * w, w, out.data() + r * w);
  }
  return a.tape().record("gather_rows", std::move(out), {a}, [a, idx = std::move(idx), w](Tape& t, const Array&, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      double* dst = ga->data() + static_cast<std::size_t>(idx[r]) * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += g[r * w + j];
    }
  });
}

Var embedding_lookup(Var table, std::span<const std::int64_t> ids) {
  require_rank("embedding_lookup", table, 2);
  for (std::int64_t id : ids) {
    if (id < 0 || id >= static_cast<std::int64_t>(table.shape()[0])) {
      throw DimensionError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                           std::to_string(table.shape()[0]) + " rows");
    }
  }
  return gather_rows(table, ids);
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape().record("sum", Array::scalar(total, Precision::f64), {a}, [a](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
  });
}

Var mean(Var a) {
  if (a.value().empty()) throw ContractError("mean of an empty array");
  const double n = static_cast<double>(a.value().size());
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape().record("mean", Array::scalar(total / n, Precision::f64), {a}, [a, n](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0] / n;
  });
}

Var diagonal(Var a) {
  require_rank("diagonal", a, 2);
  const std::size_t n = a.shape()[0];
  if (a.shape()[1] != n) throw DimensionError("diagonal: non-square " + shape_string(a.shape()));
  Array out({n}, Precision::f64);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  return a.tape().record("diagonal", std::move(out), {a}, [a, n](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < n; ++i) (*ga)[i * n + i] += g[i];
  });
}

Var reshape(Var a, Shape shape) {
  Array out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [a](Tape& t, const Array&, const Array& g) {
    if (Array* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var split_heads(Var a, std::size_t groups, std::size_t seq, std::size_t heads) {
  require_rank("split_heads", a, 2);
  const std::size_t width = a.shape()[1];
  if (a.shape()[0] != groups * seq || heads == 0 || width % heads != 0) {
    throw DimensionError("split_heads: " + shape_string(a.shape()) + " into groups=" + std::to_string(groups) +
                         " seq=" + std::to_string(seq) + " heads=" + std::to_string(heads));
  }
  const std::size_t d = width / heads;
  Array out({groups * heads, seq, d}, Precision::f64);
  const Array& x = a.value();
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(x.data() + (gi * seq + s) * width + h * d, d, out.data() + ((gi * heads + h) * seq + s) * d);
  return a.tape().record("split_heads", std::move(out), {a}, [a, groups, seq, heads, d, width](Tape& t, const Array&, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h) {
          const double* src = g.data() + ((gi * heads + h) * seq + s) * d;
          double* dst = ga->data() + (gi * seq + s) * width + h * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
  });
}

Var merge_heads(Var a, std::size_t groups, std::size_t heads) {
  require_rank("merge_heads", a, 3);
  if (a.shape()[0] != groups * heads) {
    throw DimensionError("merge_heads: " + shape_string(a.shape()) + " with groups=" + std::to_string(groups) +
                         " heads=" + std::to_string(heads));
  }
  const std::size_t seq = a.shape()[1], d = a.shape()[2], width = heads * d;
  Array out({groups * seq, width}, Precision::f64);
  const Array& x = a.value();
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < seq; ++s)
        std::copy_n(x.data() + ((gi * heads + h) * seq + s) * d, d, out.data() + (gi * seq + s) * width + h * d);
  return a.tape().record("merge_heads", std::move(out), {a}, [a, groups, seq, heads, d, width](Tape& t, const Array&, const Array& g) {
    Array* ga = t.grad_sink(a);
    if (ga == nullptr) return;
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t s = 0; s < seq; ++s) {
          const double* src = g.data() + (gi * seq + s) * width + h * d;
          double* dst = ga->data() + ((gi * heads + h) * seq + s) * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
  });
}

}  // namespace mac::diff
