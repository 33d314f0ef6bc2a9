#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mac/diffcore/tape.hpp"

namespace mac::diff {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormFloor = 1e-12;

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
// Batched: [B,m,k] x [B,k,n] -> [B,m,n]
Var bmm(Var a, Var b);
// Batched with transposed right operand: [B,m,k] x [B,n,k]^T -> [B,m,n]
Var bmm_nt(Var a, Var b);
// [m,n] -> [n,m]
Var transpose(Var a);

// Elementwise sum of equal shapes.
Var add(Var a, Var b);
// a[..., n] + v[n] broadcast over rows.
Var add_rowvec(Var a, Var v);
Var scale(Var a, double factor);
// a * s for a size-1 s.
Var mul_scalar(Var a, Var s);
Var exp(Var a);
// Requires strictly positive input.
Var log(Var a);

// Normalized exponential over the last axis, max-subtracted.
Var softmax_lastdim(Var a);
// x - logsumexp(x) over the last axis.
Var log_softmax_lastdim(Var a);
// Per-row standardization over the last axis, then gain * x + bias.
Var layernorm(Var a, Var gain, Var bias, double eps = kLayerNormEps);
// tanh approximation.
Var gelu(Var a);
// x / max(||x||, 1e-12) over the last axis.
Var l2_normalize_lastdim(Var a);

// Concatenate along axis 0; trailing extents must agree.
Var concat_rows(const std::vector<Var>& parts);
// Rows [begin, end) along axis 0.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// out[i] = a[index[i]] along axis 0; index -1 yields a zero row.
Var gather_rows(Var a, std::span<const std::int64_t> index);
// Rows of a [V,D] table; every id must be in [0, V).
Var embedding_lookup(Var table, std::span<const std::int64_t> ids);

Var sum(Var a);
Var mean(Var a);
// Diagonal of a square [n,n] array -> [n].
Var diagonal(Var a);
Var reshape(Var a, Shape shape);

// [G*S, H*d] -> [G*H, S, d]: rows grouped in blocks of S, columns split into H heads.
Var split_heads(Var a, std::size_t groups, std::size_t seq, std::size_t heads);
// Inverse of split_heads: [G*H, S, d] -> [G*S, H*d].
Var merge_heads(Var a, std::size_t groups, std::size_t heads);

}  // namespace mac::diff
