#pragma once

#include "koopctl/tensor.hpp"

namespace koopctl {

// Differentiable primitives. Every op checks shapes and throws DimensionError
// naming both operands on mismatch. Results only join the tape when some
// input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a[n x k] + row[1 x k] broadcast over rows.
Tensor add_rowwise(const Tensor& a, const Tensor& row);
/// a[n x k] .* row[1 x k] broadcast over rows.
Tensor mul_rowwise(const Tensor& a, const Tensor& row);
/// s[1 x 1] * a.
Tensor scale_by(const Tensor& a, const Tensor& s);

/// Elementwise tanh on plain values (vectorized, within 1e-15 relative of std::tanh).
Matrix tanh_values(const Matrix& x);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// log(1 + e^a), evaluated without overflow.
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
/// Elementwise clamp; gradient passes only where the input is strictly inside.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Elementwise min; ties route the gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [n x k] -> [n x 1]
Tensor sum_rows(const Tensor& a);
/// Row-wise log-sum-exp with max subtraction, [n x k] -> [n x 1].
Tensor logsumexp_rows(const Tensor& a);
/// Mean over rows of logsumexp(row i) - a(i, i) for square logits, a scalar.
/// Rows whose logits are all equal contribute exactly log(n).
Tensor mean_diagonal_cross_entropy(const Tensor& logits);

/// Main diagonal of a square matrix as a column.
Tensor diagonal(const Tensor& a);
/// Column vector -> diagonal matrix.
Tensor diag(const Tensor& v);
/// [a b] side by side.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// 0.5 (a + a^T)
Tensor symmetrize(const Tensor& a);

/// X with a X = b, via partial-pivot LU. Throws NumericError when the
/// reciprocal condition estimate of `a` is below 1e-12. Gradients use the
/// adjoint rule: db = a^-T dX, da = -db X^T.
Tensor solve(const Tensor& a, const Tensor& b);

inline Tensor operator*(const Tensor& a, const Tensor& b) { return matmul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

}  // namespace koopctl
