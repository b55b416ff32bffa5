#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

#include "koopctl/tensor.hpp"

namespace koopctl {

/// Default relative threshold for numerical rank.
inline constexpr double kDefaultRankTol = 1e-8;

/// Count of singular values strictly above tol * sigma_max. Empty or all-zero -> 0.
template <typename Derived>
Eigen::Index numerical_rank(const Eigen::MatrixBase<Derived>& m,
                            typename Derived::RealScalar tol = kDefaultRankTol) {
  using Real = typename Derived::RealScalar;
  if (m.size() == 0) return 0;
  using Plain = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::JacobiSVD<Plain> svd(m.derived().eval());
  const auto& sv = svd.singularValues();
  const Real sigma_max = sv.size() > 0 ? sv(0) : Real(0);
  if (!(sigma_max > Real(0))) return 0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol * sigma_max) ++rank;
  }
  return rank;
}

template <typename Derived>
std::vector<std::complex<typename Derived::RealScalar>> eigenvalues(const Eigen::MatrixBase<Derived>& m) {
  using Real = typename Derived::RealScalar;
  if (m.rows() != m.cols()) {
    throw DimensionError("eigvals: expected square matrix, got [" + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + "]");
  }
  std::vector<std::complex<Real>> out;
  if (m.size() == 0) return out;
  using Plain = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::EigenSolver<Plain> es(m.derived().template cast<Real>().eval(), false);
  if (es.info() != Eigen::Success) throw NumericError("eigvals: QR iteration did not converge");
  const auto& ev = es.eigenvalues();
  out.reserve(static_cast<std::size_t>(ev.size()));
  for (Eigen::Index i = 0; i < ev.size(); ++i) out.push_back(ev(i));
  return out;
}

template <typename Derived>
typename Derived::RealScalar spectral_radius(const Eigen::MatrixBase<Derived>& m) {
  typename Derived::RealScalar r(0);
  for (const auto& z : eigenvalues(m)) r = std::max(r, std::abs(z));
  return r;
}

/// [B, AB, A^2 B, ..., A^{d-1} B]
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, Eigen::Dynamic> controllability_matrix(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Plain = Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index d = a.rows();
  const Eigen::Index m = b.cols();
  Plain out(d, d * m);
  Plain block = b;
  for (Eigen::Index k = 0; k < d; ++k) {
    out.middleCols(k * m, m) = block;
    block = a * block;
  }
  return out;
}

inline Eigen::Index svd_rank(const Tensor& m, double tol = kDefaultRankTol) {
  return numerical_rank(m.value(), tol);
}

inline std::vector<std::complex<double>> eigvals(const Tensor& m) { return eigenvalues(m.value()); }

}  // namespace koopctl
