#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace rbar {

using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

/// Thrown when an input violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a quantity needs a moment order the model does not supply.
class MomentBudgetError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Matrices below this reciprocal condition number are treated as singular.
inline constexpr double singular_rcond = 1e-12;

/// Ratio of extreme singular values; 0 for the zero matrix.
template <typename Derived>
double reciprocal_condition(const Eigen::MatrixBase<Derived>& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.derived().template cast<double>());
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0 || !std::isfinite(s(0))) return 0.0;
  return s(s.size() - 1) / s(0);
}

/// Solves m x = rhs, or returns nullopt when m is numerically singular.
template <typename M, typename V>
std::optional<typename V::PlainObject> guarded_solve(const Eigen::MatrixBase<M>& m,
                                                     const Eigen::MatrixBase<V>& rhs) {
  if (reciprocal_condition(m) < singular_rcond) return std::nullopt;
  typename V::PlainObject x = m.derived().fullPivLu().solve(rhs.derived());
  if (!x.allFinite()) return std::nullopt;
  return x;
}

template <typename M>
std::optional<typename M::PlainObject> guarded_inverse(const Eigen::MatrixBase<M>& m) {
  if (reciprocal_condition(m) < singular_rcond) return std::nullopt;
  typename M::PlainObject inv = m.derived().fullPivLu().inverse();
  if (!inv.allFinite()) return std::nullopt;
  return inv;
}

template <typename M>
double min_symmetric_eigenvalue(const Eigen::MatrixBase<M>& m) {
  Eigen::SelfAdjointEigenSolver<typename M::PlainObject> es(m.derived());
  return es.eigenvalues().minCoeff();
}

template <typename M>
double asymmetry(const Eigen::MatrixBase<M>& m) {
  return (m.derived() - m.derived().transpose()).cwiseAbs().maxCoeff();
}

}  // namespace rbar
