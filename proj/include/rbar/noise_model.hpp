#pragma once

// Joint law of the per-mother noise vector (eps_even, eta_even, eps_odd, eta_odd).
//
// theta(i, j, k, l) = E[eps_even^i eta_even^j eps_odd^k eta_odd^l] throughout.

#include "rbar/linalg.hpp"
#include "rbar/rng.hpp"

#include <array>
#include <climits>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace rbar {

/// Slot order of the noise 4-vector.
enum NoiseSlot : int { eps_even = 0, eta_even = 1, eps_odd = 2, eta_odd = 3 };

struct NoiseSecondMoments {
  double sigma_eps2 = 1.0;  // E[eps^2], same for both daughters
  double sigma_eta2 = 1.0;  // E[eta^2]
  double rho_eps = 0.0;     // E[eps_even eps_odd]
  double rho_eta = 0.0;     // E[eta_even eta_odd]
  double rho00 = 0.0;       // E[eps_even eta_even]
  double rho01 = 0.0;       // E[eps_even eta_odd]
  double rho10 = 0.0;       // E[eps_odd eta_even]
  double rho11 = 0.0;       // E[eps_odd eta_odd]

  /// Only the symmetrised cross term is identifiable from data.
  [[nodiscard]] double rho() const { return 0.5 * (rho01 + rho10); }

  [[nodiscard]] Mat4 covariance() const {
    Mat4 c;
    c << sigma_eps2, rho00, rho_eps, rho01,  //
        rho00, sigma_eta2, rho10, rho_eta,   //
        rho_eps, rho10, sigma_eps2, rho11,   //
        rho01, rho_eta, rho11, sigma_eta2;
    return c;
  }

  void validate(bool require_positive_variances = true) const {
    for (double v : {sigma_eps2, sigma_eta2, rho_eps, rho_eta, rho00, rho01, rho10, rho11})
      if (!std::isfinite(v)) throw ValidationError("noise second moments must be finite");
    if (require_positive_variances && !(sigma_eps2 > 0.0))
      throw ValidationError("noise variance sigma_eps2 must be > 0");
    if (require_positive_variances && !(sigma_eta2 > 0.0))
      throw ValidationError("noise variance sigma_eta2 must be > 0");
    if (sigma_eps2 < 0.0 || sigma_eta2 < 0.0)
      throw ValidationError("noise variances must be non-negative");
    const Mat4 c = covariance();
    const double scale = std::max(1.0, c.diagonal().cwiseAbs().maxCoeff());
    const double lmin = min_symmetric_eigenvalue(c);
    if (lmin < -1e-12 * scale)
      throw ValidationError("noise covariance is not positive semi-definite (smallest eigenvalue " +
                            std::to_string(lmin) + ")");
  }
};

/// Multi-index (i, j, k, l) of a joint moment.
using MomentIndex = std::array<int, 4>;

inline int total_order(const MomentIndex& idx) { return idx[0] + idx[1] + idx[2] + idx[3]; }

/// Dense table of theta(i, j, k, l) for all total orders up to max_order.
class JointMomentTable {
 public:
  JointMomentTable() = default;
  explicit JointMomentTable(int max_order)
      : max_order_(max_order),
        values_(static_cast<std::size_t>(dim() * dim() * dim() * dim()),
                std::numeric_limits<double>::quiet_NaN()) {
    if (max_order < 0) throw ValidationError("moment table order must be >= 0");
  }

  [[nodiscard]] int max_order() const noexcept { return max_order_; }

  [[nodiscard]] double operator()(int i, int j, int k, int l) const { return at({i, j, k, l}); }

  [[nodiscard]] double at(const MomentIndex& idx) const {
    check(idx);
    return values_[offset(idx)];
  }

  void set(const MomentIndex& idx, double v) {
    check(idx);
    values_[offset(idx)] = v;
  }

  /// Calls f(index) for every multi-index of total order <= max_order.
  template <typename F>
  void for_each_index(F&& f) const {
    for (int i = 0; i <= max_order_; ++i)
      for (int j = 0; i + j <= max_order_; ++j)
        for (int k = 0; i + j + k <= max_order_; ++k)
          for (int l = 0; i + j + k + l <= max_order_; ++l) f(MomentIndex{i, j, k, l});
  }

  /// Second-moment block read off the order-2 entries.
  [[nodiscard]] NoiseSecondMoments second_moments() const {
    NoiseSecondMoments s;
    s.sigma_eps2 = 0.5 * ((*this)(2, 0, 0, 0) + (*this)(0, 0, 2, 0));
    s.sigma_eta2 = 0.5 * ((*this)(0, 2, 0, 0) + (*this)(0, 0, 0, 2));
    s.rho_eps = (*this)(1, 0, 1, 0);
    s.rho_eta = (*this)(0, 1, 0, 1);
    s.rho00 = (*this)(1, 1, 0, 0);
    s.rho01 = (*this)(1, 0, 0, 1);
    s.rho10 = (*this)(0, 1, 1, 0);
    s.rho11 = (*this)(0, 0, 1, 1);
    return s;
  }

 private:
  [[nodiscard]] int dim() const noexcept { return max_order_ + 1; }
  [[nodiscard]] std::size_t offset(const MomentIndex& idx) const noexcept {
    const auto d = static_cast<std::size_t>(dim());
    return ((static_cast<std::size_t>(idx[0]) * d + static_cast<std::size_t>(idx[1])) * d +
            static_cast<std::size_t>(idx[2])) * d + static_cast<std::size_t>(idx[3]);
  }
  void check(const MomentIndex& idx) const {
    for (int v : idx)
      if (v < 0) throw ValidationError("negative moment index");
    if (total_order(idx) > max_order_)
      throw MomentBudgetError("moment of total order " + std::to_string(total_order(idx)) +
                              " requested from a table of order " + std::to_string(max_order_));
  }

  int max_order_ = 0;
  std::vector<double> values_{1.0};
};

namespace detail {

// Isserlis/Wick recursion: pair the first remaining factor with each other one.
class WickEvaluator {
 public:
  explicit WickEvaluator(const Mat4& cov) : cov_(cov) {}

  double operator()(MomentIndex counts) {
    const int n = total_order(counts);
    if (n == 0) return 1.0;
    if (n % 2 == 1) return 0.0;
    const auto key = pack(counts);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    int a = 0;
    while (counts[static_cast<std::size_t>(a)] == 0) ++a;
    --counts[static_cast<std::size_t>(a)];
    double acc = 0.0;
    for (int b = 0; b < 4; ++b) {
      const int cb = counts[static_cast<std::size_t>(b)];
      if (cb == 0 || cov_(a, b) == 0.0) continue;
      MomentIndex rest = counts;
      --rest[static_cast<std::size_t>(b)];
      acc += cb * cov_(a, b) * (*this)(rest);
    }
    memo_.emplace(key, acc);
    return acc;
  }

 private:
  static std::uint64_t pack(const MomentIndex& c) {
    return (static_cast<std::uint64_t>(c[0]) << 48) | (static_cast<std::uint64_t>(c[1]) << 32) |
           (static_cast<std::uint64_t>(c[2]) << 16) | static_cast<std::uint64_t>(c[3]);
  }

  Mat4 cov_;
  std::unordered_map<std::uint64_t, double> memo_;
};

/// E[(chi2_dof/(dof-2))^(-order/2)] for even order < dof.
inline double student_scale_factor(double dof, int order) {
  double f = 1.0;
  for (int j = 1; 2 * j <= order; ++j) f *= (dof - 2.0) / (dof - 2.0 * j);
  return f;
}

}  // namespace detail

enum class NoiseFamily { gaussian, scaled_student, zero };

inline std::string to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::gaussian: return "gaussian";
    case NoiseFamily::scaled_student: return "student";
    case NoiseFamily::zero: return "zero";
  }
  return "unknown";
}

/// What the noise moment budget allows downstream.
struct MomentBudget {
  int max_order = 0;  // highest even moment order that exists
  int max_kappa = 0;  // largest kappa with 4 kappa <= max_order
  [[nodiscard]] bool supports_theta_consistency() const { return max_kappa >= 2; }
  [[nodiscard]] bool supports_theta_rate_and_clt() const { return max_kappa >= 4; }
  [[nodiscard]] bool supports_noise_parameter_limits() const { return max_kappa >= 8; }
};

/// Moment table order cached at construction.
inline constexpr int cached_moment_order = 8;

/// Samplable noise law with its cached joint-moment table.
class NoiseModel {
 public:
  static NoiseModel gaussian(const NoiseSecondMoments& moments) {
    moments.validate();
    return NoiseModel(NoiseFamily::gaussian, moments, 0.0);
  }

  /// Elliptical multivariate t rescaled to the target covariance.
  static NoiseModel scaled_student(const NoiseSecondMoments& moments, double dof) {
    if (!(dof > 8.0) || !std::isfinite(dof))
      throw ValidationError("scaled Student noise needs dof > 8 so that moments up to order 8 exist");
    moments.validate();
    return NoiseModel(NoiseFamily::scaled_student, moments, dof);
  }

  /// Noise identically zero. Not a valid model instance for inference; used for
  /// deterministic recursions.
  static NoiseModel zero() {
    NoiseSecondMoments m{0, 0, 0, 0, 0, 0, 0, 0};
    return NoiseModel(NoiseFamily::zero, m, 0.0);
  }

  [[nodiscard]] NoiseFamily family() const noexcept { return family_; }
  [[nodiscard]] const NoiseSecondMoments& second_moments() const noexcept { return moments_; }
  [[nodiscard]] const JointMomentTable& table() const noexcept { return table_; }
  [[nodiscard]] double dof() const noexcept { return dof_; }

  [[nodiscard]] MomentBudget budget() const {
    MomentBudget b;
    if (family_ == NoiseFamily::scaled_student) {
      int order = static_cast<int>(std::ceil(dof_)) - 1;
      if (order % 2 == 1) --order;
      b.max_order = order;
    } else {
      b.max_order = INT_MAX / 2;
    }
    b.max_kappa = b.max_order / 4;
    return b;
  }

  /// Any joint moment within the budget; orders beyond the cached table are
  /// computed in closed form.
  [[nodiscard]] double moment(const MomentIndex& idx) const {
    const int order = total_order(idx);
    if (order <= table_.max_order()) return table_.at(idx);
    return closed_form(idx);
  }

  /// One draw of (eps_even, eta_even, eps_odd, eta_odd).
  template <typename Rng>
  Vec4 sample(Rng& rng) const {
    if (family_ == NoiseFamily::zero) return Vec4::Zero();
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec4 z;
    for (int i = 0; i < 4; ++i) z(i) = normal(rng);
    Vec4 x = factor_ * z;
    if (family_ == NoiseFamily::scaled_student) {
      std::chi_squared_distribution<double> chi2(dof_);
      x *= std::sqrt((dof_ - 2.0) / chi2(rng));
    }
    return x;
  }

 private:
  NoiseModel(NoiseFamily family, const NoiseSecondMoments& moments, double dof)
      : family_(family), moments_(moments), dof_(dof), table_(cached_moment_order) {
    const Mat4 cov = moments.covariance();
    Eigen::SelfAdjointEigenSolver<Mat4> es(cov);
    const Vec4 root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    factor_ = es.eigenvectors() * root.asDiagonal();
    table_.for_each_index([&](const MomentIndex& idx) { table_.set(idx, closed_form(idx)); });
  }

  [[nodiscard]] double closed_form(const MomentIndex& idx) const {
    const int order = total_order(idx);
    if (order == 0) return 1.0;
    if (family_ == NoiseFamily::zero) return 0.0;
    if (order % 2 == 1) return 0.0;
    if (order > budget().max_order)
      throw MomentBudgetError("noise moment of order " + std::to_string(order) +
                              " does not exist for the " + to_string(family_) +
                              " family (dof " + std::to_string(dof_) + ")");
    detail::WickEvaluator wick(moments_.covariance());
    const double g = wick(idx);
    if (family_ == NoiseFamily::scaled_student) return detail::student_scale_factor(dof_, order) * g;
    return g;
  }

  NoiseFamily family_;
  NoiseSecondMoments moments_;
  double dof_;
  Mat4 factor_ = Mat4::Zero();
  JointMomentTable table_;
};

/// Plug-in sample moments of a set of noise 4-vectors.
inline JointMomentTable empirical_moment_table(std::span<const Vec4> samples, int max_order) {
  if (samples.empty()) throw ValidationError("empirical_moment_table: empty sample");
  if (samples.size() < 2) throw ValidationError("empirical_moment_table: need at least 2 samples");
  if (max_order < 0 || max_order > cached_moment_order)
    throw ValidationError("empirical_moment_table: max_order must lie in [0, 8]");
  JointMomentTable table(max_order);
  std::vector<MomentIndex> indices;
  table.for_each_index([&](const MomentIndex& idx) { indices.push_back(idx); });
  std::vector<double> sums(indices.size(), 0.0);
  std::array<std::array<double, cached_moment_order + 1>, 4> powers{};
  for (const Vec4& s : samples) {
    for (int v = 0; v < 4; ++v) {
      powers[static_cast<std::size_t>(v)][0] = 1.0;
      for (int p = 1; p <= max_order; ++p)
        powers[static_cast<std::size_t>(v)][static_cast<std::size_t>(p)] =
            powers[static_cast<std::size_t>(v)][static_cast<std::size_t>(p - 1)] * s(v);
    }
    for (std::size_t t = 0; t < indices.size(); ++t) {
      const auto& idx = indices[t];
      sums[t] += powers[0][static_cast<std::size_t>(idx[0])] * powers[1][static_cast<std::size_t>(idx[1])] *
                 powers[2][static_cast<std::size_t>(idx[2])] * powers[3][static_cast<std::size_t>(idx[3])];
    }
  }
  const double n = static_cast<double>(samples.size());
  for (std::size_t t = 0; t < indices.size(); ++t) table.set(indices[t], sums[t] / n);
  return table;
}

}  // namespace rbar
