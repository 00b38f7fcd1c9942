#pragma once

// Induced chain along a uniformly tagged branch: Y_{n+1} = A_{n+1} + B_{n+1} Y_n,
// where (A, B) is (a + eps_2, b + eta_2) with probability m0 and
// (c + eps_3, d + eta_3) with probability m1.

#include "rbar/genealogy.hpp"
#include "rbar/noise_model.hpp"
#include "rbar/simulator.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace rbar {

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Denominators 1 - E[B^q] below this are treated as non-existence.
inline constexpr double stationary_tolerance = 1e-9;

class InducedCoefficientLaw {
 public:
  InducedCoefficientLaw(const BarParams& params, const NoiseModel& noise,
                        const ObservationParams& obs, int max_order = cached_moment_order)
      : params_(params), noise_(noise), obs_(obs), max_order_(max_order) {
    params.validate();
    obs.validate();
    if (!(obs.mean() > 0.0)) throw ValidationError("induced chain needs a reproduction mean > 0");
    if (max_order < 0 || max_order > cached_moment_order)
      throw ValidationError("induced law order must lie in [0, 8]");
    max_order_ = std::min(max_order, noise.budget().max_order);
    const auto dim = static_cast<std::size_t>(max_order_ + 1);
    mixed_.assign(dim * dim, std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i <= max_order_; ++i)
      for (int j = 0; i + j <= max_order_; ++j)
        mixed_[static_cast<std::size_t>(i) * dim + static_cast<std::size_t>(j)] =
            obs.m0() * branch_moment(0, i, j) + obs.m1() * branch_moment(1, i, j);
  }

  [[nodiscard]] int max_order() const noexcept { return max_order_; }
  [[nodiscard]] const BarParams& params() const noexcept { return params_; }
  [[nodiscard]] const NoiseModel& noise() const noexcept { return noise_; }
  [[nodiscard]] const ObservationParams& observation() const noexcept { return obs_; }
  /// Probability that a step follows branch 1.
  [[nodiscard]] double odd_branch_probability() const { return obs_.m1(); }

  /// E[A^i B^j].
  [[nodiscard]] double mixed_moment(int i, int j) const {
    if (i < 0 || j < 0 || i + j > max_order_)
      throw MomentBudgetError("E[A^" + std::to_string(i) + " B^" + std::to_string(j) +
                              "] exceeds the available order " + std::to_string(max_order_));
    return mixed_[static_cast<std::size_t>(i) * static_cast<std::size_t>(max_order_ + 1) +
                  static_cast<std::size_t>(j)];
  }

  /// E[(a + eps)^i (b + eta)^j] on branch 0 or (c + eps)^i (d + eta)^j on branch 1.
  [[nodiscard]] double branch_moment(int branch, int i, int j) const {
    const double alpha = branch == 0 ? params_.a : params_.c;
    const double beta = branch == 0 ? params_.b : params_.d;
    double acc = 0.0;
    for (int r = 0; r <= i; ++r)
      for (int s = 0; s <= j; ++s) {
        MomentIndex idx{0, 0, 0, 0};
        idx[branch == 0 ? eps_even : eps_odd] = r;
        idx[branch == 0 ? eta_even : eta_odd] = s;
        acc += binomial(i, r) * binomial(j, s) * std::pow(alpha, i - r) * std::pow(beta, j - s) *
               noise_.moment(idx);
      }
    return acc;
  }

  /// One (A, B) draw.
  template <typename Rng>
  std::pair<double, double> draw(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const bool odd = u(rng) < obs_.m1();
    const Vec4 z = noise_.sample(rng);
    if (odd) return {params_.c + z(eps_odd), params_.d + z(eta_odd)};
    return {params_.a + z(eps_even), params_.b + z(eta_even)};
  }

 private:
  BarParams params_;
  NoiseModel noise_;
  ObservationParams obs_;
  int max_order_;
  std::vector<double> mixed_;
};

/// E[Y_inf^q] for q = 0..max_order().
class StationaryMoments {
 public:
  explicit StationaryMoments(std::vector<double> m) : m_(std::move(m)) {}
  [[nodiscard]] int max_order() const noexcept { return static_cast<int>(m_.size()) - 1; }
  [[nodiscard]] double operator[](int q) const {
    if (q < 0 || q > max_order())
      throw MomentBudgetError("stationary moment of order " + std::to_string(q) +
                              " requested, only orders up to " + std::to_string(max_order()) +
                              " are available");
    return m_[static_cast<std::size_t>(q)];
  }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return m_; }

 private:
  std::vector<double> m_;
};

/// Triangular recursion E[Y^q] = sum_{s<q} C(q,s) E[A^{q-s} B^s] E[Y^s] / (1 - E[B^q]).
inline StationaryMoments stationary_moments(const InducedCoefficientLaw& law, int q_max) {
  if (q_max < 0) throw ValidationError("q_max must be >= 0");
  if (q_max > law.max_order())
    throw MomentBudgetError("stationary moment of order " + std::to_string(q_max) +
                            " needs noise moments of that order; only " +
                            std::to_string(law.max_order()) + " are available");
  auto check = [&](int q) {
    const double denom = 1.0 - law.mixed_moment(0, q);
    if (!(denom > stationary_tolerance))
      throw MomentBudgetError("stationary moment of order " + std::to_string(q) +
                              " does not exist: E[B^" + std::to_string(q) + "] = " +
                              std::to_string(law.mixed_moment(0, q)) + " is not below 1");
    return denom;
  };
  std::vector<double> m(static_cast<std::size_t>(q_max) + 1, 0.0);
  m[0] = 1.0;
  for (int q = 1; q <= q_max; ++q) {
    // Odd orders are admitted only when the next even order exists.
    if (q % 2 == 1 && q + 1 <= law.max_order()) check(q + 1);
    const double denom = check(q);
    double acc = 0.0;
    for (int s = 0; s < q; ++s)
      acc += binomial(q, s) * law.mixed_moment(q - s, s) * m[static_cast<std::size_t>(s)];
    m[static_cast<std::size_t>(q)] = acc / denom;
  }
  return StationaryMoments(std::move(m));
}

/// Y_0 = y0, then n_steps iterations with fresh (A, B).
inline std::vector<double> sample_chain(const InducedCoefficientLaw& law, double y0, int n_steps,
                                        std::uint64_t seed) {
  if (n_steps < 0) throw ValidationError("n_steps must be >= 0");
  CounterRng rng(seed, Stream::chain, 0);
  std::vector<double> y;
  y.reserve(static_cast<std::size_t>(n_steps) + 1);
  y.push_back(y0);
  for (int i = 0; i < n_steps; ++i) {
    const auto [A, B] = law.draw(rng);
    y.push_back(A + B * y.back());
  }
  return y;
}

/// Which daughter population an ell-average refers to.
enum class Branch { even, odd, pair };

/// ell_i(q) = (p01 + p_i) E[Y^q], ell_01(q) = p01 E[Y^q].
inline double ell(Branch which, int q, const ObservationParams& obs, const StationaryMoments& sm) {
  const double y = sm[q];
  switch (which) {
    case Branch::even: return (obs.p01 + obs.p0) * y;
    case Branch::odd: return (obs.p01 + obs.p1) * y;
    case Branch::pair: return obs.p01 * y;
  }
  return 0.0;
}

}  // namespace rbar
