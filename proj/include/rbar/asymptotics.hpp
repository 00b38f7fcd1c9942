#pragma once

// Limit matrices, bias constants and plug-in inference.

#include "rbar/estimation.hpp"
#include "rbar/induced_chain.hpp"
#include "rbar/linalg.hpp"
#include "rbar/noise_model.hpp"

#include <boost/math/distributions/normal.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rbar {

/// Polynomial of degree <= 8 in t = (x - center) / scale.
struct Poly {
  std::array<double, 9> c{};
  double center = 0.0;
  double scale = 1.0;

  [[nodiscard]] double operator()(double x) const {
    const double t = (x - center) / scale;
    double acc = 0.0;
    for (int r = 8; r >= 0; --r) acc = acc * t + c[static_cast<std::size_t>(r)];
    return acc;
  }
  [[nodiscard]] bool monomial() const { return center == 0.0 && scale == 1.0; }

  friend Poly operator-(Poly p, const Poly& q) {
    for (std::size_t r = 0; r < p.c.size(); ++r) p.c[r] -= q.c[r];
    return p;
  }
  friend Poly operator*(const Poly& p, const Poly& q) {
    Poly out;
    for (std::size_t i = 0; i < p.c.size(); ++i)
      for (std::size_t j = 0; i + j < out.c.size(); ++j) out.c[i + j] += p.c[i] * q.c[j];
    return out;
  }
};

inline Poly quadratic(double c0, double c1, double c2) {
  Poly p;
  p.c[0] = c0;
  p.c[1] = c1;
  p.c[2] = c2;
  return p;
}

/// Conditional second moments of the daughter innovations given X_k = x.
struct InnovationVariances {
  Poly var_even;   // sigma_eps2 + 2 rho00 x + sigma_eta2 x^2
  Poly var_odd;    // sigma_eps2 + 2 rho11 x + sigma_eta2 x^2
  Poly pair_mean;  // rho_eps + 2 rho x + rho_eta x^2

  static InnovationVariances from(const NoiseSecondMoments& s) {
    return {quadratic(s.sigma_eps2, 2 * s.rho00, s.sigma_eta2),
            quadratic(s.sigma_eps2, 2 * s.rho11, s.sigma_eta2),
            quadratic(s.rho_eps, 2 * s.rho(), s.rho_eta)};
  }
  static InnovationVariances from(const Vec4& sigma, const Vec3& rho) {
    NoiseSecondMoments s;
    s.sigma_eps2 = sigma(0);
    s.rho00 = sigma(1);
    s.rho11 = sigma(2);
    s.sigma_eta2 = sigma(3);
    s.rho_eps = rho(0);
    s.rho01 = s.rho10 = rho(1);
    s.rho_eta = rho(2);
    return from(s);
  }
};

/// Conditional variances of squared and crossed innovations given X_k = x.
struct FourthMomentTerms {
  Poly A_even;  // Var(e_2k^2 | x)
  Poly A_odd;   // Var(e_2k+1^2 | x)
  Poly A_pair;  // Cov(e_2k^2, e_2k+1^2 | x)
  Poly C;       // Var(e_2k e_2k+1 | x)
};

struct AsymptoticOptions {
  /// Use theta(2,0,2,0) as the x^4 coefficient of C, as printed.
  bool literal_paper_typos = false;
};

inline FourthMomentTerms fourth_moment_terms(const NoiseModel& noise, const AsymptoticOptions& opt = {}) {
  const auto& t = noise.table();
  Poly fourth_even, fourth_odd, cross;
  for (int r = 0; r <= 4; ++r) {
    fourth_even.c[static_cast<std::size_t>(r)] = binomial(4, r) * t(4 - r, r, 0, 0);
    fourth_odd.c[static_cast<std::size_t>(r)] = binomial(4, r) * t(0, 0, 4 - r, r);
  }
  for (int r = 0; r <= 2; ++r)
    for (int s = 0; s <= 2; ++s)
      cross.c[static_cast<std::size_t>(r + s)] += binomial(2, r) * binomial(2, s) * t(2 - r, r, 2 - s, s);
  Poly cross_c = cross;
  if (opt.literal_paper_typos) cross_c.c[4] = t(2, 0, 2, 0);
  const auto v = InnovationVariances::from(noise.second_moments());
  return {fourth_even - v.var_even * v.var_even, fourth_odd - v.var_odd * v.var_odd,
          cross - v.var_even * v.var_odd, cross_c - v.pair_mean * v.pair_mean};
}

/// Gamma^sigma from generalised moments a_even(q), a_odd(q), a_pair(q).
inline Mat4 assemble_gamma_sigma(const std::function<double(int)>& a0, const std::function<double(int)>& a1,
                                 const std::function<double(int)>& a01) {
  auto B0 = [&](int q) { return a0(q) + a01(q); };
  auto B1 = [&](int q) { return a1(q) + a01(q); };
  Mat4 g;
  g << B0(0) + B1(0), 2 * B0(1), 2 * B1(1), B0(2) + B1(2),  //
      2 * B0(1), 4 * a0(2), 4 * a01(2), 2 * B0(3),           //
      2 * B1(1), 4 * a01(2), 4 * a1(2), 2 * B1(3),           //
      B0(2) + B1(2), 2 * B0(3), 2 * B1(3), B0(4) + B1(4);
  return g;
}

inline Mat3 assemble_gamma_rho(const std::function<double(int)>& cq) {
  Mat3 g;
  g << cq(0), 2 * cq(1), cq(2), 2 * cq(1), 4 * cq(2), 2 * cq(3), cq(2), 2 * cq(3), cq(4);
  return g;
}

inline Mat2 hankel2(const std::function<double(int)>& l, int shift) {
  Mat2 m;
  m << l(shift), l(shift + 1), l(shift + 1), l(shift + 2);
  return m;
}

inline Mat4 anti_diagonal(const Mat2& blk) {
  Mat4 m = Mat4::Zero();
  m.topRightCorner<2, 2>() = blk;
  m.bottomLeftCorner<2, 2>() = blk;
  return m;
}

inline Mat4 block_diagonal(const Mat2& a, const Mat2& b) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<2, 2>() = a;
  m.bottomRightCorner<2, 2>() = b;
  return m;
}

inline Mat4 block_matrix(const Mat2& a, const Mat2& off, const Mat2& b) {
  Mat4 m;
  m.topLeftCorner<2, 2>() = a;
  m.topRightCorner<2, 2>() = off;
  m.bottomLeftCorner<2, 2>() = off;
  m.bottomRightCorner<2, 2>() = b;
  return m;
}

struct LimitMatrices {
  Mat2 S0, S1, T0, T1, W0, W1, S01, T01, W01;
  Mat4 S, U, Gamma, Sigma, J01, K01, L01;
  Mat2 Gamma0, Gamma1, Gamma01, Sigma0, Sigma1;
  Mat3 V;
  std::optional<Mat4> GammaSigma;  // needs stationary moments up to order 8
  std::optional<Mat3> GammaRho;
  double m = 0.0;
  /// Limit covariance S^-1 Gamma S^-1 of sqrt|T*| (theta_hat - theta).
  [[nodiscard]] Mat4 theta_covariance() const {
    const Mat4 Si = S.inverse();
    return Si * Gamma * Si;
  }
  [[nodiscard]] double qsl_limit() const { return (Gamma * Sigma.inverse()).trace(); }
};

inline LimitMatrices limit_matrices(const NoiseModel& noise, const ObservationParams& obs,
                                    const StationaryMoments& sm, const AsymptoticOptions& opt = {}) {
  if (sm.max_order() < 4)
    throw MomentBudgetError("limit matrices need stationary moments up to order 4, got " +
                            std::to_string(sm.max_order()));
  auto l0 = [&](int q) { return ell(Branch::even, q, obs, sm); };
  auto l1 = [&](int q) { return ell(Branch::odd, q, obs, sm); };
  auto l01 = [&](int q) { return ell(Branch::pair, q, obs, sm); };
  const auto& s = noise.second_moments();

  LimitMatrices lm;
  lm.m = obs.mean();
  lm.S0 = hankel2(l0, 0);
  lm.S1 = hankel2(l1, 0);
  lm.T0 = hankel2(l0, 1);
  lm.T1 = hankel2(l1, 1);
  lm.W0 = hankel2(l0, 2);
  lm.W1 = hankel2(l1, 2);
  lm.S01 = hankel2(l01, 0);
  lm.T01 = hankel2(l01, 1);
  lm.W01 = hankel2(l01, 2);
  lm.S = block_diagonal(lm.S0, lm.S1);
  lm.J01 = anti_diagonal(lm.S01);
  lm.K01 = anti_diagonal(lm.T01);
  lm.L01 = anti_diagonal(lm.W01);

  lm.U << l0(0) + l1(0), 2 * l0(1), 2 * l1(1), l0(2) + l1(2),  //
      2 * l0(1), 4 * l0(2), 0.0, 2 * l0(3),                      //
      2 * l1(1), 0.0, 4 * l1(2), 2 * l1(3),                      //
      l0(2) + l1(2), 2 * l0(3), 2 * l1(3), l0(4) + l1(4);
  lm.V << l01(0), 2 * l01(1), l01(2), 2 * l01(1), 4 * l01(2), 2 * l01(3), l01(2), 2 * l01(3), l01(4);

  auto gamma_block = [](const std::function<double(int)>& l, double c0, double c1, double c2) {
    auto g = [&](int q) { return c0 * l(q) + c1 * l(q + 1) + c2 * l(q + 2); };
    Mat2 m;
    m << g(0), g(1), g(1), g(2);
    return m;
  };
  lm.Gamma0 = gamma_block(l0, s.sigma_eps2, 2 * s.rho00, s.sigma_eta2);
  lm.Gamma1 = gamma_block(l1, s.sigma_eps2, 2 * s.rho11, s.sigma_eta2);
  lm.Gamma01 = gamma_block(l01, s.rho_eps, 2 * s.rho(), s.rho_eta);
  lm.Gamma = block_matrix(lm.Gamma0, lm.Gamma01, lm.Gamma1);

  auto sigma_block = [](const std::function<double(int)>& l) {
    Mat2 m;
    m << l(0) + l(2), l(1) + l(3), l(1) + l(3), l(2) + l(4);
    return m;
  };
  lm.Sigma0 = sigma_block(l0);
  lm.Sigma1 = sigma_block(l1);
  lm.Sigma = block_diagonal(lm.Sigma0, lm.Sigma1);

  if (sm.max_order() >= 8) {
    const auto f = fourth_moment_terms(noise, opt);
    auto against = [](const Poly& p, const std::function<double(int)>& l) {
      return [p, l](int q) {
        double acc = 0.0;
        for (int r = 0; r <= 4; ++r) acc += p.c[static_cast<std::size_t>(r)] * l(r + q);
        return acc;
      };
    };
    lm.GammaSigma = assemble_gamma_sigma(against(f.A_even, l0), against(f.A_odd, l1), against(f.A_pair, l01));
    lm.GammaRho = assemble_gamma_rho(against(f.C, l01));
  }
  return lm;
}

/// Which trace formula to use for the bias constants.
enum class BiasForm {
  sandwich,  // (m-1) tr(S^-1 T S^-1 Gamma)
  printed    // (m-1) tr(Gamma S^-2 T)
};

struct BiasConstants {
  std::array<double, 3> q0{}, q1{}, q01{};
  Vec4 sigma_bias = Vec4::Zero();  // U^-1 (q0(0)+q1(0), 2 q0(1), 2 q1(1), q0(2)+q1(2))
  Vec3 rho_bias = Vec3::Zero();    // V^-1 (q01(0), 2 q01(1), q01(2))
  BiasForm form = BiasForm::sandwich;
};

inline BiasConstants bias_constants(const LimitMatrices& lm, BiasForm form = BiasForm::sandwich) {
  BiasConstants b;
  b.form = form;
  const double f = lm.m - 1.0;
  auto branch = [&](const Mat2& S, const Mat2& G, const Mat2& M) {
    auto Si = guarded_inverse(S);
    if (!Si) throw ValidationError("bias constants: singular S block");
    if (form == BiasForm::sandwich) return f * ((*Si) * M * (*Si) * G).trace();
    return f * (G * (*Si) * (*Si) * M).trace();
  };
  b.q0 = {branch(lm.S0, lm.Gamma0, lm.S0), branch(lm.S0, lm.Gamma0, lm.T0), branch(lm.S0, lm.Gamma0, lm.W0)};
  b.q1 = {branch(lm.S1, lm.Gamma1, lm.S1), branch(lm.S1, lm.Gamma1, lm.T1), branch(lm.S1, lm.Gamma1, lm.W1)};
  auto Si = guarded_inverse(lm.S);
  if (!Si) throw ValidationError("bias constants: singular S");
  auto pair = [&](const Mat4& M) {
    if (form == BiasForm::sandwich) return 0.5 * f * ((*Si) * M * (*Si) * lm.Gamma).trace();
    return 0.5 * f * (lm.Gamma * (*Si) * (*Si) * M).trace();
  };
  b.q01 = {pair(lm.J01), pair(lm.K01), pair(lm.L01)};
  const Vec4 rs(b.q0[0] + b.q1[0], 2 * b.q0[1], 2 * b.q1[1], b.q0[2] + b.q1[2]);
  const Vec3 rr(b.q01[0], 2 * b.q01[1], b.q01[2]);
  auto Ui = guarded_inverse(lm.U);
  auto Vi = guarded_inverse(lm.V);
  if (!Ui || !Vi) throw ValidationError("bias constants: singular U or V");
  b.sigma_bias = (*Ui) * rs;
  b.rho_bias = (*Vi) * rr;
  return b;
}

// ---------------------------------------------------------------------------
// Finite-sample plug-ins.

/// Non-negative variances and a PSD 2x2 conditional covariance at x.
struct ClampedGamma {
  double v0, v1, c;
};

inline ClampedGamma clamped_gamma(const InnovationVariances& iv, double x) {
  const double v0 = std::max(0.0, iv.var_even(x));
  const double v1 = std::max(0.0, iv.var_odd(x));
  const double lim = std::sqrt(v0 * v1);
  return {v0, v1, std::clamp(iv.pair_mean(x), -lim, lim)};
}

/// <M>_n built from gamma_k with the given noise parameters.
inline Mat4 quadratic_variation(const LineageTree& lineage, const InnovationVariances& iv) {
  Mat4 q = Mat4::Zero();
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    const auto g = clamped_gamma(iv, m.x);
    const Mat2 blk = moment_block(m.x);
    if (m.has_even) q.topLeftCorner<2, 2>() += g.v0 * blk;
    if (m.has_odd) q.bottomRightCorner<2, 2>() += g.v1 * blk;
    if (m.has_even && m.has_odd) {
      q.topRightCorner<2, 2>() += g.c * blk;
      q.bottomLeftCorner<2, 2>() += g.c * blk;
    }
  });
  return q;
}

/// Cov(theta_hat) ~ S_{n-1}^-1 <M>_n S_{n-1}^-1.
inline std::optional<Mat4> plugin_covariance_theta(const DesignMatrices& design, const LineageTree& lineage,
                                                   const Vec4& sigma_hat, const Vec3& rho_hat) {
  Vec4 s = sigma_hat;
  s(0) = std::max(0.0, s(0));
  s(3) = std::max(0.0, s(3));
  const auto iv = InnovationVariances::from(s, rho_hat);
  auto Si = guarded_inverse(design.S());
  if (!Si) return std::nullopt;
  return Mat4((*Si) * quadratic_variation(lineage, iv) * (*Si));
}

/// Least-squares fit of y on (1, t, ..., t^4), t = (x - mean) / sd.
inline std::optional<Poly> fit_quartic(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 6) return std::nullopt;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  if (!(sd > 0.0)) return std::nullopt;
  Eigen::MatrixXd A(static_cast<Eigen::Index>(x.size()), 5);
  Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = (x[i] - mean) / sd;
    double p = 1.0;
    for (int r = 0; r < 5; ++r, p *= t) A(static_cast<Eigen::Index>(i), r) = p;
    b(static_cast<Eigen::Index>(i)) = y[i];
  }
  if (reciprocal_condition(A) < singular_rcond) return std::nullopt;
  Eigen::VectorXd coef = A.colPivHouseholderQr().solve(b);
  Poly p;
  p.center = mean;
  p.scale = sd;
  for (int r = 0; r < 5; ++r) p.c[static_cast<std::size_t>(r)] = coef(r);
  return p;
}

/// Fourth-moment terms read off residual data: regressions of e^4 and
/// e_2k^2 e_2k+1^2 on a quartic in X_k, minus the fitted squared means.
struct FittedFourthMoments {
  Poly fourth_even, fourth_odd, cross;
  InnovationVariances iv;

  [[nodiscard]] double A_even(double x) const {
    return std::max(0.0, fourth_even(x) - sq(std::max(0.0, iv.var_even(x))));
  }
  [[nodiscard]] double A_odd(double x) const {
    return std::max(0.0, fourth_odd(x) - sq(std::max(0.0, iv.var_odd(x))));
  }
  [[nodiscard]] double A_pair(double x) const {
    const double v = cross(x) - std::max(0.0, iv.var_even(x)) * std::max(0.0, iv.var_odd(x));
    const double lim = std::sqrt(A_even(x) * A_odd(x));
    return std::clamp(v, -lim, lim);
  }
  [[nodiscard]] double C(double x) const { return std::max(0.0, cross(x) - sq(iv.pair_mean(x))); }

 private:
  static double sq(double v) { return v * v; }
};

inline std::optional<FittedFourthMoments> fit_fourth_moments(const LineageTree& lineage, const Residuals& res,
                                                             const Vec4& sigma_hat, const Vec3& rho_hat) {
  std::vector<double> x0, y0, x1, y1, xp, yp;
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    const bool e = m.has_even && res.usable[m.even_pos];
    const bool o = m.has_odd && res.usable[m.odd_pos];
    if (e) {
      x0.push_back(m.x);
      y0.push_back(std::pow(res.value[m.even_pos], 4));
    }
    if (o) {
      x1.push_back(m.x);
      y1.push_back(std::pow(res.value[m.odd_pos], 4));
    }
    if (e && o) {
      xp.push_back(m.x);
      yp.push_back(std::pow(res.value[m.even_pos] * res.value[m.odd_pos], 2));
    }
  });
  auto f0 = fit_quartic(x0, y0);
  auto f1 = fit_quartic(x1, y1);
  auto fp = fit_quartic(xp, yp);
  if (!f0 || !f1 || !fp) return std::nullopt;
  Vec4 s = sigma_hat;
  s(0) = std::max(0.0, s(0));
  s(3) = std::max(0.0, s(3));
  return FittedFourthMoments{*f0, *f1, *fp, InnovationVariances::from(s, rho_hat)};
}

/// Finite-sum Gamma^sigma_n and Gamma^rho_n for per-cell conditional terms.
struct NoiseQuadraticVariation {
  Mat4 gamma_sigma = Mat4::Zero();
  Mat3 gamma_rho = Mat3::Zero();
};

template <typename Terms>
NoiseQuadraticVariation noise_quadratic_variation(const LineageTree& lineage, const Terms& terms) {
  std::array<double, 5> a0{}, a1{}, a01{}, cq{};
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    const double x = m.x;
    const double va0 = m.has_even ? terms.A_even(x) : 0.0;
    const double va1 = m.has_odd ? terms.A_odd(x) : 0.0;
    const bool pair = m.has_even && m.has_odd;
    const double va01 = pair ? terms.A_pair(x) : 0.0;
    const double vc = pair ? terms.C(x) : 0.0;
    double p = 1.0;
    for (std::size_t q = 0; q < 5; ++q, p *= x) {
      a0[q] += va0 * p;
      a1[q] += va1 * p;
      a01[q] += va01 * p;
      cq[q] += vc * p;
    }
  });
  auto at = [](const std::array<double, 5>& v) {
    return [&v](int q) { return v[static_cast<std::size_t>(q)]; };
  };
  return {assemble_gamma_sigma(at(a0), at(a1), at(a01)), assemble_gamma_rho(at(cq))};
}

/// Model-based conditional terms evaluated per cell.
struct ModelFourthMoments {
  FourthMomentTerms f;
  [[nodiscard]] double A_even(double x) const { return f.A_even(x); }
  [[nodiscard]] double A_odd(double x) const { return f.A_odd(x); }
  [[nodiscard]] double A_pair(double x) const { return f.A_pair(x); }
  [[nodiscard]] double C(double x) const { return f.C(x); }
};

// ---------------------------------------------------------------------------
// Intervals and tests.

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Upper tail P(Z > z).
inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

enum class Sided { one, two };

struct WaldResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// z = (estimate - null) / sqrt(variance). The one-sided alternative is
/// estimate > null.
inline WaldResult wald_test(double estimate, double variance, double null_value, Sided sided) {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw ValidationError("wald_test: variance must be positive and finite");
  const double z = (estimate - null_value) / std::sqrt(variance);
  const double p = sided == Sided::two ? std::erfc(std::abs(z) / std::sqrt(2.0)) : normal_upper_tail(z);
  return {z, std::min(1.0, p)};
}

struct Interval {
  double estimate = 0.0, se = 0.0, lo = 0.0, hi = 0.0;
};

inline Interval confidence_interval(double estimate, double variance, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  const double se = std::sqrt(std::max(0.0, variance));
  const double z = normal_quantile(0.5 + 0.5 * level);
  return {estimate, se, estimate - z * se, estimate + z * se};
}

/// Plug-in inference for one lineage.
struct InferenceOutput {
  double level = 0.95;
  std::optional<Mat4> cov_theta, cov_sigma;
  std::optional<Mat3> cov_rho;
  std::vector<Interval> theta, sigma, sigma_bias_corrected, rho;
  std::optional<WaldResult> sigma_eps2_positive, sigma_eta2_positive;
  std::optional<Vec4> sigma_predictable;  // sigma from generation-wise residuals
  Vec4 sigma_bias = Vec4::Zero();
  std::vector<std::string> warnings;
};

/// Plug-in version of the bias constants with S, T, W, Gamma and U replaced
/// by their normalised finite sums.
/// `generations` counts the mother generations whose residuals entered the
/// predictable estimator.
inline std::optional<std::pair<Vec4, Vec3>> plugin_bias(const LineageTree& lineage, const DesignMatrices& d,
                                                        const Vec4& sigma_hat, const Vec3& rho_hat,
                                                        int generations) {
  if (d.mothers == 0 || d.horizon < 1 || generations < 1) return std::nullopt;
  const double N = static_cast<double>(d.mothers);
  const double m_hat = static_cast<double>(d.even_children + d.odd_children) / N;
  Vec4 s = sigma_hat;
  s(0) = std::max(0.0, s(0));
  s(3) = std::max(0.0, s(3));
  const auto iv = InnovationVariances::from(s, rho_hat);
  Mat4 Gam = quadratic_variation(lineage, iv) / N;
  std::array<double, 5> l0{}, l1{}, l01{};
  for_each_mother(lineage, d.horizon - 1, [&](const MotherView& m) {
    double p = 1.0;
    for (std::size_t q = 0; q < 5; ++q, p *= m.x) {
      if (m.has_even) l0[q] += p / N;
      if (m.has_odd) l1[q] += p / N;
      if (m.has_even && m.has_odd) l01[q] += p / N;
    }
  });
  auto L = [](const std::array<double, 5>& v) { return [&v](int q) { return v[static_cast<std::size_t>(q)]; }; };
  LimitMatrices lm;
  lm.m = m_hat;
  lm.S0 = hankel2(L(l0), 0);
  lm.S1 = hankel2(L(l1), 0);
  lm.T0 = hankel2(L(l0), 1);
  lm.T1 = hankel2(L(l1), 1);
  lm.W0 = hankel2(L(l0), 2);
  lm.W1 = hankel2(L(l1), 2);
  lm.S = block_diagonal(lm.S0, lm.S1);
  lm.J01 = anti_diagonal(hankel2(L(l01), 0));
  lm.K01 = anti_diagonal(hankel2(L(l01), 1));
  lm.L01 = anti_diagonal(hankel2(L(l01), 2));
  lm.Gamma = Gam;
  lm.Gamma0 = Gam.topLeftCorner<2, 2>();
  lm.Gamma1 = Gam.bottomRightCorner<2, 2>();
  lm.U = d.U / N;
  lm.V = d.V / N;
  try {
    const auto b = bias_constants(lm);
    const double scale = static_cast<double>(generations) / N;
    return std::pair{Vec4(scale * b.sigma_bias), Vec3(scale * b.rho_bias)};
  } catch (const ValidationError&) {
    return std::nullopt;
  }
}

inline InferenceOutput infer(const LineageTree& lineage, const EstimateBundle& est, double level) {
  InferenceOutput out;
  out.level = level;
  if (!est.theta.ok() || !est.sigma.ok()) {
    out.warnings.emplace_back("estimates unavailable; no inference performed");
    return out;
  }
  const Vec3 rho = est.rho.ok() ? est.rho.value : Vec3::Zero();
  if (!est.rho.ok()) out.warnings.emplace_back("rho unavailable; cross-branch covariance set to 0 in plug-ins");
  if (est.sigma.value(0) < 0.0 || est.sigma.value(3) < 0.0)
    out.warnings.emplace_back("variance estimate out of cone; clamped at 0 inside the plug-in covariances");

  out.cov_theta = plugin_covariance_theta(est.design, lineage, est.sigma.value, rho);
  if (out.cov_theta)
    for (int i = 0; i < 4; ++i)
      out.theta.push_back(confidence_interval(est.theta.value(i), (*out.cov_theta)(i, i), level));

  auto fitted = fit_fourth_moments(lineage, est.residuals, est.sigma.value, rho);
  if (!fitted) {
    out.warnings.emplace_back("too few residuals to fit conditional fourth moments");
    return out;
  }
  const auto nqv = noise_quadratic_variation(lineage, *fitted);
  auto Ui = guarded_inverse(est.sigma.U);
  if (Ui) {
    out.cov_sigma = Mat4((*Ui) * nqv.gamma_sigma * (*Ui));
    for (int i = 0; i < 4; ++i)
      out.sigma.push_back(confidence_interval(est.sigma.value(i), (*out.cov_sigma)(i, i), level));
    const double v0 = (*out.cov_sigma)(0, 0), v3 = (*out.cov_sigma)(3, 3);
    if (v0 > 0.0) out.sigma_eps2_positive = wald_test(est.sigma.value(0), v0, 0.0, Sided::one);
    if (v3 > 0.0) out.sigma_eta2_positive = wald_test(est.sigma.value(3), v3, 0.0, Sided::one);
    // The O(n / |T*|) bias belongs to the estimator built on generation-wise residuals.
    const auto pred = predictable_residuals(lineage);
    const auto sp = estimate_sigma(lineage, pred);
    const auto traj = theta_trajectory(lineage);
    int generations = 0;
    for (int g = 1; g < est.design.horizon; ++g) generations += traj[static_cast<std::size_t>(g - 1)].estimate.ok();
    if (sp.ok())
      if (auto bias = plugin_bias(lineage, est.design, est.sigma.value, rho, generations)) {
        out.sigma_predictable = sp.value;
        out.sigma_bias = bias->first;
        for (int i = 0; i < 4; ++i)
          out.sigma_bias_corrected.push_back(
              confidence_interval(sp.value(i) - out.sigma_bias(i), (*out.cov_sigma)(i, i), level));
      }
  }
  if (est.rho.ok()) {
    auto Vi = guarded_inverse(est.rho.V);
    if (Vi) {
      out.cov_rho = Mat3((*Vi) * nqv.gamma_rho * (*Vi));
      for (int i = 0; i < 3; ++i)
        out.rho.push_back(confidence_interval(est.rho.value(i), (*out.cov_rho)(i, i), level));
    }
  }
  return out;
}

}  // namespace rbar
