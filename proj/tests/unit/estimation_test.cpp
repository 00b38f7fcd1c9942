#include "rbar/asymptotics.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rbar;

namespace {

const BarParams kReference{0.5, 0.5, 0.6, 0.4};
const ObservationParams kReferenceObs{.p0 = 0.2, .p1 = 0.2, .p01 = 0.5};

NoiseSecondMoments reference_moments() {
  NoiseSecondMoments s;
  s.sigma_eps2 = 0.25;
  s.sigma_eta2 = 0.04;
  return s;
}

NoiseSecondMoments correlated_moments() {
  NoiseSecondMoments s;
  s.sigma_eps2 = 0.3;
  s.sigma_eta2 = 0.05;
  s.rho_eps = 0.1;
  s.rho_eta = 0.02;
  s.rho00 = 0.03;
  s.rho01 = -0.01;
  s.rho10 = 0.02;
  s.rho11 = 0.04;
  return s;
}

oracle::Cells cells_of(const LineageTree& l) {
  oracle::Cells c;
  const auto cells = l.tree().observed();
  for (std::size_t i = 0; i < cells.size(); ++i) c[cells[i]] = l.values()[i];
  return c;
}

// Plain reader for the "index,value" fixtures, independent of the io module.
LineageTree read_fixture(const std::string& name) {
  std::ifstream in(std::filesystem::path(RBAR_TEST_DATA) / name);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<CellIndex, double>> rec;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string k, v;
    std::getline(ls, k, ',');
    std::getline(ls, v);
    rec.emplace_back(std::stoull(k), std::stod(v));
  }
  return LineageTree::from_records(rec);
}

LineageTree surviving_reference(int n, std::size_t min_cells, std::uint64_t seed, const NoiseModel& noise) {
  for (;; ++seed) {
    const auto t = sample_observation_tree(kReferenceObs, n, seed);
    if (t.size() >= min_cells && !t.generation(n).empty()) return simulate(kReference, noise, t, seed);
  }
}

void expect_matches_oracle(const LineageTree& l, double tol) {
  const auto o = oracle::naive_fit(cells_of(l), l.tree().max_generation());
  const auto est = estimate_all(l);
  ASSERT_EQ(est.design.mothers, o.mothers);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(est.design.S0(i, j), o.S0[i][j], tol * (1 + std::abs(o.S0[i][j])));
      EXPECT_NEAR(est.design.S1(i, j), o.S1[i][j], tol * (1 + std::abs(o.S1[i][j])));
    }
  ASSERT_EQ(est.theta.ok(), o.theta_ok);
  if (!o.theta_ok) return;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(est.design.U(i, j), o.U[i][j], tol * (1 + std::abs(o.U[i][j])));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(est.design.V(i, j), o.V[i][j], tol * (1 + std::abs(o.V[i][j])));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(est.theta.value(i), o.theta[i], tol * (1 + std::abs(o.theta[i])));
  if (o.sigma_ok && est.sigma.ok())
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(est.sigma.value(i), o.sigma[i], 1e3 * tol * (1 + std::abs(o.sigma[i])));
  if (o.rho_ok && est.rho.ok())
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(est.rho.value(i), o.rho[i], 1e3 * tol * (1 + std::abs(o.rho[i])));
}

// l_branch(q) = P(branch observed) E[Y^q].
struct Ell {
  StationaryMoments sm;
  ObservationParams obs;
  double operator()(int branch, int q) const {
    const double w = branch == 0 ? obs.p0 + obs.p01 : branch == 1 ? obs.p1 + obs.p01 : obs.p01;
    return w * sm[q];
  }
  double integrate(int branch, const std::vector<double>& poly, int shift) const {
    double acc = 0.0;
    for (std::size_t r = 0; r < poly.size(); ++r) acc += poly[r] * (*this)(branch, static_cast<int>(r) + shift);
    return acc;
  }
};

}  // namespace

TEST(Estimation, NoiselessDataIsRecoveredExactly) {
  const BarParams p{0.3, -0.4, 1.2, 0.7, InitialLaw::gaussian(1.0, 0.5)};
  const auto l = simulate(p, NoiseModel::zero(), sample_observation_tree(kReferenceObs, 10, 5), 5);
  const auto est = estimate_all(l);
  ASSERT_TRUE(est.theta.ok());
  EXPECT_NEAR(est.theta.value(0), 0.3, 1e-10);
  EXPECT_NEAR(est.theta.value(1), -0.4, 1e-10);
  EXPECT_NEAR(est.theta.value(2), 1.2, 1e-10);
  EXPECT_NEAR(est.theta.value(3), 0.7, 1e-10);
  if (est.sigma.ok()) EXPECT_LT(est.sigma.value.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Estimation, FixturesMatchNaiveNormalEquations) {
  for (const char* name : {"small_root.csv", "small_full4.csv", "small_0.csv", "small_1.csv", "small_2.csv",
                           "small_3.csv", "small_4.csv", "small_5.csv", "synthetic_663.csv"}) {
    SCOPED_TRACE(name);
    expect_matches_oracle(read_fixture(name), 1e-10);
  }
}

TEST(Estimation, RandomTreesMatchNaiveNormalEquations) {
  const auto noise = NoiseModel::gaussian(correlated_moments());
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    SCOPED_TRACE(seed);
    const auto t = sample_observation_tree(ObservationParams{.p0 = 0.25, .p1 = 0.15, .p01 = 0.55}, 9, seed);
    expect_matches_oracle(simulate(kReference, noise, t, seed), 1e-10);
  }
}

TEST(Estimation, HandResiduals) {
  const auto l = LineageTree::from_records({{1, 2.0}, {2, 1.0}, {3, 3.0}, {5, 4.0}});
  const Vec4 theta(0.5, 0.25, -1.0, 2.0);
  const auto r = residuals(l, theta);
  EXPECT_DOUBLE_EQ(r.value[l.tree().position(2)], 1.0 - 0.5 - 0.25 * 2.0);
  EXPECT_DOUBLE_EQ(r.value[l.tree().position(3)], 3.0 + 1.0 - 2.0 * 2.0);
  EXPECT_DOUBLE_EQ(r.value[l.tree().position(5)], 4.0 + 1.0 - 2.0 * 1.0);
  EXPECT_FALSE(r.usable[0]);
}

TEST(Estimation, DegenerateInputsReportStatus) {
  EXPECT_EQ(estimate_all(LineageTree::from_records({{1, 1.0}})).theta.status, Status::insufficient_data);
  // Only even daughters: the odd regression has no data.
  const auto evens = LineageTree::from_records({{1, 1.0}, {2, 2.0}, {4, 3.0}});
  EXPECT_EQ(estimate_theta(evens).status, Status::insufficient_data);
  // One mother: both 2x2 systems are rank one.
  const auto one = LineageTree::from_records({{1, 1.0}, {2, 2.0}, {3, 3.0}});
  const auto est = estimate_all(one);
  EXPECT_EQ(est.theta.status, Status::singular);
  EXPECT_FALSE(est.sigma.ok());
  EXPECT_EQ(to_string(Status::singular), "singular");
}

TEST(Estimation, NoSlopeNoiseReducesToMeanSquare) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto l = simulate(kReference, noise, sample_observation_tree(kReferenceObs, 9, 3), 3);
  const auto est = estimate_all(l, SigmaModel::no_slope_noise);
  ASSERT_TRUE(est.sigma.ok());
  double ss = 0.0, count = 0.0;
  for (std::size_t i = 1; i < l.tree().size(); ++i)
    if (generation_of(l.tree().observed()[i]) <= l.tree().max_generation()) {
      ss += est.residuals.value[i] * est.residuals.value[i];
      count += 1.0;
    }
  EXPECT_NEAR(est.sigma.value(0), ss / count, 1e-12);
  EXPECT_EQ(est.sigma.value(1), 0.0);
  EXPECT_EQ(est.sigma.value(3), 0.0);
}

TEST(Estimation, TrajectoryEndsAtFinalEstimate) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto l = surviving_reference(10, 60, 1, noise);
  const auto traj = theta_trajectory(l);
  ASSERT_EQ(static_cast<int>(traj.size()), l.tree().max_generation());
  EXPECT_EQ(traj.back().mothers, estimate_all(l).design.mothers);
  EXPECT_LT((traj.back().estimate.value - estimate_theta(l).value).norm(), 1e-12);
  EXPECT_LT((traj.back().S - accumulate_design(l).S()).norm(), 1e-9);
  for (std::size_t i = 1; i < traj.size(); ++i) EXPECT_GE(traj[i].mothers, traj[i - 1].mothers);
}

TEST(Estimation, PredictableResidualsUseGenerationwiseEstimates) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto l = surviving_reference(9, 40, 2, noise);
  const auto traj = theta_trajectory(l);
  const auto pr = predictable_residuals(l, 3);
  for_each_mother(l, l.tree().max_generation() - 1, [&](const MotherView& m) {
    if (!m.has_even) return;
    if (m.generation < 3) {
      EXPECT_FALSE(pr.usable[m.even_pos]);
      return;
    }
    const auto& t = traj[static_cast<std::size_t>(m.generation - 1)].estimate;
    if (!t.ok()) return;
    EXPECT_NEAR(pr.value[m.even_pos], m.x_even - t.value(0) - t.value(1) * m.x, 1e-12);
  });
}

TEST(Asymptotics, LimitMatricesAreSymmetricPositiveDefinite) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto sm = stationary_moments(InducedCoefficientLaw(kReference, noise, kReferenceObs), 8);
  const auto lm = limit_matrices(noise, kReferenceObs, sm);
  for (const Mat4* m : {&lm.S, &lm.Sigma, &lm.Gamma, &lm.U, &*lm.GammaSigma}) {
    EXPECT_LT((*m - m->transpose()).norm(), 1e-12);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat4>(*m).eigenvalues().minCoeff(), 0.0);
  }
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat3>(lm.V).eigenvalues().minCoeff(), 0.0);
  // Uncorrelated branches.
  EXPECT_EQ(lm.Gamma01.norm(), 0.0);
  EXPECT_NEAR(lm.qsl_limit(), 0.53460, 5e-5);
}

TEST(Asymptotics, NoiseQuadraticVariationMatchesBruteForcePolynomials) {
  const auto s = correlated_moments();
  const auto noise = NoiseModel::gaussian(s);
  const BarParams p{0.4, 0.3, 0.5, 0.35};
  const auto sm = stationary_moments(InducedCoefficientLaw(p, noise, kReferenceObs), 8);
  const auto lm = limit_matrices(noise, kReferenceObs, sm);
  ASSERT_TRUE(lm.GammaSigma && lm.GammaRho);

  oracle::Matrix<4> cov{};
  const Mat4 c = s.covariance();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = c(i, j);
  const auto v0 = oracle::innovation_product_poly(cov, {0, 0});
  const auto v1 = oracle::innovation_product_poly(cov, {1, 1});
  const auto pm = oracle::innovation_product_poly(cov, {0, 1});
  const auto A0 = oracle::poly_sub(oracle::innovation_product_poly(cov, {0, 0, 0, 0}), oracle::poly_mul(v0, v0));
  const auto A1 = oracle::poly_sub(oracle::innovation_product_poly(cov, {1, 1, 1, 1}), oracle::poly_mul(v1, v1));
  const auto E22 = oracle::innovation_product_poly(cov, {0, 0, 1, 1});
  const auto A01 = oracle::poly_sub(E22, oracle::poly_mul(v0, v1));
  const auto C = oracle::poly_sub(E22, oracle::poly_mul(pm, pm));

  const Ell ell{sm, kReferenceObs};
  // zeta = d0 (e0^2 - v0) w0(x) + d1 (e1^2 - v1) w1(x); entries of w as (coefficient, power).
  using Weight = std::array<std::pair<double, int>, 4>;
  const Weight w0{{{1, 0}, {2, 1}, {0, 0}, {1, 2}}}, w1{{{1, 0}, {0, 0}, {2, 1}, {1, 2}}};
  auto term = [&](const Weight& a, const Weight& b, int i, int j, const std::vector<double>& poly, int branch) {
    return a[static_cast<std::size_t>(i)].first * b[static_cast<std::size_t>(j)].first *
           ell.integrate(branch, poly, a[static_cast<std::size_t>(i)].second + b[static_cast<std::size_t>(j)].second);
  };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double want = term(w0, w0, i, j, A0, 0) + term(w1, w1, i, j, A1, 1) + term(w0, w1, i, j, A01, 2) +
                          term(w1, w0, i, j, A01, 2);
      EXPECT_NEAR((*lm.GammaSigma)(i, j), want, 1e-10 * (1 + std::abs(want))) << i << j;
    }
  const std::array<std::pair<double, int>, 3> wr{{{1, 0}, {2, 1}, {1, 2}}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double want = wr[static_cast<std::size_t>(i)].first * wr[static_cast<std::size_t>(j)].first *
                          ell.integrate(2, C, wr[static_cast<std::size_t>(i)].second + wr[static_cast<std::size_t>(j)].second);
      EXPECT_NEAR((*lm.GammaRho)(i, j), want, 1e-10 * (1 + std::abs(want))) << i << j;
    }

  // The literal reading only moves the x^4 coefficient of C.
  const auto lit = limit_matrices(noise, kReferenceObs, sm, AsymptoticOptions{.literal_paper_typos = true});
  const double shift = noise.moment({2, 0, 2, 0}) - noise.moment({0, 2, 0, 2});
  EXPECT_NEAR((*lit.GammaRho)(0, 0) - (*lm.GammaRho)(0, 0), shift * ell(2, 4), 1e-12);
  EXPECT_NEAR((*lit.GammaRho)(2, 2) - (*lm.GammaRho)(2, 2), shift * ell(2, 8), 1e-10);
  EXPECT_EQ(*lit.GammaSigma, *lm.GammaSigma);
}

TEST(Asymptotics, BiasTraceIsTwiceMMinusOneWhenGammaEqualsS) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto sm = stationary_moments(InducedCoefficientLaw(kReference, noise, kReferenceObs), 8);
  auto lm = limit_matrices(noise, kReferenceObs, sm);
  lm.Gamma0 = lm.S0;
  lm.Gamma1 = lm.S1;
  for (auto form : {BiasForm::sandwich, BiasForm::printed}) {
    const auto b = bias_constants(lm, form);
    EXPECT_NEAR(b.q0[0], 2 * (1.4 - 1), 1e-12);
    EXPECT_NEAR(b.q1[0], 2 * (1.4 - 1), 1e-12);
  }
}

TEST(Asymptotics, ReferenceBiasConstants) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto sm = stationary_moments(InducedCoefficientLaw(kReference, noise, kReferenceObs), 8);
  const auto lm = limit_matrices(noise, kReferenceObs, sm);
  const auto b = bias_constants(lm);
  const Vec4 want(0.59750, -0.47162, -0.47162, 0.52024);
  EXPECT_LT((b.sigma_bias - want).cwiseAbs().maxCoeff(), 5e-5);
  EXPECT_LT(b.rho_bias.norm(), 1e-12);
}

TEST(Asymptotics, WaldAndIntervals) {
  const auto two = wald_test(1.959963984540054, 1.0, 0.0, Sided::two);
  EXPECT_NEAR(two.p_value, 0.05, 1e-12);
  EXPECT_NEAR(wald_test(1.959963984540054, 1.0, 0.0, Sided::one).p_value, 0.025, 1e-12);
  EXPECT_NEAR(wald_test(-1.0, 4.0, 0.0, Sided::one).statistic, -0.5, 1e-15);
  EXPECT_THROW(wald_test(1.0, 0.0, 0.0, Sided::one), ValidationError);
  const auto ci = confidence_interval(1.0, 4.0, 0.95);
  EXPECT_NEAR(ci.lo, 1.0 - 2 * 1.959963984540054, 1e-9);
  EXPECT_NEAR(ci.hi, 1.0 + 2 * 1.959963984540054, 1e-9);
  EXPECT_THROW(confidence_interval(0.0, 1.0, 1.0), ValidationError);
}

TEST(Asymptotics, PluginQuantitiesApproachLimits) {
  const auto noise = NoiseModel::gaussian(reference_moments());
  const auto sm = stationary_moments(InducedCoefficientLaw(kReference, noise, kReferenceObs), 8);
  const auto lm = limit_matrices(noise, kReferenceObs, sm);
  const auto l = surviving_reference(20, 2500, 1, noise);
  const auto d = accumulate_design(l);
  const double N = static_cast<double>(d.mothers);
  const Vec4 sig(0.25, 0.0, 0.0, 0.04);
  const auto cov = plugin_covariance_theta(d, l, sig, Vec3::Zero());
  ASSERT_TRUE(cov);
  const Mat4 lim = lm.theta_covariance();
  EXPECT_LT((N * *cov - lim).norm() / lim.norm(), 0.15);
  const auto pb = plugin_bias(l, d, sig, Vec3::Zero(), 19);
  ASSERT_TRUE(pb);
  const Vec4 per = pb->first * N / 19.0;
  EXPECT_LT((per - bias_constants(lm).sigma_bias).norm() / bias_constants(lm).sigma_bias.norm(), 0.2);
}

TEST(Asymptotics, QuarticFitIsExactOnPolynomials) {
  std::vector<double> x, y;
  for (int i = 0; i < 30; ++i) {
    const double v = 0.1 * i - 1.0;
    x.push_back(v);
    y.push_back(2.0 - v + 0.5 * v * v * v * v);
  }
  const auto p = fit_quartic(x, y);
  ASSERT_TRUE(p);
  for (double v : {-0.7, 0.0, 1.3}) EXPECT_NEAR((*p)(v), 2.0 - v + 0.5 * v * v * v * v, 1e-9);
  EXPECT_FALSE(fit_quartic({1, 2, 3}, {1, 2, 3}));
}

TEST(Asymptotics, InferenceOnSyntheticLineage) {
  const auto l = read_fixture("synthetic_663.csv");
  const auto est = estimate_all(l);
  const auto inf = infer(l, est, 0.95);
  ASSERT_EQ(inf.theta.size(), 4u);
  ASSERT_EQ(inf.sigma.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_LT(inf.theta[i].lo, inf.theta[i].hi);
    EXPECT_DOUBLE_EQ(inf.theta[i].estimate, est.theta.value(i));
  }
  // Generated with theta = (0.0363, 0.0266, 0.0306, 0.1706).
  const Vec4 truth(0.0363, 0.0266, 0.0306, 0.1706);
  for (int i = 0; i < 4; ++i) EXPECT_LT(std::abs(inf.theta[i].estimate - truth(i)), 4.0 * inf.theta[i].se) << i;
  EXPECT_FALSE(est.sigma.out_of_cone);
  EXPECT_GT(inf.sigma[3].se, 0.0);
  ASSERT_TRUE(inf.sigma_eps2_positive && inf.sigma_eta2_positive);
  EXPECT_GE(inf.sigma_eps2_positive->p_value, 0.0);
  EXPECT_LE(inf.sigma_eps2_positive->p_value, 1.0);
}
