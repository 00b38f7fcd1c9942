// Limit theory of the reference model next to a short Monte Carlo run.

#include "rbar/harness.hpp"

#include <cstdio>
#include <iostream>

using namespace rbar;

int main() {
  NoiseSecondMoments s;
  s.sigma_eps2 = 0.25;
  s.sigma_eta2 = 0.04;
  const ModelSpec model{BarParams{0.5, 0.5, 0.6, 0.4}, NoiseModel::gaussian(s), ObservationParams{.p0 = 0.2, .p1 = 0.2, .p01 = 0.5}};

  const InducedCoefficientLaw law(model.params, model.noise, model.obs);
  const auto sm = stationary_moments(law, 8);
  for (int q = 0; q <= 8; ++q) std::printf("E[Y^%d] = %.6f\n", q, sm[q]);
  for (int k = 1; k <= 8; ++k)
    std::printf("stability margin kappa=%d: %.4f\n", k, stability_margin(model.params, model.noise, model.obs, k));

  const auto lm = limit_matrices(model.noise, model.obs, sm);
  std::cout << "S =\n" << lm.S << "\nGamma =\n" << lm.Gamma << "\n";
  std::printf("tr(Gamma Sigma^-1) = %.5f\n", lm.qsl_limit());
  const auto bias = bias_constants(lm);
  std::cout << "sigma bias constants: " << bias.sigma_bias.transpose() << "\n";

  ExperimentConfig cfg;
  cfg.model = model;
  cfg.kind = ExperimentKind::coverage;
  cfg.n = 10;
  cfg.replicates = 300;
  cfg.seed = 2024;
  const auto res = run_experiment(cfg);
  for (const auto& v : res.verdicts)
    std::printf("%-18s %s %.4f in [%.4f, %.4f]\n", v.name.c_str(), v.pass ? "PASS" : "FAIL", v.value, v.lo, v.hi);
  return 0;
}
