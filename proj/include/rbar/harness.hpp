#pragma once

// Monte Carlo experiments over independent replicates of (tree, lineage).

#include "rbar/asymptotics.hpp"
#include "rbar/estimation.hpp"
#include "rbar/genealogy.hpp"
#include "rbar/induced_chain.hpp"
#include "rbar/noise_model.hpp"
#include "rbar/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace rbar {

struct ModelSpec {
  BarParams params;
  NoiseModel noise = NoiseModel::zero();
  ObservationParams obs;
};

enum class ExperimentKind { consistency, rate, qsl, coverage, normality, bias };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::consistency: return "consistency";
    case ExperimentKind::rate: return "rate";
    case ExperimentKind::qsl: return "qsl";
    case ExperimentKind::coverage: return "coverage";
    case ExperimentKind::normality: return "normality";
    case ExperimentKind::bias: return "bias";
  }
  return "unknown";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::consistency, ExperimentKind::rate, ExperimentKind::qsl,
                 ExperimentKind::coverage, ExperimentKind::normality, ExperimentKind::bias})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown experiment kind '" + s + "'");
}

/// Acceptance bands of the verdicts.
struct Tolerances {
  double rate_ratio_lo = 1.4;        // median error ratio between n-4 and n
  double rate_ratio_hi = 2.8;
  double rate_growth_max = 1.5;      // median n^-1 m^n |err|^2 at n over n/2
  double qsl_relative = 0.10;
  double coverage_sigmas = 3.0;      // binomial standard errors around the level
  double bias_sigmas = 3.0;
  double survival_sigmas = 3.0;
  double ks_critical = 1.628;        // Kolmogorov c(0.01)
  int allowed_inversions = 1;
};

/// Weight matrix of the quadratic forms in the QSL average.
enum class QslWeight {
  empirical,  // S_{l-1} Sigma_{l-1}^-1 S_{l-1} from the data
  limit       // |T*_{l-1}| S Sigma^-1 S from the limit matrices
};

struct ExperimentConfig {
  ModelSpec model;
  ExperimentKind kind = ExperimentKind::consistency;
  int n = 12;
  int replicates = 100;
  std::uint64_t seed = 1;
  double level = 0.95;
  int first_generation = 1;  // first generation entering Cesaro averages and bias sums
  int threads = 0;           // 0: hardware concurrency
  bool allow_unstable = false;
  bool sigma_targets = false;  // coverage of sigma and rho as well as theta
  BiasForm bias_form = BiasForm::sandwich;
  QslWeight qsl_weight = QslWeight::empirical;
  AsymptoticOptions asymptotic;
  Tolerances tol;
};

struct Verdict {
  std::string name;
  bool pass = false;
  bool inconclusive = false;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t sample_size = 0;
  std::string detail;
};

struct ExperimentResult {
  ExperimentKind kind = ExperimentKind::consistency;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // one per replicate, survivors and extinct alike
  std::size_t replicates = 0;
  std::size_t survivors = 0;
  std::vector<std::pair<std::string, double>> aggregates;
  std::vector<Verdict> verdicts;
  std::vector<std::string> warnings;

  [[nodiscard]] bool inconclusive() const { return survivors == 0; }
  [[nodiscard]] bool passed() const {
    return !inconclusive() &&
           std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
  }
  [[nodiscard]] std::optional<double> aggregate(const std::string& key) const {
    for (const auto& [k, v] : aggregates)
      if (k == key) return v;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Replicate machinery.

/// Calls f(r) for r = 0..count-1 on a thread pool; results keep index order.
template <typename T, typename F>
std::vector<T> parallel_map(std::size_t count, int threads, F&& f) {
  std::vector<T> out(count);
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < count && !failed; i = next++) {
      try {
        out[i] = f(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

inline std::uint64_t replicate_seed(std::uint64_t master, std::size_t r) {
  return derive_seed(master, Stream::replicate, r);
}

struct Replicate {
  ObservationTree tree;
  LineageTree lineage;
};

inline Replicate draw_replicate(const ModelSpec& model, int n, std::uint64_t master, std::size_t r,
                                bool keep_truth = false) {
  const auto seed = replicate_seed(master, r);
  auto tree = sample_observation_tree(model.obs, n, seed);
  auto lineage = simulate(model.params, model.noise, tree, seed, keep_truth);
  return {std::move(tree), std::move(lineage)};
}

// ---------------------------------------------------------------------------
// Statistics helpers.

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  r.n = v.size();
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return r;
}

/// One-sample Kolmogorov-Smirnov statistic against the standard normal.
inline double ks_statistic_normal(std::vector<double> z) {
  if (z.empty()) return 0.0;
  std::sort(z.begin(), z.end());
  const double n = static_cast<double>(z.size());
  double d = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = 1.0 - normal_upper_tail(z[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// Survival fraction against 1 - extinction probability.
inline Verdict survival_verdict(const ObservationParams& obs, std::size_t survivors, std::size_t total,
                                double sigmas) {
  Verdict v;
  v.name = "survival_fraction";
  v.sample_size = total;
  const double p = 1.0 - obs.extinction_probability();
  v.value = total ? static_cast<double>(survivors) / static_cast<double>(total) : 0.0;
  const double se = total ? std::sqrt(std::max(p * (1 - p), 1e-12) / static_cast<double>(total)) : 0.0;
  v.lo = p - sigmas * se;
  v.hi = p + sigmas * se;
  v.pass = v.value >= v.lo - 1e-12 && v.value <= v.hi + 1e-12;
  std::ostringstream os;
  os << "theory " << p << ", band +-" << sigmas << " SE";
  v.detail = os.str();
  return v;
}

inline Verdict band_verdict(std::string name, double value, double lo, double hi, std::size_t n,
                            std::string detail = {}) {
  Verdict v;
  v.name = std::move(name);
  v.value = value;
  v.lo = lo;
  v.hi = hi;
  v.sample_size = n;
  v.pass = std::isfinite(value) && value >= lo && value <= hi;
  v.detail = std::move(detail);
  return v;
}

/// Refuses configurations whose fourth-order stability margin is not below 1.
inline void check_launch(const ExperimentConfig& cfg, ExperimentResult& res) {
  if (cfg.replicates < 1) throw ValidationError("experiment needs at least one replicate");
  if (cfg.n < 2) throw ValidationError("experiment horizon n must be >= 2");
  cfg.model.obs.validate();
  cfg.model.params.validate();
  if (cfg.model.noise.family() == NoiseFamily::zero) return;
  const double margin = stability_margin(cfg.model.params, cfg.model.noise, cfg.model.obs, 1);
  if (margin >= 1.0 && !cfg.allow_unstable)
    throw ValidationError("stability margin " + std::to_string(margin) +
                          " >= 1 at kappa = 1; pass --allow-unstable to run anyway");
  const int wanted = (cfg.kind == ExperimentKind::bias || cfg.sigma_targets) ? 8 : 4;
  const auto budget = cfg.model.noise.budget();
  if (budget.max_kappa < wanted)
    res.warnings.push_back("noise moment budget gives kappa = " + std::to_string(budget.max_kappa) +
                           " below the " + std::to_string(wanted) + " this experiment's limit theory uses");
  else if (stability_margin(cfg.model.params, cfg.model.noise, cfg.model.obs, wanted) >= 1.0)
    res.warnings.push_back("stability margin at kappa = " + std::to_string(wanted) +
                           " is not below 1; limit objects still exist when the stationary moments do");
}

/// Limit objects of the configured model.
struct TheoryBundle {
  StationaryMoments sm{std::vector<double>{1.0}};
  LimitMatrices limits;
};

inline TheoryBundle theory_for(const ModelSpec& model, int q_max, const AsymptoticOptions& opt) {
  InducedCoefficientLaw law(model.params, model.noise, model.obs);
  TheoryBundle t;
  t.sm = stationary_moments(law, std::min(q_max, law.max_order()));
  t.limits = limit_matrices(model.noise, model.obs, t.sm, opt);
  return t;
}

// ---------------------------------------------------------------------------
// Experiments.

/// Median |theta_hat - theta| over generations 4..n.
inline ExperimentResult run_consistency(const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.kind = ExperimentKind::consistency;
  check_launch(cfg, res);
  const int n = cfg.n;
  const int first = std::min(4, n);
  for (int l = first; l <= n; ++l) res.columns.push_back("err_n" + std::to_string(l));
  res.columns.insert(res.columns.begin(), "survived");
  const Vec4 theta = cfg.model.params.theta();
  res.rows = parallel_map<std::vector<double>>(
      static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
        const auto rep = draw_replicate(cfg.model, n, cfg.seed, r);
        std::vector<double> row{survives(rep.tree) ? 1.0 : 0.0};
        const auto traj = theta_trajectory(rep.lineage);
        for (int l = first; l <= n; ++l) {
          const auto& e = traj[static_cast<std::size_t>(l - 1)].estimate;
          row.push_back(e.ok() ? (e.value - theta).norm() : std::numeric_limits<double>::quiet_NaN());
        }
        return row;
      });
  res.replicates = res.rows.size();
  std::vector<double> medians;
  for (int l = first; l <= n; ++l) {
    std::vector<double> e;
    for (const auto& row : res.rows)
      if (row[0] > 0.5 && std::isfinite(row[static_cast<std::size_t>(l - first + 1)]))
        e.push_back(row[static_cast<std::size_t>(l - first + 1)]);
    medians.push_back(median(e));
    res.aggregates.emplace_back("median_err_n" + std::to_string(l), medians.back());
  }
  for (const auto& row : res.rows) res.survivors += row[0] > 0.5 ? 1 : 0;
  res.verdicts.push_back(survival_verdict(cfg.model.obs, res.survivors, res.replicates, cfg.tol.survival_sigmas));
  if (res.inconclusive()) {
    res.warnings.emplace_back("all replicates extinct; consistency inconclusive");
    return res;
  }
  int inversions = 0;
  for (std::size_t i = 1; i < medians.size(); ++i) inversions += medians[i] > medians[i - 1] ? 1 : 0;
  const bool noiseless = medians.front() < 1e-9;
  Verdict mono = band_verdict("median_error_monotone", inversions, 0, cfg.tol.allowed_inversions, res.survivors,
                              "inversions of the median error curve");
  if (noiseless) mono.pass = std::all_of(medians.begin(), medians.end(), [](double m) { return m < 1e-9; });
  res.verdicts.push_back(mono);
  if (!noiseless && n - 4 >= first) {
    const double ratio = medians[static_cast<std::size_t>(n - 4 - first)] / medians.back();
    res.aggregates.emplace_back("median_ratio_n_minus_4_over_n", ratio);
    res.verdicts.push_back(band_verdict("median_error_ratio", ratio, cfg.tol.rate_ratio_lo, cfg.tol.rate_ratio_hi,
                                        res.survivors, "median |err| at n-4 over n; m^2 = " +
                                                           std::to_string(std::pow(cfg.model.obs.mean(), 2))));
  }
  return res;
}

/// Rate n^-1 m^n |theta_hat_n - theta|^2 and the quadratic strong law.
inline ExperimentResult run_rate_and_qsl(const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.kind = cfg.kind == ExperimentKind::rate ? ExperimentKind::rate : ExperimentKind::qsl;
  check_launch(cfg, res);
  const int n = cfg.n;
  const int half = std::max(1, n / 2);
  const double m = cfg.model.obs.mean();
  const Vec4 theta = cfg.model.params.theta();
  const bool noiseless = cfg.model.noise.family() == NoiseFamily::zero;
  std::optional<TheoryBundle> theory;
  Mat4 weight = Mat4::Identity();
  double target = 0.0;
  if (!noiseless) {
    theory = theory_for(cfg.model, 4, cfg.asymptotic);
    weight = theory->limits.S * theory->limits.Sigma.inverse() * theory->limits.S;
    target = theory->limits.qsl_limit();
  }
  const int l0 = std::clamp(cfg.first_generation, 1, n);
  res.columns = {"survived", "rate_n", "rate_half", "qsl"};
  res.rows = parallel_map<std::vector<double>>(
      static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
        const auto rep = draw_replicate(cfg.model, n, cfg.seed, r);
        const auto traj = theta_trajectory(rep.lineage);
        auto rate = [&](int l) {
          const auto& e = traj[static_cast<std::size_t>(l - 1)].estimate;
          if (!e.ok()) return std::numeric_limits<double>::quiet_NaN();
          return std::pow(m, l) * (e.value - theta).squaredNorm() / l;
        };
        double acc = 0.0;
        int terms = 0;
        for (int l = l0; l <= n; ++l) {
          const auto& st = traj[static_cast<std::size_t>(l - 1)];
          if (!st.estimate.ok()) continue;
          const Vec4 e = st.estimate.value - theta;
          if (cfg.qsl_weight == QslWeight::limit || noiseless) {
            acc += static_cast<double>(st.mothers) * e.dot(weight * e);
          } else {
            const Vec4 me = st.S * e;
            const auto y = guarded_solve(st.Sigma, me);
            if (!y) continue;
            acc += me.dot(*y);
          }
          ++terms;
        }
        const double qsl = terms ? acc / terms : std::numeric_limits<double>::quiet_NaN();
        return std::vector<double>{survives(rep.tree) ? 1.0 : 0.0, rate(n), rate(half), qsl};
      });
  res.replicates = res.rows.size();
  std::vector<double> rn, rh, q;
  for (const auto& row : res.rows) {
    if (row[0] < 0.5) continue;
    ++res.survivors;
    if (std::isfinite(row[1])) rn.push_back(row[1]);
    if (std::isfinite(row[2])) rh.push_back(row[2]);
    if (std::isfinite(row[3])) q.push_back(row[3]);
  }
  res.verdicts.push_back(survival_verdict(cfg.model.obs, res.survivors, res.replicates, cfg.tol.survival_sigmas));
  if (res.inconclusive()) {
    res.warnings.emplace_back("all replicates extinct; rate and QSL inconclusive");
    return res;
  }
  const auto qs = mean_se(q);
  res.aggregates.emplace_back("qsl_mean", qs.mean);
  res.aggregates.emplace_back("qsl_se", qs.se);
  res.aggregates.emplace_back("qsl_target", target);
  res.aggregates.emplace_back("first_generation", l0);
  const double med_n = median(rn), med_h = median(rh);
  res.aggregates.emplace_back("median_rate_n", med_n);
  res.aggregates.emplace_back("median_rate_half", med_h);
  if (cfg.kind != ExperimentKind::qsl) {
    if (noiseless) {
      res.verdicts.push_back(band_verdict("rate_bounded", med_n, 0.0, 1e-12, rn.size(), "noiseless"));
    } else {
      res.verdicts.push_back(band_verdict("rate_bounded", med_n / med_h, 0.0, cfg.tol.rate_growth_max, rn.size(),
                                          "median n^-1 m^n |err|^2 at n over n/2"));
    }
  }
  if (cfg.kind != ExperimentKind::rate) {
    if (noiseless) {
      res.verdicts.push_back(band_verdict("qsl", qs.mean, -1e-12, 1e-12, q.size(), "noiseless: target 0"));
    } else {
      res.verdicts.push_back(band_verdict("qsl", qs.mean, (1 - cfg.tol.qsl_relative) * target,
                                          (1 + cfg.tol.qsl_relative) * target, q.size(),
                                          "Cesaro mean from generation " + std::to_string(l0) +
                                              " vs tr(Gamma Sigma^-1)"));
    }
  }
  return res;
}

/// Plug-in confidence interval coverage and normality of the standardised errors.
inline ExperimentResult run_coverage(const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.kind = cfg.kind == ExperimentKind::normality ? ExperimentKind::normality : ExperimentKind::coverage;
  check_launch(cfg, res);
  const Vec4 theta = cfg.model.params.theta();
  const auto& s2 = cfg.model.noise.second_moments();
  const Vec4 sigma(s2.sigma_eps2, s2.rho00, s2.rho11, s2.sigma_eta2);
  const Vec3 rho(s2.rho_eps, s2.rho(), s2.rho_eta);
  static const char* names[] = {"a", "b", "c", "d", "sigma_eps2", "rho00", "rho11", "sigma_eta2",
                                "rho_eps", "rho", "rho_eta"};
  const std::size_t targets = cfg.sigma_targets ? 11 : 4;
  res.columns.emplace_back("survived");
  for (std::size_t i = 0; i < targets; ++i) res.columns.push_back(std::string("cover_") + names[i]);
  for (std::size_t i = 0; i < targets; ++i) res.columns.push_back(std::string("z_") + names[i]);
  res.rows = parallel_map<std::vector<double>>(
      static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
        const auto rep = draw_replicate(cfg.model, cfg.n, cfg.seed, r);
        std::vector<double> row(1 + 2 * targets, std::numeric_limits<double>::quiet_NaN());
        row[0] = survives(rep.tree) ? 1.0 : 0.0;
        const auto est = estimate_all(rep.lineage);
        if (!est.theta.ok() || !est.sigma.ok()) return row;
        const auto inf = infer(rep.lineage, est, cfg.level);
        auto put = [&](std::size_t i, const Interval& iv, double truth) {
          row[1 + i] = (truth >= iv.lo && truth <= iv.hi) ? 1.0 : 0.0;
          row[1 + targets + i] = iv.se > 0 ? (iv.estimate - truth) / iv.se : std::numeric_limits<double>::quiet_NaN();
        };
        for (std::size_t i = 0; i < inf.theta.size() && i < 4; ++i) put(i, inf.theta[i], theta(static_cast<int>(i)));
        if (cfg.sigma_targets) {
          for (std::size_t i = 0; i < inf.sigma.size(); ++i) put(4 + i, inf.sigma[i], sigma(static_cast<int>(i)));
          for (std::size_t i = 0; i < inf.rho.size(); ++i) put(8 + i, inf.rho[i], rho(static_cast<int>(i)));
        }
        return row;
      });
  res.replicates = res.rows.size();
  for (const auto& row : res.rows) res.survivors += row[0] > 0.5 ? 1 : 0;
  res.verdicts.push_back(survival_verdict(cfg.model.obs, res.survivors, res.replicates, cfg.tol.survival_sigmas));
  if (res.inconclusive()) {
    res.warnings.emplace_back("all replicates extinct; coverage inconclusive");
    return res;
  }
  for (std::size_t i = 0; i < targets; ++i) {
    std::vector<double> cov, z;
    for (const auto& row : res.rows) {
      if (row[0] < 0.5) continue;
      if (std::isfinite(row[1 + i])) cov.push_back(row[1 + i]);
      if (std::isfinite(row[1 + targets + i])) z.push_back(row[1 + targets + i]);
    }
    const auto ms = mean_se(cov);
    const double ks = ks_statistic_normal(z);
    res.aggregates.emplace_back(std::string("coverage_") + names[i], ms.mean);
    res.aggregates.emplace_back(std::string("ks_") + names[i], ks);
    const double band = cfg.tol.coverage_sigmas * std::sqrt(cfg.level * (1 - cfg.level) / std::max<double>(1, cov.size()));
    const bool verdict_target = i <= 4;
    if (res.kind == ExperimentKind::coverage && verdict_target)
      res.verdicts.push_back(band_verdict(std::string("coverage_") + names[i], ms.mean, cfg.level - band,
                                          cfg.level + band, cov.size(),
                                          "nominal " + std::to_string(cfg.level) + " +- " +
                                              std::to_string(cfg.tol.coverage_sigmas) + " binomial SE"));
    if (res.kind == ExperimentKind::normality && i < 4) {
      const double crit = cfg.tol.ks_critical / std::sqrt(std::max<double>(1, z.size()));
      res.verdicts.push_back(band_verdict(std::string("ks_") + names[i], ks, 0.0, crit, z.size(),
                                          "Kolmogorov-Smirnov vs N(0,1) at the 1% level"));
    }
  }
  return res;
}

/// Bias of sigma_hat and rho_hat against their oracle versions built from the
/// true innovations, with residuals formed generation by generation.
inline ExperimentResult run_bias(const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.kind = ExperimentKind::bias;
  check_launch(cfg, res);
  const int n = cfg.n;
  const int l0 = std::clamp(cfg.first_generation, 1, n - 1);
  const bool noiseless = cfg.model.noise.family() == NoiseFamily::zero;
  BiasConstants theory;
  if (!noiseless) theory = bias_constants(theory_for(cfg.model, 4, cfg.asymptotic).limits, cfg.bias_form);
  res.columns = {"survived", "bs_sigma_eps2", "bs_rho00", "bs_rho11", "bs_sigma_eta2",
                 "br_rho_eps", "br_rho", "br_rho_eta"};
  res.rows = parallel_map<std::vector<double>>(
      static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
        const auto rep = draw_replicate(cfg.model, n, cfg.seed, r, true);
        std::vector<double> row(8, std::numeric_limits<double>::quiet_NaN());
        row[0] = survives(rep.tree) ? 1.0 : 0.0;
        const auto pred = predictable_residuals(rep.lineage, l0);
        auto oracle = true_innovations(rep.lineage, l0);
        for (std::size_t i = 0; i < oracle.usable.size(); ++i) oracle.usable[i] = pred.usable[i];
        // Mothers of generations l0..n-1, the ones entering U and the residual sums.
        std::size_t masked = 0;
        for (int g = l0; g <= n - 1; ++g) masked += rep.lineage.tree().generation(g).size();
        const double scale = static_cast<double>(masked) / static_cast<double>(n - l0);
        const auto sh = estimate_sigma(rep.lineage, pred);
        const auto so = estimate_sigma(rep.lineage, oracle);
        if (sh.ok() && so.ok())
          for (int i = 0; i < 4; ++i) row[static_cast<std::size_t>(1 + i)] = scale * (sh.value(i) - so.value(i));
        const auto rh = estimate_rho(rep.lineage, pred);
        const auto ro = estimate_rho(rep.lineage, oracle);
        if (rh.ok() && ro.ok())
          for (int i = 0; i < 3; ++i) row[static_cast<std::size_t>(5 + i)] = scale * (rh.value(i) - ro.value(i));
        return row;
      });
  res.replicates = res.rows.size();
  for (const auto& row : res.rows) res.survivors += row[0] > 0.5 ? 1 : 0;
  res.verdicts.push_back(survival_verdict(cfg.model.obs, res.survivors, res.replicates, cfg.tol.survival_sigmas));
  if (res.inconclusive()) {
    res.warnings.emplace_back("all replicates extinct; bias inconclusive");
    return res;
  }
  Eigen::Matrix<double, 7, 1> target;
  target << theory.sigma_bias, theory.rho_bias;
  res.aggregates.emplace_back("first_generation", l0);
  for (std::size_t c = 1; c < 8; ++c) {
    std::vector<double> v;
    for (const auto& row : res.rows)
      if (row[0] > 0.5 && std::isfinite(row[c])) v.push_back(row[c]);
    const auto ms = mean_se(v);
    const double t = target(static_cast<int>(c - 1));
    res.aggregates.emplace_back("mean_" + res.columns[c], ms.mean);
    res.aggregates.emplace_back("se_" + res.columns[c], ms.se);
    res.aggregates.emplace_back("theory_" + res.columns[c], t);
    if (v.size() < 2) {
      Verdict inc;
      inc.name = res.columns[c];
      inc.inconclusive = true;
      inc.sample_size = v.size();
      inc.detail = "too few usable replicates";
      res.verdicts.push_back(inc);
      continue;
    }
    const double half = noiseless ? 1e-12 : cfg.tol.bias_sigmas * ms.se;
    res.verdicts.push_back(band_verdict(res.columns[c], ms.mean, t - half, t + half, v.size(),
                                        "MC mean within " + std::to_string(cfg.tol.bias_sigmas) +
                                            " SE of the theory value"));
  }
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::consistency: return run_consistency(cfg);
    case ExperimentKind::rate:
    case ExperimentKind::qsl: return run_rate_and_qsl(cfg);
    case ExperimentKind::coverage:
    case ExperimentKind::normality: return run_coverage(cfg);
    case ExperimentKind::bias: return run_bias(cfg);
  }
  throw ValidationError("unknown experiment kind");
}

}  // namespace rbar
