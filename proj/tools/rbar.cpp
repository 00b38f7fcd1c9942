// rbar: simulate, estimate, asymptotics and experiment front end.

#include "rbar/config.hpp"
#include "rbar/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rbar;

namespace {

enum Exit { exit_ok = 0, exit_usage = 1, exit_validation = 2, exit_fail = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> level;
  bool allow_unstable = false;
  bool literal_typos = false;
  std::string lineage;
};

RunConfig load(const Options& o) {
  RunConfig c = o.config.empty() ? parse_run_config("{}") : read_run_config(o.config);
  if (o.seed) c.seed = c.experiment.seed = *o.seed;
  if (o.level) {
    if (!(*o.level > 0.0 && *o.level < 1.0)) throw ValidationError("--level must lie in (0, 1)");
    c.level = c.experiment.level = *o.level;
  }
  if (o.allow_unstable) c.experiment.allow_unstable = true;
  if (o.literal_typos) c.experiment.asymptotic.literal_paper_typos = true;
  return c;
}

fs::path out_path(const Options& o, const std::string& name) {
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  if (!fs::is_directory(dir)) throw ValidationError("output directory " + dir.string() + " does not exist");
  return dir / name;
}

json vec(const auto& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat(const auto& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

json intervals(const std::vector<Interval>& v, const std::vector<std::string>& names) {
  json o = json::object();
  for (std::size_t i = 0; i < v.size() && i < names.size(); ++i)
    o[names[i]] = {{"estimate", v[i].estimate}, {"se", v[i].se}, {"lo", v[i].lo}, {"hi", v[i].hi}};
  return o;
}

void csv_block(std::ostream& os, const std::string& label, const auto& m) {
  os << "# " << label << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << detail::format_real(m(i, j));
    os << "\n";
  }
  os << "\n";
}

int cmd_simulate(const Options& o) {
  const auto c = load(o);
  ExperimentConfig launch = c.experiment;
  launch.n = std::max(2, c.generations);
  ExperimentResult scratch;
  check_launch(launch, scratch);
  const auto tree = sample_observation_tree(c.model.obs, c.generations, c.seed);
  const auto lineage = simulate(c.model.params, c.model.noise, tree, c.seed, c.write_truth);
  std::vector<std::pair<fs::path, std::string>> files{{out_path(o, "lineage.csv"), lineage_csv(lineage)}};
  if (c.write_truth) files.emplace_back(out_path(o, "truth.csv"), truth_csv(lineage));
  write_files(files);
  for (const auto& w : scratch.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << lineage.tree().size() << " cells over " << c.generations << " generations to "
            << files.front().first.string() << "\n";
  return exit_ok;
}

int cmd_estimate(const Options& o) {
  const auto c = load(o);
  const std::string path = !o.lineage.empty() ? o.lineage : c.lineage_path.value_or("");
  if (path.empty()) throw ValidationError("estimate needs a lineage file (positional argument or estimate.input)");
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  const auto lineage = parse_lineage_csv(in, path);
  const auto est = estimate_all(lineage);
  const auto inf = infer(lineage, est, c.level);

  json r;
  r["input"] = {{"path", path}, {"fnv1a64", hex64(fnv1a64(bytes))}, {"cells", lineage.tree().size()},
                {"generations", lineage.tree().max_generation()}};
  const auto& d = est.design;
  r["design"] = {{"mothers", d.mothers},
                 {"even_children", d.even_children},
                 {"odd_children", d.odd_children},
                 {"pairs", d.pairs},
                 {"S", mat(d.S())},
                 {"U", mat(d.U)},
                 {"V", mat(d.V)}};
  r["theta"] = {{"status", to_string(est.theta.status)}, {"names", {"a", "b", "c", "d"}}, {"value", vec(est.theta.value)}};
  r["sigma"] = {{"status", to_string(est.sigma.status)},
                {"names", {"sigma_eps2", "rho00", "rho11", "sigma_eta2"}},
                {"value", vec(est.sigma.value)},
                {"out_of_cone", est.sigma.out_of_cone}};
  r["rho"] = {{"status", to_string(est.rho.status)}, {"names", {"rho_eps", "rho", "rho_eta"}}, {"value", vec(est.rho.value)}};
  json inference;
  inference["level"] = inf.level;
  inference["theta"] = intervals(inf.theta, {"a", "b", "c", "d"});
  inference["sigma"] = intervals(inf.sigma, {"sigma_eps2", "rho00", "rho11", "sigma_eta2"});
  inference["sigma_bias_corrected"] = intervals(inf.sigma_bias_corrected, {"sigma_eps2", "rho00", "rho11", "sigma_eta2"});
  inference["rho"] = intervals(inf.rho, {"rho_eps", "rho", "rho_eta"});
  if (inf.sigma_predictable) {
    inference["sigma_predictable"] = vec(*inf.sigma_predictable);
    inference["sigma_bias"] = vec(inf.sigma_bias);
  }
  if (inf.cov_theta) inference["cov_theta"] = mat(*inf.cov_theta);
  if (inf.sigma_eps2_positive)
    inference["wald_sigma_eps2_positive"] = {{"z", inf.sigma_eps2_positive->statistic},
                                             {"p_value", inf.sigma_eps2_positive->p_value}};
  if (inf.sigma_eta2_positive)
    inference["wald_sigma_eta2_positive"] = {{"z", inf.sigma_eta2_positive->statistic},
                                             {"p_value", inf.sigma_eta2_positive->p_value}};
  inference["warnings"] = inf.warnings;
  r["inference"] = inference;

  const std::string text = r.dump(2) + "\n";
  if (!o.out.empty()) write_files({{out_path(o, "estimate.json"), text}});
  std::cout << text;
  return exit_ok;
}

int cmd_asymptotics(const Options& o) {
  const auto c = load(o);
  if (c.model.noise.family() == NoiseFamily::zero) throw ValidationError("asymptotics needs a non-degenerate noise family");
  const auto& e = c.experiment;
  ExperimentResult scratch;
  ExperimentConfig launch = e;
  launch.kind = ExperimentKind::bias;
  check_launch(launch, scratch);
  const auto t = theory_for(c.model, 8, e.asymptotic);
  const auto& lm = t.limits;
  std::ostringstream os;
  Eigen::VectorXd sm(t.sm.max_order() + 1);
  for (int q = 0; q <= t.sm.max_order(); ++q) sm(q) = t.sm[q];
  csv_block(os, "stationary_moments E[Y^q], q = 0.." + std::to_string(t.sm.max_order()), sm.transpose());
  std::vector<double> margins;
  for (int k = 1; 4 * k <= std::min(32, c.model.noise.budget().max_order); ++k)
    margins.push_back(stability_margin(c.model.params, c.model.noise, c.model.obs, k));
  csv_block(os, "stability_margin kappa = 1.." + std::to_string(margins.size()),
            Eigen::Map<const Eigen::RowVectorXd>(margins.data(), static_cast<Eigen::Index>(margins.size())));
  csv_block(os, "S", lm.S);
  csv_block(os, "Sigma", lm.Sigma);
  csv_block(os, "Gamma", lm.Gamma);
  csv_block(os, "U", lm.U);
  csv_block(os, "V", lm.V);
  if (lm.GammaSigma) csv_block(os, "Gamma_sigma", *lm.GammaSigma);
  if (lm.GammaRho) csv_block(os, "Gamma_rho", *lm.GammaRho);
  csv_block(os, "theta_covariance S^-1 Gamma S^-1", lm.theta_covariance());
  Eigen::Matrix<double, 1, 1> qsl;
  qsl << lm.qsl_limit();
  csv_block(os, "qsl_limit tr(Gamma Sigma^-1)", qsl);
  const auto bias = bias_constants(lm, e.bias_form);
  csv_block(os, std::string("sigma_bias (") + (e.bias_form == BiasForm::sandwich ? "sandwich" : "printed") + ")",
            bias.sigma_bias.transpose());
  csv_block(os, "rho_bias", bias.rho_bias.transpose());
  for (const auto& w : scratch.warnings) std::cerr << "warning: " << w << "\n";
  if (!o.out.empty()) write_files({{out_path(o, "asymptotics.csv"), os.str()}});
  std::cout << os.str();
  return exit_ok;
}

int cmd_experiment(const Options& o) {
  const auto c = load(o);
  if (!o.out.empty()) out_path(o, "x");
  const auto res = run_experiment(c.experiment);
  const std::string stem = to_string(res.kind);
  if (!o.out.empty())
    write_files({{out_path(o, stem + "_replicates.csv"), experiment_rows_csv(res)},
                 {out_path(o, stem + "_verdicts.csv"), experiment_verdicts_csv(res)},
                 {out_path(o, stem + "_aggregates.csv"), experiment_aggregates_csv(res)}});
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << experiment_aggregates_csv(res) << "\n" << experiment_verdicts_csv(res);
  if (res.inconclusive()) {
    std::cout << "INCONCLUSIVE\n";
    return exit_fail;
  }
  std::cout << (res.passed() ? "PASS" : "FAIL") << "\n";
  return res.passed() ? exit_ok : exit_fail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"R-BAR processes on Galton-Watson trees: simulation, estimation and limit theory"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--seed", o.seed, "master seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--level", o.level, "confidence level");
    sub->add_flag("--allow-unstable", o.allow_unstable, "run even when the stability margin is not below 1");
    sub->add_flag("--literal-paper-typos", o.literal_typos, "use theta(2,0,2,0) for the X^4 term of C");
  };
  auto* sim = app.add_subcommand("simulate", "simulate a lineage and write lineage.csv");
  auto* est = app.add_subcommand("estimate", "estimate theta, sigma and rho from a lineage file");
  auto* asy = app.add_subcommand("asymptotics", "print limit matrices and bias constants");
  auto* exp = app.add_subcommand("experiment", "run a Monte Carlo experiment");
  for (auto* s : {sim, est, asy, exp}) common(s);
  est->add_option("lineage", o.lineage, "lineage CSV with header index,value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }
  try {
    if (*sim) return cmd_simulate(o);
    if (*est) return cmd_estimate(o);
    if (*asy) return cmd_asymptotics(o);
    if (*exp) return cmd_experiment(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_validation;
  }
  return exit_usage;
}
