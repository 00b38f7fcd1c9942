#pragma once

// Run configuration: a JSON object whose keys are dotted module paths
// ("model.a", "noise.sigma_eps2", ...). Nested objects are flattened first,
// so {"model": {"a": 0.5}} and {"model.a": 0.5} are equivalent.

#include "rbar/harness.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace rbar {

struct RunConfig {
  ModelSpec model{BarParams{}, NoiseModel::zero(), ObservationParams{.p0 = 0.0, .p1 = 0.0, .p01 = 1.0}};
  std::uint64_t seed = 1;
  int generations = 10;
  bool write_truth = false;
  ExperimentConfig experiment;
  double level = 0.95;
  std::optional<std::string> lineage_path;
};

namespace detail {

using json = nlohmann::json;

inline void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  if (out.count(prefix)) throw ValidationError("config key '" + prefix + "' given twice");
  out[prefix] = j;
}

class KeyReader {
 public:
  explicit KeyReader(std::map<std::string, json> kv) : kv_(std::move(kv)) {}

  double real(const std::string& key, double fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ValidationError("config key '" + key + "' must be a number");
    return v->get<double>();
  }
  long long integer(const std::string& key, long long fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (!v->is_number_integer() && !v->is_number_unsigned())
      throw ValidationError("config key '" + key + "' must be an integer");
    return v->get<long long>();
  }
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned()) throw ValidationError("config key '" + key + "' must be a non-negative integer");
    return v->get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ValidationError("config key '" + key + "' must be true or false");
    return v->get<bool>();
  }
  std::optional<std::string> text(const std::string& key) {
    const auto* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) throw ValidationError("config key '" + key + "' must be a string");
    return v->get<std::string>();
  }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  void reject_unknown() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) throw ValidationError("unknown config key '" + k + "'");
  }

 private:
  const json* take(const std::string& key) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  std::map<std::string, json> kv_;
  std::set<std::string> used_;
};

inline int checked_int(long long v, long long lo, long long hi, const std::string& key) {
  if (v < lo || v > hi)
    throw ValidationError("config key '" + key + "' must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses and validates; nothing downstream runs on an invalid config.
inline RunConfig parse_run_config(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  std::map<std::string, detail::json> kv;
  detail::flatten(j, "", kv);
  detail::KeyReader r(std::move(kv));

  RunConfig c;
  BarParams p;
  p.a = r.real("model.a", 0.0);
  p.b = r.real("model.b", 0.0);
  p.c = r.real("model.c", 0.0);
  p.d = r.real("model.d", 0.0);
  const double x1_mean = r.real("model.x1_mean", 0.0);
  const double x1_var = r.real("model.x1_variance", 0.0);
  p.x1 = x1_var > 0.0 ? InitialLaw::gaussian(x1_mean, x1_var) : InitialLaw::point_mass(x1_mean);
  if (x1_var < 0.0) throw ValidationError("model.x1_variance must be >= 0");
  p.validate();

  ObservationParams obs;
  obs.p0 = r.real("observation.p0", 0.0);
  obs.p1 = r.real("observation.p1", 0.0);
  obs.p01 = r.real("observation.p01", 1.0);
  obs.validate();

  const std::string family = r.text("noise.family").value_or("gaussian");
  NoiseSecondMoments s;
  s.sigma_eps2 = r.real("noise.sigma_eps2", 1.0);
  s.sigma_eta2 = r.real("noise.sigma_eta2", 1.0);
  s.rho_eps = r.real("noise.rho_eps", 0.0);
  s.rho_eta = r.real("noise.rho_eta", 0.0);
  s.rho00 = r.real("noise.rho00", 0.0);
  s.rho01 = r.real("noise.rho01", 0.0);
  s.rho10 = r.real("noise.rho10", 0.0);
  s.rho11 = r.real("noise.rho11", 0.0);
  const double dof = r.real("noise.dof", 30.0);
  NoiseModel noise = NoiseModel::zero();
  if (family == "gaussian") {
    noise = NoiseModel::gaussian(s);
  } else if (family == "student") {
    noise = NoiseModel::scaled_student(s, dof);
  } else if (family == "zero") {
    for (const char* k : {"noise.sigma_eps2", "noise.sigma_eta2", "noise.dof"})
      if (r.has(k)) throw ValidationError(std::string("config key '") + k + "' conflicts with noise.family = zero");
  } else {
    throw ValidationError("noise.family must be gaussian, student or zero, got '" + family + "'");
  }
  c.model = ModelSpec{p, noise, obs};

  c.seed = r.unsigned_integer("seed", 1);
  c.generations = detail::checked_int(r.integer("simulation.generations", 10), 0, max_supported_generation,
                                      "simulation.generations");
  c.write_truth = r.boolean("simulation.truth", false);
  c.level = r.real("inference.level", 0.95);
  if (!(c.level > 0.0 && c.level < 1.0)) throw ValidationError("inference.level must lie in (0, 1)");
  c.lineage_path = r.text("estimate.input");

  auto& e = c.experiment;
  e.model = c.model;
  e.kind = parse_experiment_kind(r.text("experiment.kind").value_or("consistency"));
  e.n = detail::checked_int(r.integer("experiment.n", 12), 2, max_supported_generation, "experiment.n");
  e.replicates = detail::checked_int(r.integer("experiment.replicates", 100), 1, 10'000'000, "experiment.replicates");
  e.first_generation =
      detail::checked_int(r.integer("experiment.first_generation", 1), 1, e.n, "experiment.first_generation");
  e.threads = detail::checked_int(r.integer("experiment.threads", 0), 0, 1024, "experiment.threads");
  e.level = r.real("experiment.level", c.level);
  if (!(e.level > 0.0 && e.level < 1.0)) throw ValidationError("experiment.level must lie in (0, 1)");
  e.sigma_targets = r.boolean("experiment.sigma_targets", false);
  const auto bias_form = r.text("experiment.bias_form").value_or("sandwich");
  if (bias_form == "sandwich") e.bias_form = BiasForm::sandwich;
  else if (bias_form == "printed") e.bias_form = BiasForm::printed;
  else throw ValidationError("experiment.bias_form must be sandwich or printed");
  const auto qsl = r.text("experiment.qsl_weight").value_or("empirical");
  if (qsl == "empirical") e.qsl_weight = QslWeight::empirical;
  else if (qsl == "limit") e.qsl_weight = QslWeight::limit;
  else throw ValidationError("experiment.qsl_weight must be empirical or limit");
  e.asymptotic.literal_paper_typos = r.boolean("asymptotics.literal_paper_typos", false);
  e.allow_unstable = r.boolean("experiment.allow_unstable", false);
  e.seed = c.seed;
  r.reject_unknown();
  return c;
}

inline RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

}  // namespace rbar
