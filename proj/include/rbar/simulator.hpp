#pragma once

// R-BAR recursion on an observation tree:
//   X_2k   = (b + eta_2k)   X_k + a + eps_2k
//   X_2k+1 = (d + eta_2k+1) X_k + c + eps_2k+1
// with one noise 4-vector drawn per mother and shared by her two daughters.

#include "rbar/genealogy.hpp"
#include "rbar/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rbar {

/// Law of the root value X_1.
struct InitialLaw {
  enum class Kind { point, normal };
  Kind kind = Kind::point;
  double mean = 0.0;
  double variance = 0.0;

  static InitialLaw point_mass(double x) { return {Kind::point, x, 0.0}; }
  static InitialLaw gaussian(double mean, double variance) { return {Kind::normal, mean, variance}; }

  void validate() const {
    if (!std::isfinite(mean) || !std::isfinite(variance) || variance < 0.0)
      throw ValidationError("initial law needs a finite mean and a non-negative variance");
  }

  [[nodiscard]] double sample(std::uint64_t seed) const {
    if (kind == Kind::point) return mean;
    CounterRng rng(seed, Stream::initial_value, 0);
    std::normal_distribution<double> normal(mean, std::sqrt(variance));
    return normal(rng);
  }
};

struct BarParams {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  InitialLaw x1 = InitialLaw::point_mass(0.0);

  [[nodiscard]] Vec4 theta() const { return {a, b, c, d}; }

  static BarParams from_theta(const Vec4& t, InitialLaw x1 = InitialLaw::point_mass(0.0)) {
    return {t(0), t(1), t(2), t(3), x1};
  }

  void validate() const {
    for (double v : {a, b, c, d})
      if (!std::isfinite(v)) throw ValidationError("autoregression coefficients must be finite");
    x1.validate();
  }
};

/// Realised noise attached to one observed daughter.
struct CellNoise {
  double eps = 0.0;
  double eta = 0.0;
};

/// Observed cell values, aligned with tree.observed().
class LineageTree {
 public:
  LineageTree(ObservationTree tree, std::vector<double> values,
              std::optional<std::vector<CellNoise>> truth = std::nullopt)
      : tree_(std::move(tree)), values_(std::move(values)), truth_(std::move(truth)) {
    if (values_.size() != tree_.size())
      throw ValidationError("lineage has " + std::to_string(values_.size()) + " values for " +
                            std::to_string(tree_.size()) + " observed cells");
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i]))
        throw ValidationError("non-finite value for cell " + std::to_string(tree_.observed()[i]));
    if (truth_ && truth_->size() != tree_.size())
      throw ValidationError("truth side-channel size does not match the tree");
  }

  /// Builds a lineage from (index, value) pairs in any order.
  static LineageTree from_records(std::vector<std::pair<CellIndex, double>> records) {
    if (records.empty()) throw ValidationError("lineage is empty");
    std::sort(records.begin(), records.end());
    for (std::size_t i = 1; i < records.size(); ++i)
      if (records[i].first == records[i - 1].first)
        throw ValidationError("cell " + std::to_string(records[i].first) + " listed twice");
    std::vector<CellIndex> idx;
    std::vector<double> vals;
    idx.reserve(records.size());
    vals.reserve(records.size());
    int max_gen = 0;
    for (const auto& [k, v] : records) {
      if (k == 0) throw ValidationError("cell index 0 is not a valid heap label");
      idx.push_back(k);
      vals.push_back(v);
      max_gen = std::max(max_gen, generation_of(k));
    }
    auto tree = ObservationTree::from_indices(std::move(idx), max_gen);
    return LineageTree(std::move(tree), std::move(vals));
  }

  [[nodiscard]] const ObservationTree& tree() const noexcept { return tree_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] double value_at(std::size_t pos) const { return values_.at(pos); }
  [[nodiscard]] double value(CellIndex k) const {
    const auto pos = tree_.position(k);
    if (pos == ObservationTree::npos) throw ValidationError("cell " + std::to_string(k) + " is not observed");
    return values_[pos];
  }
  [[nodiscard]] bool has_truth() const noexcept { return truth_.has_value(); }
  /// Realised (eps, eta) of each observed cell; the root entry is zero.
  [[nodiscard]] std::span<const CellNoise> truth() const {
    if (!truth_) throw ValidationError("lineage carries no truth side-channel");
    return *truth_;
  }

  /// Restriction to generations 0..g.
  [[nodiscard]] LineageTree truncated(int g) const {
    auto sub = tree_.truncated(g);
    std::vector<double> vals(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(sub.size()));
    std::optional<std::vector<CellNoise>> tr;
    if (truth_) tr.emplace(truth_->begin(), truth_->begin() + static_cast<std::ptrdiff_t>(sub.size()));
    return LineageTree(std::move(sub), std::move(vals), std::move(tr));
  }

 private:
  ObservationTree tree_;
  std::vector<double> values_;
  std::optional<std::vector<CellNoise>> truth_;
};

/// Noise 4-vector of mother k: a pure function of (seed, k).
inline Vec4 mother_noise(const NoiseModel& noise, std::uint64_t seed, CellIndex k) {
  CounterRng rng(seed, Stream::noise, k);
  return noise.sample(rng);
}

inline LineageTree simulate(const BarParams& params, const NoiseModel& noise,
                            const ObservationTree& tree, std::uint64_t seed,
                            bool keep_truth = false) {
  params.validate();
  const auto cells = tree.observed();
  std::vector<double> x(cells.size(), 0.0);
  std::vector<CellNoise> truth;
  if (keep_truth) truth.assign(cells.size(), CellNoise{});
  x[0] = params.x1.sample(seed);

  // Cells are sorted, so daughters always follow their mother.
  std::size_t next = 1;
  for (std::size_t pos = 0; pos < cells.size() && next < cells.size(); ++pos) {
    const CellIndex k = cells[pos];
    const bool has_even = next < cells.size() && cells[next] == even_daughter(k);
    const std::size_t even_pos = has_even ? next : ObservationTree::npos;
    const std::size_t after_even = has_even ? next + 1 : next;
    const bool has_odd = after_even < cells.size() && cells[after_even] == odd_daughter(k);
    const std::size_t odd_pos = has_odd ? after_even : ObservationTree::npos;
    if (!has_even && !has_odd) continue;
    const Vec4 z = mother_noise(noise, seed, k);
    if (has_even) {
      x[even_pos] = (params.b + z(eta_even)) * x[pos] + params.a + z(eps_even);
      if (keep_truth) truth[even_pos] = {z(eps_even), z(eta_even)};
    }
    if (has_odd) {
      x[odd_pos] = (params.d + z(eta_odd)) * x[pos] + params.c + z(eps_odd);
      if (keep_truth) truth[odd_pos] = {z(eps_odd), z(eta_odd)};
    }
    next = has_odd ? odd_pos + 1 : even_pos + 1;
  }
  std::optional<std::vector<CellNoise>> tr;
  if (keep_truth) tr = std::move(truth);
  return LineageTree(tree, std::move(x), std::move(tr));
}

/// Simulation on the complete binary tree up to generation n.
inline LineageTree simulate_full(const BarParams& params, const NoiseModel& noise, int n,
                                 std::uint64_t seed, bool keep_truth = false) {
  return simulate(params, noise, ObservationTree::full(n), seed, keep_truth);
}

/// E[(b + eta_2)^p] from the moment table.
inline double slope_moment(const NoiseModel& noise, double slope, int slot, int p) {
  double acc = 0.0;
  double binom = 1.0;
  for (int j = 0; j <= p; ++j) {
    MomentIndex idx{0, 0, 0, 0};
    idx[static_cast<std::size_t>(slot)] = j;
    const double mj = (j == 0) ? 1.0 : noise.moment(idx);
    acc += binom * std::pow(slope, p - j) * mj;
    binom = binom * (p - j) / (j + 1);
  }
  return acc;
}

/// m0 E[(b + eta_2)^(4 kappa)] + m1 E[(d + eta_3)^(4 kappa)]; stable when < 1.
inline double stability_margin(const BarParams& params, const NoiseModel& noise,
                               const ObservationParams& obs, int kappa) {
  if (kappa < 1) throw ValidationError("stability_margin: kappa must be >= 1");
  const int order = 4 * kappa;
  if (order > noise.budget().max_order)
    throw MomentBudgetError("stability_margin needs noise moments of order " + std::to_string(order) +
                            " but the " + to_string(noise.family()) + " family only has order " +
                            std::to_string(noise.budget().max_order));
  return obs.m0() * slope_moment(noise, params.b, eta_even, order) +
         obs.m1() * slope_moment(noise, params.d, eta_odd, order);
}

}  // namespace rbar
