#pragma once

// Binary-heap genealogy and the Galton-Watson observation process.
//
// Cells are labelled as in a binary heap: the root is 1 and the daughters of
// cell k are 2k (even, "type 0") and 2k+1 (odd, "type 1"). Generation n holds
// the labels 2^n .. 2^(n+1)-1. A cell is observed only if its mother is, so the
// observed set is closed under k -> k/2.

#include "rbar/linalg.hpp"
#include "rbar/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rbar {

using CellIndex = std::uint64_t;

/// Largest generation representable with 64-bit heap labels.
inline constexpr int max_supported_generation = 62;

inline int generation_of(CellIndex k) {
  if (k == 0) throw ValidationError("generation_of: cell index must be >= 1");
  return std::bit_width(k) - 1;
}

inline constexpr CellIndex mother_of(CellIndex k) noexcept { return k / 2; }
inline constexpr CellIndex even_daughter(CellIndex k) noexcept { return 2 * k; }
inline constexpr CellIndex odd_daughter(CellIndex k) noexcept { return 2 * k + 1; }
/// 0 for an even (old-pole) daughter, 1 for an odd one.
inline constexpr int daughter_type(CellIndex k) noexcept { return static_cast<int>(k & 1U); }

/// Offspring law of the observation process: a kept cell keeps both daughters
/// with probability p01, only the even one with p0, only the odd one with p1.
struct ObservationParams {
  double p0 = 0.0;
  double p1 = 0.0;
  double p01 = 1.0;

  void validate() const {
    auto bad = [](double p) { return !std::isfinite(p) || p < 0.0 || p > 1.0; };
    if (bad(p0) || bad(p1) || bad(p01))
      throw ValidationError("observation probabilities must lie in [0, 1]");
    if (p0 + p1 + p01 > 1.0 + 1e-12)
      throw ValidationError("observation probabilities must satisfy p0 + p1 + p01 <= 1 (got " +
                            std::to_string(p0 + p1 + p01) + ")");
  }

  /// Probability that a kept cell has no daughter observed.
  [[nodiscard]] double p_none() const { return std::max(0.0, 1.0 - p0 - p1 - p01); }
  /// Mean number of observed daughters.
  [[nodiscard]] double mean() const { return 2.0 * p01 + p0 + p1; }
  /// Share of observed daughters that are of type 0.
  [[nodiscard]] double m0() const { return (p01 + p0) / mean(); }
  [[nodiscard]] double m1() const { return (p01 + p1) / mean(); }
  [[nodiscard]] bool supercritical() const { return mean() > 1.0; }

  /// Smallest fixed point in [0, 1] of s = p_none + (p0 + p1) s + p01 s^2.
  [[nodiscard]] double extinction_probability() const {
    if (!supercritical()) return 1.0;
    const double r = p_none();
    const double lin = 1.0 - p0 - p1;
    if (p01 <= 0.0) return lin > 0.0 ? std::min(1.0, r / lin) : 0.0;
    const double disc = std::max(0.0, lin * lin - 4.0 * p01 * r);
    // Numerically stable smaller root of p01 s^2 - lin s + r = 0.
    const double big = (lin + std::sqrt(disc)) / 2.0;
    return big > 0.0 ? std::min(1.0, r / big) : 0.0;
  }
};

/// Immutable set of observed cell labels up to a horizon generation.
class ObservationTree {
 public:
  /// Validates root presence, the horizon and upward closure.
  static ObservationTree from_indices(std::vector<CellIndex> indices, int max_generation) {
    if (max_generation < 0 || max_generation > max_supported_generation)
      throw ValidationError("max_generation out of range: " + std::to_string(max_generation));
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    if (indices.empty() || indices.front() != 1)
      throw ValidationError("observation tree must contain the root cell 1");
    for (CellIndex k : indices) {
      if (generation_of(k) > max_generation)
        throw ValidationError("cell " + std::to_string(k) + " lies beyond generation " +
                              std::to_string(max_generation));
      if (k > 1 && !std::binary_search(indices.begin(), indices.end(), mother_of(k)))
        throw ValidationError("cell " + std::to_string(k) + " is observed but its mother " +
                              std::to_string(mother_of(k)) +
                              " is not (observed set must be closed upward)");
    }
    return ObservationTree(std::move(indices), max_generation);
  }

  static ObservationTree full(int max_generation) {
    if (max_generation < 0 || max_generation > 30)
      throw ValidationError("full tree supported up to generation 30");
    std::vector<CellIndex> all((CellIndex{1} << (max_generation + 1)) - 1);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i + 1;
    return ObservationTree(std::move(all), max_generation);
  }

  [[nodiscard]] int max_generation() const noexcept { return max_generation_; }
  /// Observed labels in increasing order (mothers always precede daughters).
  [[nodiscard]] std::span<const CellIndex> observed() const noexcept { return observed_; }
  [[nodiscard]] std::size_t size() const noexcept { return observed_.size(); }
  [[nodiscard]] bool contains(CellIndex k) const {
    return std::binary_search(observed_.begin(), observed_.end(), k);
  }
  /// delta_k as an integer.
  [[nodiscard]] int delta(CellIndex k) const { return contains(k) ? 1 : 0; }

  /// Position of k in observed(), or npos.
  [[nodiscard]] std::size_t position(CellIndex k) const {
    auto it = std::lower_bound(observed_.begin(), observed_.end(), k);
    return (it != observed_.end() && *it == k) ? static_cast<std::size_t>(it - observed_.begin())
                                               : npos;
  }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  /// Observed cells of generation g as a contiguous sub-range of observed().
  [[nodiscard]] std::span<const CellIndex> generation(int g) const {
    if (g < 0 || g > max_generation_) return {};
    const CellIndex lo = CellIndex{1} << g;
    auto first = std::lower_bound(observed_.begin(), observed_.end(), lo);
    auto last = std::lower_bound(first, observed_.end(), lo << 1);
    return {observed_.data() + (first - observed_.begin()), static_cast<std::size_t>(last - first)};
  }

  /// The sub-tree of generations 0..g.
  [[nodiscard]] ObservationTree truncated(int g) const {
    g = std::clamp(g, 0, max_generation_);
    const CellIndex hi = CellIndex{1} << (g + 1);
    std::vector<CellIndex> keep(observed_.begin(),
                                std::lower_bound(observed_.begin(), observed_.end(), hi));
    return ObservationTree(std::move(keep), g);
  }

  friend bool operator==(const ObservationTree&, const ObservationTree&) = default;

 private:
  ObservationTree(std::vector<CellIndex> observed, int max_generation)
      : observed_(std::move(observed)), max_generation_(max_generation) {}

  std::vector<CellIndex> observed_;
  int max_generation_ = 0;
};

/// Offspring pattern of one kept cell.
struct OffspringDraw {
  bool even = false;
  bool odd = false;
};

/// The (xi0, xi1) draw of cell k: a pure function of (seed, k).
inline OffspringDraw draw_offspring(const ObservationParams& params, std::uint64_t seed,
                                    CellIndex k) {
  CounterRng rng(seed, Stream::observation, k);
  const double u = rng.uniform();
  if (u < params.p01) return {true, true};
  if (u < params.p01 + params.p0) return {true, false};
  if (u < params.p01 + params.p0 + params.p1) return {false, true};
  return {false, false};
}

inline ObservationTree sample_observation_tree(const ObservationParams& params, int n_max,
                                               std::uint64_t seed) {
  params.validate();
  if (n_max < 0 || n_max > max_supported_generation)
    throw ValidationError("n_max out of range: " + std::to_string(n_max));
  std::vector<CellIndex> observed{1};
  std::vector<CellIndex> current{1};
  std::vector<CellIndex> next;
  for (int g = 0; g < n_max && !current.empty(); ++g) {
    next.clear();
    for (CellIndex k : current) {
      const auto draw = draw_offspring(params, seed, k);
      if (draw.even) next.push_back(even_daughter(k));
      if (draw.odd) next.push_back(odd_daughter(k));
    }
    observed.insert(observed.end(), next.begin(), next.end());
    std::swap(current, next);
  }
  return ObservationTree::from_indices(std::move(observed), n_max);
}

struct GenerationCounts {
  std::vector<std::size_t> per_generation;  // |G_l*| for l = 0..n
  std::size_t total = 0;                    // |T_n*|

  /// |T_l*| for l <= n.
  [[nodiscard]] std::size_t cumulative(int l) const {
    std::size_t s = 0;
    for (int i = 0; i <= l && i < static_cast<int>(per_generation.size()); ++i)
      s += per_generation[static_cast<std::size_t>(i)];
    return s;
  }
};

inline GenerationCounts generation_counts(const ObservationTree& tree) {
  GenerationCounts out;
  out.per_generation.assign(static_cast<std::size_t>(tree.max_generation()) + 1, 0);
  for (CellIndex k : tree.observed()) ++out.per_generation[static_cast<std::size_t>(generation_of(k))];
  for (auto c : out.per_generation) out.total += c;
  return out;
}

/// |G_n*| / m^n at the tree horizon n.
inline double w_estimate(const ObservationTree& tree, const ObservationParams& params) {
  if (!params.supercritical())
    throw ValidationError("w_estimate requires a supercritical observation law (m > 1)");
  const int n = tree.max_generation();
  const auto last = tree.generation(n).size();
  return static_cast<double>(last) / std::pow(params.mean(), n);
}

/// True when the horizon generation still has an observed cell.
inline bool survives(const ObservationTree& tree) {
  return !tree.generation(tree.max_generation()).empty();
}

}  // namespace rbar
