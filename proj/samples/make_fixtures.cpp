// Regenerates the lineage fixtures under tests/data.
//
//   make_fixtures <output dir>
//
// synthetic_663.csv has the shape of a 9-generation E. coli lineage with 663
// observed cells; small_*.csv are trees with at most 31 cells.

#include "rbar/io.hpp"

#include <cstdio>
#include <iostream>

using namespace rbar;

namespace {

void save(const std::filesystem::path& dir, const std::string& name, const LineageTree& l) {
  write_files({{dir / name, lineage_csv(l)}});
  std::printf("%-22s %4zu cells, %d generations\n", name.c_str(), l.tree().size(), l.tree().max_generation());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <output dir>\n";
    return 1;
  }
  const std::filesystem::path dir = argv[1];

  NoiseSecondMoments ecoli;
  ecoli.sigma_eps2 = 4.0e-4;
  ecoli.sigma_eta2 = 0.2431;
  ecoli.rho_eps = 1.0e-4;
  const BarParams growth{0.0363, 0.0266, 0.0306, 0.1706, InitialLaw::point_mass(0.037)};
  const ObservationParams dense{.p0 = 0.05, .p1 = 0.05, .p01 = 0.9};
  for (std::uint64_t seed = 1;; ++seed) {
    const auto tree = sample_observation_tree(dense, 9, seed);
    if (tree.size() != 663 || tree.generation(9).empty()) continue;
    save(dir, "synthetic_663.csv", simulate(growth, NoiseModel::gaussian(ecoli), tree, seed));
    std::printf("  seed %llu\n", static_cast<unsigned long long>(seed));
    break;
  }

  NoiseSecondMoments ref;
  ref.sigma_eps2 = 0.25;
  ref.sigma_eta2 = 0.04;
  const auto noise = NoiseModel::gaussian(ref);
  const BarParams params{0.5, 0.5, 0.6, 0.4, InitialLaw::point_mass(1.0)};
  save(dir, "small_root.csv", simulate(params, noise, ObservationTree::full(0), 1));
  save(dir, "small_full4.csv", simulate(params, noise, ObservationTree::full(4), 2));
  const ObservationParams sparse{.p0 = 0.2, .p1 = 0.2, .p01 = 0.6};
  int written = 0;
  for (std::uint64_t seed = 10; written < 6; ++seed) {
    const auto tree = sample_observation_tree(sparse, 4, seed);
    if (tree.size() < 8 || tree.size() > 31 || tree.generation(4).empty()) continue;
    save(dir, "small_" + std::to_string(written++) + ".csv", simulate(params, noise, tree, seed));
  }
  return 0;
}
