#pragma once

// Independent reference computations used by the tests. Nothing here calls
// the library's estimators or moment code; only plain arrays, std::map and
// <random> are used.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

namespace oracle {

using Cells = std::map<std::uint64_t, double>;
template <std::size_t N>
using Matrix = std::array<std::array<double, N>, N>;

inline int generation(std::uint64_t k) {
  int g = -1;
  while (k) {
    k >>= 1;
    ++g;
  }
  return g;
}

/// Gaussian elimination with partial pivoting; false when a pivot vanishes.
template <std::size_t N>
bool solve(Matrix<N> a, std::array<double, N> b, std::array<double, N>& x) {
  double scale = 0.0;
  for (const auto& row : a)
    for (double v : row) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return false;
  for (std::size_t c = 0; c < N; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < N; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    if (std::abs(a[p][c]) <= 1e-13 * scale) return false;
    std::swap(a[p], a[c]);
    std::swap(b[p], b[c]);
    for (std::size_t r = c + 1; r < N; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j < N; ++j) a[r][j] -= f * a[c][j];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t i = N; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < N; ++j) s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return true;
}

/// Least-squares fits written directly from the normal equations, one
/// observed cell at a time.
struct NaiveFit {
  int horizon = 0;
  std::size_t mothers = 0;
  Matrix<2> S0{}, S1{};
  Matrix<4> U{};
  Matrix<3> V{};
  bool theta_ok = false, sigma_ok = false, rho_ok = false;
  std::array<double, 4> theta{}, sigma{};
  std::array<double, 3> rho{};
};

/// The horizon defaults to the deepest observed generation.
inline NaiveFit naive_fit(const Cells& x, int horizon = -1) {
  NaiveFit f;
  for (const auto& [k, v] : x) f.horizon = std::max(f.horizon, generation(k));
  if (horizon >= 0) f.horizon = horizon;
  std::array<double, 2> r0{}, r1{};
  auto has = [&](std::uint64_t k) { return x.count(k) > 0; };
  for (const auto& [k, xk] : x) {
    if (generation(k) > f.horizon - 1) continue;
    ++f.mothers;
    if (has(2 * k)) {
      f.S0[0][0] += 1;
      f.S0[0][1] += xk;
      f.S0[1][0] += xk;
      f.S0[1][1] += xk * xk;
      r0[0] += x.at(2 * k);
      r0[1] += xk * x.at(2 * k);
    }
    if (has(2 * k + 1)) {
      f.S1[0][0] += 1;
      f.S1[0][1] += xk;
      f.S1[1][0] += xk;
      f.S1[1][1] += xk * xk;
      r1[0] += x.at(2 * k + 1);
      r1[1] += xk * x.at(2 * k + 1);
    }
  }
  std::array<double, 2> ab{}, cd{};
  const bool ok0 = f.S0[0][0] > 0 && solve<2>(f.S0, r0, ab);
  const bool ok1 = f.S1[0][0] > 0 && solve<2>(f.S1, r1, cd);
  f.theta_ok = ok0 && ok1;
  if (!f.theta_ok) return f;
  f.theta = {ab[0], ab[1], cd[0], cd[1]};

  std::array<double, 4> rs{};
  std::array<double, 3> rr{};
  for (const auto& [k, xk] : x) {
    if (generation(k) > f.horizon - 1) continue;
    const double d0 = has(2 * k) ? 1.0 : 0.0;
    const double d1 = has(2 * k + 1) ? 1.0 : 0.0;
    const double e0 = d0 ? x.at(2 * k) - f.theta[0] - f.theta[1] * xk : 0.0;
    const double e1 = d1 ? x.at(2 * k + 1) - f.theta[2] - f.theta[3] * xk : 0.0;
    const double p[5] = {1.0, xk, xk * xk, xk * xk * xk, xk * xk * xk * xk};
    const double u[4][4] = {{d0 + d1, 2 * d0 * p[1], 2 * d1 * p[1], (d0 + d1) * p[2]},
                            {2 * d0 * p[1], 4 * d0 * p[2], 0.0, 2 * d0 * p[3]},
                            {2 * d1 * p[1], 0.0, 4 * d1 * p[2], 2 * d1 * p[3]},
                            {(d0 + d1) * p[2], 2 * d0 * p[3], 2 * d1 * p[3], (d0 + d1) * p[4]}};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) f.U[i][j] += u[i][j];
    rs[0] += e0 * e0 + e1 * e1;
    rs[1] += 2 * xk * e0 * e0;
    rs[2] += 2 * xk * e1 * e1;
    rs[3] += xk * xk * (e0 * e0 + e1 * e1);
    const double pair = d0 * d1;
    const double v[3][3] = {{1.0, 2 * p[1], p[2]}, {2 * p[1], 4 * p[2], 2 * p[3]}, {p[2], 2 * p[3], p[4]}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) f.V[i][j] += pair * v[i][j];
    rr[0] += pair * e0 * e1;
    rr[1] += pair * 2 * xk * e0 * e1;
    rr[2] += pair * xk * xk * e0 * e1;
  }
  f.sigma_ok = solve<4>(f.U, rs, f.sigma);
  f.rho_ok = solve<3>(f.V, rr, f.rho);
  return f;
}

/// E[prod z_slot] for a centred Gaussian vector by summing over all perfect
/// matchings of the factor list.
inline double isserlis(const Matrix<4>& cov, const std::array<int, 4>& powers) {
  std::vector<int> slots;
  for (int s = 0; s < 4; ++s)
    for (int r = 0; r < powers[static_cast<std::size_t>(s)]; ++r) slots.push_back(s);
  if (slots.size() % 2) return 0.0;
  std::vector<char> used(slots.size(), 0);
  std::function<double()> rec = [&]() -> double {
    std::size_t first = 0;
    while (first < slots.size() && used[first]) ++first;
    if (first == slots.size()) return 1.0;
    used[first] = 1;
    double acc = 0.0;
    for (std::size_t j = first + 1; j < slots.size(); ++j) {
      if (used[j]) continue;
      used[j] = 1;
      acc += cov[static_cast<std::size_t>(slots[first])][static_cast<std::size_t>(slots[j])] * rec();
      used[j] = 0;
    }
    used[first] = 0;
    return acc;
  };
  return rec();
}

/// Coefficients in x of E[prod_f (eps_f + eta_f x)] for factors listed by
/// branch (0 even, 1 odd), by enumerating every eps/eta choice.
inline std::vector<double> innovation_product_poly(const Matrix<4>& cov, const std::vector<int>& branches) {
  const std::size_t n = branches.size();
  std::vector<double> poly(n + 1, 0.0);
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    std::array<int, 4> pw{0, 0, 0, 0};
    int deg = 0;
    for (std::size_t f = 0; f < n; ++f) {
      const bool eta = (mask >> f) & 1U;
      const int slot = 2 * branches[f] + (eta ? 1 : 0);
      ++pw[static_cast<std::size_t>(slot)];
      deg += eta;
    }
    poly[static_cast<std::size_t>(deg)] += isserlis(cov, pw);
  }
  return poly;
}

inline std::vector<double> poly_sub(std::vector<double> a, const std::vector<double>& b) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] -= b[i];
  return a;
}

inline std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

/// Lower Cholesky factor of a PSD matrix; zero pivots produce zero columns.
inline Matrix<4> cholesky(const Matrix<4>& a) {
  Matrix<4> l{};
  for (std::size_t j = 0; j < 4; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j][k] * l[j][k];
    l[j][j] = d > 0.0 ? std::sqrt(d) : 0.0;
    for (std::size_t i = j + 1; i < 4; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      l[i][j] = l[j][j] > 0.0 ? s / l[j][j] : 0.0;
    }
  }
  return l;
}

struct ChainModel {
  double a, b, c, d;
  Matrix<4> cov;  // (eps_even, eta_even, eps_odd, eta_odd)
  double m1;      // probability of the odd branch
};

/// Mean and standard error of Y_steps^q over independent Gaussian chains from Y_0 = 0.
inline std::vector<std::pair<double, double>> mc_chain_moments(const ChainModel& model, int q_max, int chains,
                                                               int steps, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::bernoulli_distribution odd(model.m1);
  const auto l = cholesky(model.cov);
  std::vector<double> s1(static_cast<std::size_t>(q_max) + 1, 0.0), s2 = s1;
  for (int c = 0; c < chains; ++c) {
    double y = 0.0;
    for (int t = 0; t < steps; ++t) {
      double z[4] = {nd(gen), nd(gen), nd(gen), nd(gen)};
      double w[4] = {0, 0, 0, 0};
      for (int i = 0; i < 4; ++i)
        for (int k = 0; k <= i; ++k) w[i] += l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * z[k];
      if (odd(gen))
        y = model.c + w[2] + (model.d + w[3]) * y;
      else
        y = model.a + w[0] + (model.b + w[1]) * y;
    }
    double p = 1.0;
    for (int q = 0; q <= q_max; ++q, p *= y) {
      s1[static_cast<std::size_t>(q)] += p;
      s2[static_cast<std::size_t>(q)] += p * p;
    }
  }
  std::vector<std::pair<double, double>> out;
  for (int q = 0; q <= q_max; ++q) {
    const double mean = s1[static_cast<std::size_t>(q)] / chains;
    const double var = (s2[static_cast<std::size_t>(q)] / chains - mean * mean) * chains / (chains - 1.0);
    out.emplace_back(mean, std::sqrt(std::max(0.0, var) / chains));
  }
  return out;
}

/// Smallest fixed point of the offspring generating function, by iteration from 0.
inline double extinction_probability(double p01, double p0, double p1) {
  const double none = 1.0 - p01 - p0 - p1;
  double s = 0.0;
  for (int i = 0; i < 200000; ++i) s = none + (p0 + p1) * s + p01 * s * s;
  return s;
}

}  // namespace oracle
