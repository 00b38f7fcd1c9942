#pragma once

// Least-squares estimators of theta = (a, b, c, d), sigma = (sigma_eps2, rho00,
// rho11, sigma_eta2) and rho = (rho_eps, rho, rho_eta) from one lineage.
//
// Sums run over mothers k in T_{n-1}, the observed cells of generations
// 0..n-1, where n is the lineage horizon.

#include "rbar/genealogy.hpp"
#include "rbar/linalg.hpp"
#include "rbar/simulator.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace rbar {

enum class Status { ok, singular, insufficient_data };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::singular: return "singular";
    case Status::insufficient_data: return "insufficient_data";
  }
  return "unknown";
}

inline Status worst(Status a, Status b) {
  return static_cast<int>(a) >= static_cast<int>(b) ? a : b;
}

/// One observed mother and her observed daughters.
struct MotherView {
  CellIndex k = 0;
  std::size_t pos = 0;
  int generation = 0;
  double x = 0.0;
  bool has_even = false;
  bool has_odd = false;
  std::size_t even_pos = ObservationTree::npos;
  std::size_t odd_pos = ObservationTree::npos;
  double x_even = 0.0;
  double x_odd = 0.0;
};

/// Calls f(MotherView) for every observed cell of generation <= last_generation.
template <typename F>
void for_each_mother(const LineageTree& lineage, int last_generation, F&& f) {
  const auto cells = lineage.tree().observed();
  const auto values = lineage.values();
  std::size_t next = 1;
  for (std::size_t pos = 0; pos < cells.size(); ++pos) {
    MotherView m;
    m.k = cells[pos];
    m.pos = pos;
    m.generation = generation_of(m.k);
    if (m.generation > last_generation) break;
    m.x = values[pos];
    if (next < cells.size() && cells[next] == even_daughter(m.k)) {
      m.has_even = true;
      m.even_pos = next;
      m.x_even = values[next];
      ++next;
    }
    if (next < cells.size() && cells[next] == odd_daughter(m.k)) {
      m.has_odd = true;
      m.odd_pos = next;
      m.x_odd = values[next];
      ++next;
    }
    f(m);
  }
}

inline Mat2 moment_block(double x) {
  Mat2 m;
  m << 1.0, x, x, x * x;
  return m;
}

struct DesignMatrices {
  Mat2 S0 = Mat2::Zero();
  Mat2 S1 = Mat2::Zero();
  Mat4 U = Mat4::Zero();
  Mat3 V = Mat3::Zero();
  /// Sum of (1 + X^2) diag(delta_2k, delta_2k+1) (x) [[1, X], [X, X^2]].
  Mat4 Sigma = Mat4::Zero();
  int horizon = 0;              // n
  std::size_t mothers = 0;      // |T*_{n-1}|
  std::size_t even_children = 0;
  std::size_t odd_children = 0;
  std::size_t pairs = 0;

  [[nodiscard]] Mat4 S() const {
    Mat4 s = Mat4::Zero();
    s.topLeftCorner<2, 2>() = S0;
    s.bottomRightCorner<2, 2>() = S1;
    return s;
  }
};

inline void add_mother_to_design(DesignMatrices& d, double x, bool even, bool odd) {
  const double x2 = x * x;
  const double x3 = x2 * x;
  const double x4 = x2 * x2;
  const Mat2 blk = moment_block(x);
  const double de = even ? 1.0 : 0.0;
  const double dodd = odd ? 1.0 : 0.0;
  ++d.mothers;
  if (even) {
    d.S0 += blk;
    d.Sigma.topLeftCorner<2, 2>() += (1.0 + x2) * blk;
    ++d.even_children;
  }
  if (odd) {
    d.S1 += blk;
    d.Sigma.bottomRightCorner<2, 2>() += (1.0 + x2) * blk;
    ++d.odd_children;
  }
  Mat4 u;
  u << de + dodd, 2 * de * x, 2 * dodd * x, (de + dodd) * x2,  //
      2 * de * x, 4 * de * x2, 0.0, 2 * de * x3,                //
      2 * dodd * x, 0.0, 4 * dodd * x2, 2 * dodd * x3,          //
      (de + dodd) * x2, 2 * de * x3, 2 * dodd * x3, (de + dodd) * x4;
  d.U += u;
  if (even && odd) {
    Mat3 v;
    v << 1.0, 2 * x, x2, 2 * x, 4 * x2, 2 * x3, x2, 2 * x3, x4;
    d.V += v;
    ++d.pairs;
  }
}

/// S_{n-1}, U_{n-1}, V_{n-1} and Sigma_{n-1} of the lineage.
inline DesignMatrices accumulate_design(const LineageTree& lineage) {
  DesignMatrices d;
  d.horizon = lineage.tree().max_generation();
  for_each_mother(lineage, d.horizon - 1,
                  [&](const MotherView& m) { add_mother_to_design(d, m.x, m.has_even, m.has_odd); });
  return d;
}

struct ThetaEstimate {
  Vec4 value = Vec4::Constant(std::numeric_limits<double>::quiet_NaN());
  Status status = Status::insufficient_data;
  std::array<Status, 2> block{Status::insufficient_data, Status::insufficient_data};
  Vec4 rhs = Vec4::Zero();
  double relative_residual = 0.0;
  [[nodiscard]] bool ok() const { return status == Status::ok; }
};

/// Running sums for the two decoupled 2x2 systems.
struct ThetaAccumulator {
  Mat2 S0 = Mat2::Zero();
  Mat2 S1 = Mat2::Zero();
  Vec2 r0 = Vec2::Zero();
  Vec2 r1 = Vec2::Zero();
  Mat2 Sigma0 = Mat2::Zero();
  Mat2 Sigma1 = Mat2::Zero();
  std::size_t n0 = 0, n1 = 0, mothers = 0;

  void add(const MotherView& m) {
    ++mothers;
    const Mat2 blk = moment_block(m.x);
    const double w = 1.0 + m.x * m.x;
    if (m.has_even) {
      S0 += blk;
      Sigma0 += w * blk;
      r0 += Vec2(m.x_even, m.x * m.x_even);
      ++n0;
    }
    if (m.has_odd) {
      S1 += blk;
      Sigma1 += w * blk;
      r1 += Vec2(m.x_odd, m.x * m.x_odd);
      ++n1;
    }
  }

  [[nodiscard]] Mat4 S() const {
    Mat4 s = Mat4::Zero();
    s.topLeftCorner<2, 2>() = S0;
    s.bottomRightCorner<2, 2>() = S1;
    return s;
  }
  [[nodiscard]] Mat4 Sigma() const {
    Mat4 s = Mat4::Zero();
    s.topLeftCorner<2, 2>() = Sigma0;
    s.bottomRightCorner<2, 2>() = Sigma1;
    return s;
  }

  [[nodiscard]] ThetaEstimate solve() const {
    ThetaEstimate out;
    out.rhs << r0, r1;
    auto block = [](const Mat2& S, const Vec2& r, std::size_t count, Status& st, Vec2& v) {
      if (count == 0) {
        st = Status::insufficient_data;
        return;
      }
      auto x = guarded_solve(S, r);
      if (!x) {
        st = Status::singular;
        return;
      }
      st = Status::ok;
      v = *x;
    };
    Vec2 v0 = Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
    Vec2 v1 = v0;
    block(S0, r0, n0, out.block[0], v0);
    block(S1, r1, n1, out.block[1], v1);
    out.status = worst(out.block[0], out.block[1]);
    out.value << v0, v1;
    if (out.ok()) {
      Vec4 res;
      res << S0 * v0 - r0, S1 * v1 - r1;
      out.relative_residual = res.norm() / std::max(out.rhs.norm(), 1e-300);
    }
    return out;
  }
};

inline ThetaEstimate estimate_theta(const LineageTree& lineage) {
  ThetaAccumulator acc;
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) { acc.add(m); });
  return acc.solve();
}

/// theta_hat_l for l = 1..n, each fitted on the mothers of T_{l-1}.
struct ThetaStep {
  int ell = 0;
  std::size_t mothers = 0;  // |T*_{l-1}|
  ThetaEstimate estimate;
  Mat4 S = Mat4::Zero();      // unnormalised S_{l-1}
  Mat4 Sigma = Mat4::Zero();  // unnormalised Sigma_{l-1}
};

inline std::vector<ThetaStep> theta_trajectory(const LineageTree& lineage) {
  const int n = lineage.tree().max_generation();
  std::vector<ThetaStep> out;
  ThetaAccumulator acc;
  int current = 0;
  auto flush_until = [&](int gen) {
    while (current < gen) {
      out.push_back({current + 1, acc.mothers, acc.solve(), acc.S(), acc.Sigma()});
      ++current;
    }
  };
  for_each_mother(lineage, n - 1, [&](const MotherView& m) {
    flush_until(m.generation);
    acc.add(m);
  });
  flush_until(n);
  return out;
}

/// How residuals are formed.
enum class ResidualScheme {
  final_estimate,  // every mother uses theta_hat_n
  predictable,     // a mother of generation l uses theta_hat_l
  truth,           // eps + eta X from the simulation side-channel
};

/// Daughter residuals aligned with tree positions; the root entry is unused.
struct Residuals {
  ResidualScheme scheme = ResidualScheme::final_estimate;
  std::vector<double> value;
  std::vector<char> usable;
  int first_generation = 0;  // first mother generation with usable residuals
};

inline Residuals residuals(const LineageTree& lineage, const Vec4& theta_hat) {
  Residuals r;
  r.value.assign(lineage.tree().size(), 0.0);
  r.usable.assign(lineage.tree().size(), 0);
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    if (m.has_even) {
      r.value[m.even_pos] = m.x_even - theta_hat(0) - theta_hat(1) * m.x;
      r.usable[m.even_pos] = 1;
    }
    if (m.has_odd) {
      r.value[m.odd_pos] = m.x_odd - theta_hat(2) - theta_hat(3) * m.x;
      r.usable[m.odd_pos] = 1;
    }
  });
  return r;
}

/// Generation-wise residuals: mothers of G_l use theta_hat_l; generations
/// before first_generation, or with a singular theta_hat_l, are left out.
inline Residuals predictable_residuals(const LineageTree& lineage, int first_generation = 1) {
  const auto traj = theta_trajectory(lineage);
  Residuals r;
  r.scheme = ResidualScheme::predictable;
  r.first_generation = std::max(1, first_generation);
  r.value.assign(lineage.tree().size(), 0.0);
  r.usable.assign(lineage.tree().size(), 0);
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    if (m.generation < r.first_generation) return;
    const auto& est = traj[static_cast<std::size_t>(m.generation - 1)].estimate;
    if (!est.ok()) return;
    const Vec4& t = est.value;
    if (m.has_even) {
      r.value[m.even_pos] = m.x_even - t(0) - t(1) * m.x;
      r.usable[m.even_pos] = 1;
    }
    if (m.has_odd) {
      r.value[m.odd_pos] = m.x_odd - t(2) - t(3) * m.x;
      r.usable[m.odd_pos] = 1;
    }
  });
  return r;
}

/// True innovations eps_k + eta_k X_mother from the truth side-channel.
inline Residuals true_innovations(const LineageTree& lineage, int first_generation = 0) {
  const auto truth = lineage.truth();
  Residuals r;
  r.scheme = ResidualScheme::truth;
  r.first_generation = first_generation;
  r.value.assign(lineage.tree().size(), 0.0);
  r.usable.assign(lineage.tree().size(), 0);
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    if (m.generation < first_generation) return;
    for (auto [has, pos] : {std::pair{m.has_even, m.even_pos}, std::pair{m.has_odd, m.odd_pos}}) {
      if (!has) continue;
      r.value[pos] = truth[pos].eps + truth[pos].eta * m.x;
      r.usable[pos] = 1;
    }
  });
  return r;
}

/// Restriction placed on the sigma regression.
enum class SigmaModel {
  full,           // all four components
  no_slope_noise  // sigma_eta2 = rho00 = rho11 = 0, only sigma_eps2 is fitted
};

struct SigmaEstimate {
  Vec4 value = Vec4::Constant(std::numeric_limits<double>::quiet_NaN());
  Status status = Status::insufficient_data;
  bool out_of_cone = false;
  Mat4 U = Mat4::Zero();
  Vec4 rhs = Vec4::Zero();
  std::size_t mothers = 0;  // mothers with at least one usable residual
  [[nodiscard]] bool ok() const { return status == Status::ok; }
};

struct RhoEstimate {
  Vec3 value = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
  Status status = Status::insufficient_data;
  Mat3 V = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  std::size_t pairs = 0;
  [[nodiscard]] bool ok() const { return status == Status::ok; }
};

inline SigmaEstimate estimate_sigma(const LineageTree& lineage, const Residuals& res,
                                    SigmaModel model = SigmaModel::full) {
  SigmaEstimate out;
  DesignMatrices d;
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    const bool e = m.has_even && res.usable[m.even_pos];
    const bool o = m.has_odd && res.usable[m.odd_pos];
    if (!e && !o) return;
    add_mother_to_design(d, m.x, e, o);
    const double e2 = e ? res.value[m.even_pos] * res.value[m.even_pos] : 0.0;
    const double o2 = o ? res.value[m.odd_pos] * res.value[m.odd_pos] : 0.0;
    out.rhs += Vec4(e2 + o2, 2 * m.x * e2, 2 * m.x * o2, m.x * m.x * (e2 + o2));
  });
  out.U = d.U;
  out.mothers = d.mothers;
  if (d.even_children + d.odd_children == 0) return out;
  if (model == SigmaModel::no_slope_noise) {
    out.value = Vec4::Zero();
    out.value(0) = out.rhs(0) / out.U(0, 0);
    out.status = Status::ok;
  } else {
    auto x = guarded_solve(out.U, out.rhs);
    if (!x) {
      out.status = Status::singular;
      return out;
    }
    out.value = *x;
    out.status = Status::ok;
  }
  out.out_of_cone = out.value(0) < 0.0 || out.value(3) < 0.0;
  return out;
}

inline RhoEstimate estimate_rho(const LineageTree& lineage, const Residuals& res) {
  RhoEstimate out;
  for_each_mother(lineage, lineage.tree().max_generation() - 1, [&](const MotherView& m) {
    if (!(m.has_even && m.has_odd && res.usable[m.even_pos] && res.usable[m.odd_pos])) return;
    const double x = m.x, x2 = x * x;
    Mat3 v;
    v << 1.0, 2 * x, x2, 2 * x, 4 * x2, 2 * x2 * x, x2, 2 * x2 * x, x2 * x2;
    out.V += v;
    const double p = res.value[m.even_pos] * res.value[m.odd_pos];
    out.rhs += Vec3(p, 2 * x * p, x2 * p);
    ++out.pairs;
  });
  if (out.pairs == 0) return out;
  auto x = guarded_solve(out.V, out.rhs);
  if (!x) {
    out.status = Status::singular;
    return out;
  }
  out.value = *x;
  out.status = Status::ok;
  return out;
}

struct EstimateBundle {
  DesignMatrices design;
  ThetaEstimate theta;
  Residuals residuals;
  SigmaEstimate sigma;
  RhoEstimate rho;
};

inline EstimateBundle estimate_all(const LineageTree& lineage, SigmaModel model = SigmaModel::full) {
  EstimateBundle b;
  b.design = accumulate_design(lineage);
  b.theta = estimate_theta(lineage);
  if (!b.theta.ok()) return b;
  b.residuals = residuals(lineage, b.theta.value);
  b.sigma = estimate_sigma(lineage, b.residuals, model);
  b.rho = estimate_rho(lineage, b.residuals);
  return b;
}

}  // namespace rbar
