#pragma once

// Two-marginal entropic baselines for the COOT / GW comparison and the 4-D
// squared-difference cost C_{i,j,k,l} = (X_{i,k} - Y_{j,l})^2.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mmotdc/error.hpp"
#include "mmotdc/sinkhorn.hpp"
#include "mmotdc/tensor.hpp"

namespace mmotdc {

/// X is m x p, Y is n x q; the induced cost has shape m x n x p x q.
struct CostSpec {
  DenseTensor X;
  DenseTensor Y;
};

/// Sample coupling P (m x n) and feature coupling Q (p x q).
struct CouplingPair {
  DenseTensor P;
  DenseTensor Q;
};

namespace detail {

inline void check_matrix(const DenseTensor& a, const char* what) {
  if (a.rank() != 2) throw ConfigError(std::string(what) + " must be a matrix, got shape " + shape_string(a.shape()));
}

inline std::vector<double> row_sums(const DenseTensor& a) {
  std::vector<double> out(a.extent(0), 0.0);
  for (std::size_t i = 0; i < a.extent(0); ++i) {
    for (std::size_t j = 0; j < a.extent(1); ++j) out[i] += a(i, j);
  }
  return out;
}

inline std::vector<double> col_sums(const DenseTensor& a) {
  std::vector<double> out(a.extent(1), 0.0);
  for (std::size_t i = 0; i < a.extent(0); ++i) {
    for (std::size_t j = 0; j < a.extent(1); ++j) out[j] += a(i, j);
  }
  return out;
}

inline MarginalFamily pair_marginals(const std::vector<double>& a, const std::vector<double>& b) {
  return MarginalFamily({a, b});
}

inline bool loss_settled(double previous, double current, double tol) {
  return std::abs(current - previous) <= tol * std::max(std::abs(previous), 1e-300);
}

}  // namespace detail

inline DenseTensor build_cost_4d(const DenseTensor& x, const DenseTensor& y) {
  detail::check_matrix(x, "X");
  detail::check_matrix(y, "Y");
  const std::size_t m = x.extent(0), p = x.extent(1);
  const std::size_t n = y.extent(0), q = y.extent(1);
  DenseTensor c(Shape{m, n, p, q});
  auto out = c.values();
  std::size_t off = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < p; ++k) {
        const double xv = x(i, k);
        for (std::size_t l = 0; l < q; ++l) {
          const double d = xv - y(j, l);
          out[off++] = d * d;
        }
      }
    }
  }
  return c;
}

inline DenseTensor build_cost_4d(const CostSpec& spec) { return build_cost_4d(spec.X, spec.Y); }

/// Pairwise squared Euclidean distances between the rows of `points`.
inline DenseTensor sq_euclidean_distances(const DenseTensor& points) {
  detail::check_matrix(points, "points");
  const std::size_t n = points.extent(0), d = points.extent(1);
  DenseTensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = points(i, k) - points(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return out;
}

/// M(Q)_{ij} = sum_{kl} (X_ik - Y_jl)^2 Q_kl, via the quadratic expansion.
inline DenseTensor collapsed_sample_cost(const DenseTensor& x, const DenseTensor& y, const DenseTensor& q) {
  const std::size_t m = x.extent(0), p = x.extent(1);
  const std::size_t n = y.extent(0), qq = y.extent(1);
  if (q.rank() != 2 || q.extent(0) != p || q.extent(1) != qq) {
    throw ConfigError("collapsed_sample_cost: feature coupling shape " + shape_string(q.shape()) + " mismatch");
  }
  const std::vector<double> q1 = detail::row_sums(q);
  const std::vector<double> q2 = detail::col_sums(q);
  std::vector<double> a(m, 0.0), b(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) a[i] += x(i, k) * x(i, k) * q1[k];
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t l = 0; l < qq; ++l) b[j] += y(j, l) * y(j, l) * q2[l];
  }
  // XQ: m x q
  std::vector<double> xq(m * qq, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      const double xv = x(i, k);
      for (std::size_t l = 0; l < qq; ++l) xq[i * qq + l] += xv * q(k, l);
    }
  }
  DenseTensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double cross = 0.0;
      for (std::size_t l = 0; l < qq; ++l) cross += xq[i * qq + l] * y(j, l);
      out(i, j) = a[i] + b[j] - 2.0 * cross;
    }
  }
  return out;
}

/// M'(P)_{kl} = sum_{ij} (X_ik - Y_jl)^2 P_ij.
inline DenseTensor collapsed_feature_cost(const DenseTensor& x, const DenseTensor& y, const DenseTensor& pmat) {
  const std::size_t m = x.extent(0), p = x.extent(1);
  const std::size_t n = y.extent(0), qq = y.extent(1);
  if (pmat.rank() != 2 || pmat.extent(0) != m || pmat.extent(1) != n) {
    throw ConfigError("collapsed_feature_cost: sample coupling shape " + shape_string(pmat.shape()) + " mismatch");
  }
  const std::vector<double> p1 = detail::row_sums(pmat);
  const std::vector<double> p2 = detail::col_sums(pmat);
  std::vector<double> a(p, 0.0), b(qq, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) a[k] += x(i, k) * x(i, k) * p1[i];
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t l = 0; l < qq; ++l) b[l] += y(j, l) * y(j, l) * p2[j];
  }
  // P Y: m x q
  std::vector<double> py(m * qq, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double pv = pmat(i, j);
      for (std::size_t l = 0; l < qq; ++l) py[i * qq + l] += pv * y(j, l);
    }
  }
  DenseTensor out(Shape{p, qq});
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = 0; l < qq; ++l) {
      double cross = 0.0;
      for (std::size_t i = 0; i < m; ++i) cross += x(i, k) * py[i * qq + l];
      out(k, l) = a[k] + b[l] - 2.0 * cross;
    }
  }
  return out;
}

/// <C, P (x) Q> for a dense 4-D cost, contracted block by block without forming P (x) Q.
inline double coot_loss(const DenseTensor& cost, const CouplingPair& pair) {
  if (cost.rank() != 4) throw ConfigError("coot_loss: cost must be 4-D");
  const Shape& s = cost.shape();
  if (pair.P.shape() != Shape{s[0], s[1]} || pair.Q.shape() != Shape{s[2], s[3]}) {
    throw ConfigError("coot_loss: coupling shapes do not match cost " + shape_string(s));
  }
  const std::size_t block = s[2] * s[3];
  auto c = cost.values();
  auto q = pair.Q.values();
  double loss = 0.0;
  for (std::size_t ij = 0; ij < s[0] * s[1]; ++ij) {
    const double* row = c.data() + ij * block;
    double inner_sum = 0.0;
    for (std::size_t kl = 0; kl < block; ++kl) inner_sum += row[kl] * q[kl];
    loss += pair.P[ij] * inner_sum;
  }
  return loss;
}

/// <C(X,Y), P (x) Q> from the data matrices, via the collapsed cost.
inline double coot_loss(const CostSpec& spec, const CouplingPair& pair) {
  return inner(collapsed_sample_cost(spec.X, spec.Y, pair.Q), pair.P);
}

/// <L_2(Cx, Cy), P (x) P>.
inline double gw_loss(const DenseTensor& cx, const DenseTensor& cy, const DenseTensor& plan) {
  return inner(collapsed_sample_cost(cx, cy, plan), plan);
}

struct BcdResult {
  CouplingPair pair;
  /// COOT loss after each sweep.
  std::vector<double> loss_trace;
  /// loss + epsP H(P) + epsQ H(Q) after each sweep; the quantity block descent decreases.
  std::vector<double> objective_trace;
  int sweeps = 0;
  bool converged = false;
  int inner_nonconverged = 0;
};

inline SinkhornConfig default_baseline_inner() {
  SinkhornConfig cfg;
  cfg.tol = 1e-8;
  cfg.max_iters = 2000;
  return cfg;
}

/// Alternating entropic OT on the sample and feature couplings for
/// min <C, P (x) Q> + epsP H(P) + epsQ H(Q); `mu` holds (mu_1, mu_2, mu_3, mu_4).
inline BcdResult coot_bcd(const CostSpec& spec, const MarginalFamily& mu, double eps_p, double eps_q,
                          int max_sweeps, double tol, SinkhornConfig inner_cfg = default_baseline_inner()) {
  detail::check_matrix(spec.X, "X");
  detail::check_matrix(spec.Y, "Y");
  if (!(eps_p > 0.0) || !(eps_q > 0.0)) throw ConfigError("coot_bcd: regularizations must be > 0");
  if (max_sweeps < 1) throw ConfigError("coot_bcd: max_sweeps must be >= 1");
  if (mu.size() != 4) throw ConfigError("coot_bcd: expected four marginals");
  mu.check_shape(Shape{spec.X.extent(0), spec.Y.extent(0), spec.X.extent(1), spec.Y.extent(1)});
  const MarginalFamily samples = detail::pair_marginals(mu[0], mu[1]);
  const MarginalFamily features = detail::pair_marginals(mu[2], mu[3]);

  BcdResult res{CouplingPair{tensor_product({DenseTensor::vector(mu[0]), DenseTensor::vector(mu[1])}),
                             tensor_product({DenseTensor::vector(mu[2]), DenseTensor::vector(mu[3])})}};
  DualPotentials duals_p = DualPotentials::zeros(samples.extents());
  DualPotentials duals_q = DualPotentials::zeros(features.extents());
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    inner_cfg.epsilon = eps_p;
    SinkhornResult rp = sinkhorn_mmot(collapsed_sample_cost(spec.X, spec.Y, res.pair.Q), samples, inner_cfg, &duals_p);
    res.inner_nonconverged += rp.converged ? 0 : 1;
    duals_p = std::move(rp.duals);
    res.pair.P = rp.plan.tensor();

    inner_cfg.epsilon = eps_q;
    const DenseTensor feature_cost = collapsed_feature_cost(spec.X, spec.Y, res.pair.P);
    SinkhornResult rq = sinkhorn_mmot(feature_cost, features, inner_cfg, &duals_q);
    res.inner_nonconverged += rq.converged ? 0 : 1;
    duals_q = std::move(rq.duals);
    res.pair.Q = rq.plan.tensor();

    const double loss = inner(feature_cost, res.pair.Q);
    res.loss_trace.push_back(loss);
    res.objective_trace.push_back(loss + eps_p * neg_entropy(res.pair.P) + eps_q * neg_entropy(res.pair.Q));
    res.sweeps = sweep;
    const std::size_t t = res.loss_trace.size();
    if (t >= 2 && detail::loss_settled(res.loss_trace[t - 2], loss, tol)) {
      res.converged = true;
      break;
    }
  }
  return res;
}

struct GwResult {
  DenseTensor plan;
  std::vector<double> loss_trace;
  int sweeps = 0;
  bool converged = false;
  int inner_nonconverged = 0;
};

/// Entropic GW by projected gradient: P <- Sinkhorn(mu_x, mu_y, M(P), eps), starting from mu_x (x) mu_y.
inline GwResult egw_pg(const DenseTensor& cx, const DenseTensor& cy, const std::vector<double>& mu_x,
                       const std::vector<double>& mu_y, double eps, int max_sweeps, double tol,
                       SinkhornConfig inner_cfg = default_baseline_inner()) {
  detail::check_matrix(cx, "Cx");
  detail::check_matrix(cy, "Cy");
  if (cx.extent(0) != cx.extent(1) || cy.extent(0) != cy.extent(1)) {
    throw ConfigError("egw_pg: similarity matrices must be square");
  }
  if (!(eps > 0.0)) throw ConfigError("egw_pg: eps must be > 0");
  if (max_sweeps < 1) throw ConfigError("egw_pg: max_sweeps must be >= 1");
  const MarginalFamily marg = detail::pair_marginals(mu_x, mu_y);
  marg.check_shape(Shape{cx.extent(0), cy.extent(0)});

  GwResult res{tensor_product({DenseTensor::vector(mu_x), DenseTensor::vector(mu_y)})};
  DualPotentials duals = DualPotentials::zeros(marg.extents());
  inner_cfg.epsilon = eps;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    SinkhornResult r = sinkhorn_mmot(collapsed_sample_cost(cx, cy, res.plan), marg, inner_cfg, &duals);
    res.inner_nonconverged += r.converged ? 0 : 1;
    duals = std::move(r.duals);
    res.plan = r.plan.tensor();
    const double loss = gw_loss(cx, cy, res.plan);
    res.loss_trace.push_back(loss);
    res.sweeps = sweep;
    const std::size_t t = res.loss_trace.size();
    if (t >= 2 && detail::loss_settled(res.loss_trace[t - 2], loss, tol)) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace mmotdc
