#pragma once

// Multi-marginal Sinkhorn for
//
//     min_{P in U(mu_1..mu_N)}  <C, P> + eps * sum P log P
//
// with Gauss-Seidel dual sweeps f_n <- eps log mu_n - eps LSE_{i_-n}((sum_{j!=n} f_j - C) / eps)
// and plan recovery P = exp((f_1 (+) ... (+) f_N - C) / eps).
//
// Iterates are kept as absorbed log-potentials g = f / eps plus multiplicative
// scalings v_n. The stabilized kernel K = exp(-C/eps + sum g) is rebuilt whenever a
// scaling leaves [1/kScalingBound, kScalingBound], and any axis whose scaling update
// under- or overflows is recomputed with a max-shifted log-sum-exp instead. Both
// paths produce the same dual sequence as the plain log-domain recursion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmotdc/error.hpp"
#include "mmotdc/tensor.hpp"

namespace mmotdc {

struct SinkhornConfig {
  double epsilon = 1.0;
  int max_iters = 10000;
  /// Threshold on max_n ||P_{#n} - mu_n||_inf.
  double tol = 1e-7;
  int check_every = 1;
  /// Record the dual objective after every sweep (costs one extra pass per sweep).
  bool record_dual_trace = false;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("sinkhorn: epsilon must be > 0");
    if (!(tol > 0.0)) throw ConfigError("sinkhorn: tol must be > 0");
    if (max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
    if (check_every < 1) throw ConfigError("sinkhorn: check_every must be >= 1");
  }
};

/// Dual potentials f_1, ..., f_N (unscaled, i.e. in cost units).
struct DualPotentials {
  std::vector<std::vector<double>> f;

  static DualPotentials zeros(const Shape& extents) {
    DualPotentials d;
    for (std::size_t a : extents) d.f.emplace_back(a, 0.0);
    return d;
  }

  bool matches(const Shape& extents) const {
    if (f.size() != extents.size()) return false;
    for (std::size_t n = 0; n < f.size(); ++n) {
      if (f[n].size() != extents[n]) return false;
    }
    return true;
  }
};

/// Additive cost contribution that depends only on the axes of one contiguous block.
struct BlockTerm {
  AxisBlock block;
  DenseTensor values;
};

struct SinkhornResult {
  ProbabilityTensor plan;
  /// log of the plan, exact even where exp underflows.
  DenseTensor log_plan;
  DualPotentials duals;
  int iters = 0;
  double residual = std::numeric_limits<double>::infinity();
  double dual_objective = 0.0;
  bool converged = false;
  std::vector<double> dual_trace;
};

/// Dual potential assigned to atoms of zero mass (finite stand-in for -infinity, scaled by 1/eps).
inline constexpr double kLogZero = -1e200;

/// sum_n <f_n, mu_n> - eps * sum_i exp((sum_n f_n[i_n] - C_i) / eps) + eps, evaluated literally.
inline double dual_objective(const DenseTensor& cost, const MarginalFamily& mu, const DualPotentials& duals,
                             double epsilon) {
  mu.check_shape(cost.shape());
  if (!duals.matches(cost.shape())) throw ConfigError("dual_objective: dual extents do not match cost");
  double linear = 0.0;
  for (std::size_t n = 0; n < mu.size(); ++n) {
    for (std::size_t k = 0; k < mu[n].size(); ++k) {
      if (mu[n][k] > 0.0) linear += duals.f[n][k] * mu[n][k];
    }
  }
  const Shape& shape = cost.shape();
  const std::size_t rank = shape.size();
  std::vector<std::size_t> idx(rank, 0);
  double mass = 0.0;
  for (std::size_t flat = 0; flat < cost.size(); ++flat) {
    double s = 0.0;
    for (std::size_t n = 0; n < rank; ++n) s += duals.f[n][idx[n]];
    mass += std::exp((s - cost[flat]) / epsilon);
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return linear - epsilon * mass + epsilon;
}

/// <C, P> + eps H(P).
inline double entropic_primal_objective(const DenseTensor& cost, const DenseTensor& plan, double epsilon) {
  return inner(cost, plan) + epsilon * neg_entropy(plan);
}

namespace detail {

// Four independent partial sums keep the pipeline busy on short rows.
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double w, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += w * x[i];
}

/// Returns sum_i k_i v_i and accumulates w k_i v_i into acc.
inline double dot_accumulate(double w, const double* __restrict k, const double* __restrict v,
                             double* __restrict acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += w * (k[i] * v[i]);
  return dot(k, v, n);
}

/// -C/eps and, optionally, exp(-C/eps), shared by successive solves on one cost.
/// The cost tensor must outlive the cache and must not change while it is in use.
struct KernelCache {
  const double* source = nullptr;
  std::size_t size = 0;
  double eps = 0.0;
  bool has_exp = false;
  std::vector<double> log_base;
  std::vector<double> exp_base;
  double log_min = 0.0;
  double log_max = 0.0;

  void prepare(const DenseTensor& cost, double epsilon, bool with_exp) {
    auto c = cost.values();
    if (source != c.data() || size != c.size() || eps != epsilon) {
      source = c.data();
      size = c.size();
      eps = epsilon;
      has_exp = false;
      log_base.resize(size);
      const double inv = 1.0 / epsilon;
      log_min = std::numeric_limits<double>::infinity();
      log_max = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < size; ++i) {
        log_base[i] = -c[i] * inv;
        log_min = std::min(log_min, log_base[i]);
        log_max = std::max(log_max, log_base[i]);
      }
    }
    if (with_exp && !has_exp) {
      exp_base.resize(size);
      for (std::size_t i = 0; i < size; ++i) exp_base[i] = std::exp(log_base[i]);
      has_exp = true;
    }
  }
};

class SinkhornEngine {
 public:
  static constexpr double kScalingBound = 1e30;
  /// Exponent range inside which K may be assembled as a product of exponentials.
  static constexpr double kSafeExponent = 600.0;

  SinkhornEngine(const DenseTensor& cost, std::span<const BlockTerm> terms, const MarginalFamily& mu,
                 const SinkhornConfig& cfg, const DualPotentials* init, const KernelCache& base)
      : shape_(cost.shape()), mu_(mu), eps_(cfg.epsilon), base_(base) {
    if (shape_.empty()) throw ConfigError("sinkhorn: cost tensor must have at least one axis");
    mu.check_shape(shape_);
    rank_ = shape_.size();
    last_ = shape_.back();
    total_ = cost.size();
    rows_ = total_ / last_;
    prepare_terms(terms);

    g_.resize(rank_);
    v_.resize(rank_);
    for (std::size_t n = 0; n < rank_; ++n) {
      g_[n].assign(shape_[n], 0.0);
      v_[n].assign(shape_[n], 1.0);
    }
    if (init != nullptr) {
      if (!init->matches(shape_)) throw ConfigError("sinkhorn: initial duals do not match marginal extents");
      for (std::size_t n = 0; n < rank_; ++n) {
        for (std::size_t k = 0; k < shape_[n]; ++k) {
          const double f = init->f[n][k];
          if (!std::isfinite(f)) throw DomainError("sinkhorn: initial duals must be finite");
          g_[n][k] = mu_[n][k] > 0.0 ? f / eps_ : kLogZero;
        }
      }
    }
    kernel_.resize(total_);
    rowdot_.resize(rows_);
    absorb();
  }

  void sweep() {
    for (std::size_t n = 0; n < rank_; ++n) {
      if (!scaling_update(n)) {
        absorb();
        log_update(n);
        absorb();
      }
    }
  }

  /// Marginals of the current plan; also returns its total mass.
  double marginals(std::vector<std::vector<double>>& out) const {
    out.assign(rank_, {});
    for (std::size_t n = 0; n < rank_; ++n) out[n].assign(shape_[n], 0.0);
    const std::vector<double>& vl = v_[rank_ - 1];
    double mass = 0.0;
    for_each_row([&](std::size_t row, const std::size_t* o) {
      double w = 1.0;
      for (std::size_t j = 0; j + 1 < rank_; ++j) w *= v_[j][o[j]];
      const double* k = kernel_.data() + row * last_;
      double rowsum = 0.0;
      for (std::size_t i = 0; i < last_; ++i) {
        const double p = w * k[i] * vl[i];
        out[rank_ - 1][i] += p;
        rowsum += p;
      }
      for (std::size_t j = 0; j + 1 < rank_; ++j) out[j][o[j]] += rowsum;
      mass += rowsum;
    });
    return mass;
  }

  /// Max-abs marginal violation. Also refreshes the row contractions, which the next
  /// sweep reuses, so checking every sweep costs one pass over the kernel.
  double residual() {
    std::vector<double> last(last_, 0.0);
    const std::vector<double>& vl = v_[rank_ - 1];
    for_each_row([&](std::size_t row, const std::size_t* o) {
      double w = 1.0;
      for (std::size_t j = 0; j + 1 < rank_; ++j) w *= v_[j][o[j]];
      const double* k = kernel_.data() + row * last_;
      rowdot_[row] = dot_accumulate(w, k, vl.data(), last.data(), last_);
    });
    rowdot_valid_ = true;
    double r = 0.0;
    for (std::size_t i = 0; i < last_; ++i) r = std::max(r, std::abs(last[i] - mu_[rank_ - 1][i]));
    for (std::size_t n = 0; n + 1 < rank_; ++n) {
      std::vector<double> m(shape_[n], 0.0);
      for_each_row([&](std::size_t row, const std::size_t* o) {
        double w = rowdot_[row];
        for (std::size_t j = 0; j + 1 < rank_; ++j) w *= v_[j][o[j]];
        m[o[n]] += w;
      });
      for (std::size_t k = 0; k < shape_[n]; ++k) r = std::max(r, std::abs(m[k] - mu_[n][k]));
    }
    return r;
  }

  double current_dual_objective() const {
    std::vector<std::vector<double>> m;
    const double mass = marginals(m);
    double linear = 0.0;
    for (std::size_t n = 0; n < rank_; ++n) {
      for (std::size_t k = 0; k < shape_[n]; ++k) {
        if (mu_[n][k] > 0.0) linear += eps_ * (g_[n][k] + std::log(v_[n][k])) * mu_[n][k];
      }
    }
    return linear - eps_ * mass + eps_;
  }

  SinkhornResult finish(int iters, double residual, bool converged, std::vector<double> trace) {
    // P = K * (v_1 (x) ... (x) v_N) before the scalings are folded into g.
    DenseTensor plan(shape_);
    auto pv = plan.values();
    const std::vector<double>& vl = v_[rank_ - 1];
    double mass = 0.0;
    for_each_row([&](std::size_t row, const std::size_t* o) {
      double w = 1.0;
      for (std::size_t j = 0; j + 1 < rank_; ++j) w *= v_[j][o[j]];
      const double* k = kernel_.data() + row * last_;
      double* out = pv.data() + row * last_;
      for (std::size_t i = 0; i < last_; ++i) {
        out[i] = w * k[i] * vl[i];
        mass += out[i];
      }
    });
    fold_scalings();
    DenseTensor log_plan(shape_);
    auto lp = log_plan.values();
    for_each_row([&](std::size_t row, const std::size_t* o) {
      log_row(row, o, rank_, lp.data() + row * last_);
    });
    DualPotentials duals;
    double linear = 0.0;
    for (std::size_t n = 0; n < rank_; ++n) {
      std::vector<double> f(shape_[n]);
      for (std::size_t k = 0; k < shape_[n]; ++k) {
        f[k] = eps_ * g_[n][k];
        if (mu_[n][k] > 0.0) linear += f[k] * mu_[n][k];
      }
      duals.f.push_back(std::move(f));
    }
    // Mass is pinned to sum(mu_N) by the last update of every sweep; the loose
    // tolerance only matters for non-converged runs that hit max_iters.
    SinkhornResult res{ProbabilityTensor(std::move(plan), 1e-6), std::move(log_plan), std::move(duals)};
    res.iters = iters;
    res.residual = residual;
    res.converged = converged;
    res.dual_objective = linear - eps_ * mass + eps_;
    res.dual_trace = std::move(trace);
    return res;
  }

 private:
  /// A block term in kernel units (-values / eps). Terms that reach the last axis are
  /// looked up per (row, i); the others contribute one constant per row.
  struct PreparedTerm {
    AxisBlock block;
    bool has_last = false;
    std::vector<double> log_values;
    std::vector<double> exp_values;
    double lo = 0.0;
    double hi = 0.0;
  };

  template <class F>
  void for_each_row(F&& fn) const {
    std::vector<std::size_t> o(rank_ - 1, 0);
    for (std::size_t row = 0; row < rows_; ++row) {
      fn(row, static_cast<const std::size_t*>(o.data()));
      for (std::size_t a = o.size(); a-- > 0;) {
        if (++o[a] < shape_[a]) break;
        o[a] = 0;
      }
    }
  }

  void prepare_terms(std::span<const BlockTerm> terms) {
    const double inv = 1.0 / eps_;
    for (const BlockTerm& t : terms) {
      check_block(shape_, t.block);
      const Shape want(shape_.begin() + t.block.begin, shape_.begin() + t.block.end);
      if (t.values.shape() != want) {
        throw ConfigError("sinkhorn: block term shape " + shape_string(t.values.shape()) + " does not match " +
                          shape_string(want));
      }
      PreparedTerm p;
      p.block = t.block;
      p.has_last = t.block.end == rank_;
      p.log_values.resize(t.values.size());
      p.lo = std::numeric_limits<double>::infinity();
      p.hi = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < t.values.size(); ++k) {
        p.log_values[k] = -t.values[k] * inv;
        p.lo = std::min(p.lo, p.log_values[k]);
        p.hi = std::max(p.hi, p.log_values[k]);
      }
      if (p.has_last && base_.has_exp) {
        p.exp_values.resize(p.log_values.size());
        for (std::size_t k = 0; k < p.log_values.size(); ++k) p.exp_values[k] = std::exp(p.log_values[k]);
      }
      terms_.push_back(std::move(p));
    }
    // Per-row constants and lookup offsets are fixed for the life of the solve.
    row_const_.assign(rows_, 0.0);
    for (const PreparedTerm& t : terms_) {
      if (t.has_last) last_terms_.push_back(&t);
    }
    last_offsets_.assign(rows_ * last_terms_.size(), 0);
    for_each_row([&](std::size_t row, const std::size_t* o) {
      std::size_t lt = 0;
      for (const PreparedTerm& t : terms_) {
        const std::size_t stop = std::min(t.block.end, rank_ - 1);
        std::size_t off = 0;
        for (std::size_t a = t.block.begin; a < stop; ++a) off = off * shape_[a] + o[a];
        if (t.has_last) last_offsets_[row * last_terms_.size() + lt++] = off * last_;
        else row_const_[row] += t.log_values[off];
      }
    });
  }

  /// log K + sum of the g's over the row, skipping axis `skip` (pass rank_ to keep all).
  void log_row(std::size_t row, const std::size_t* o, std::size_t skip, double* out) const {
    double c = row_const_[row];
    for (std::size_t j = 0; j + 1 < rank_; ++j) {
      if (j != skip) c += g_[j][o[j]];
    }
    const double* lb = base_.log_base.data() + row * last_;
    const std::vector<double>& gl = g_[rank_ - 1];
    const bool with_last = skip != rank_ - 1;
    for (std::size_t i = 0; i < last_; ++i) out[i] = lb[i] + c + (with_last ? gl[i] : 0.0);
    for (std::size_t t = 0; t < last_terms_.size(); ++t) {
      const double* tv = last_terms_[t]->log_values.data() + last_offsets_[row * last_terms_.size() + t];
      for (std::size_t i = 0; i < last_; ++i) out[i] += tv[i];
    }
  }

  /// Moves the scalings into the log potentials g, leaving v = 1.
  void fold_scalings() {
    for (std::size_t n = 0; n < rank_; ++n) {
      for (std::size_t k = 0; k < shape_[n]; ++k) {
        const double v = v_[n][k];
        if (mu_[n][k] <= 0.0 || v <= 0.0) g_[n][k] = kLogZero;
        else if (v != 1.0) g_[n][k] += std::log(v);
        v_[n][k] = 1.0;
      }
    }
  }

  static void widen(double x, double& lo, double& hi) {
    if (x <= kLogZero * 0.5) return;  // contributes an exact zero
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }

  /// Whether every factor of K = exp(log K_base) * exp(row part) * exp(last part) stays
  /// far from under- and overflow, so the product equals the direct exponential up to rounding.
  bool product_form_safe(const std::vector<double>& row_exp) const {
    if (!base_.has_exp) return false;
    double rlo = std::numeric_limits<double>::infinity(), rhi = -rlo;
    for (double x : row_exp) widen(x, rlo, rhi);
    double llo = std::numeric_limits<double>::infinity(), lhi = -llo;
    for (double x : g_[rank_ - 1]) widen(x, llo, lhi);
    if (rlo > rhi || llo > lhi) return false;
    double lo = base_.log_min + rlo + llo;
    double hi = base_.log_max + rhi + lhi;
    for (const PreparedTerm* t : last_terms_) {
      lo += t->lo;
      hi += t->hi;
    }
    const double bound = kSafeExponent;
    return base_.log_min > -bound && lo > -bound && hi < bound && rhi < bound && rlo > -bound && lhi < bound &&
           llo > -bound;
  }

  /// Folds the scalings into g and rebuilds K = exp(log K_base + terms + sum g).
  void absorb() {
    fold_scalings();
    std::vector<double> row_exp(rows_);
    for_each_row([&](std::size_t row, const std::size_t* o) {
      double c = row_const_[row];
      for (std::size_t j = 0; j + 1 < rank_; ++j) c += g_[j][o[j]];
      row_exp[row] = c;
    });
    if (product_form_safe(row_exp)) {
      std::vector<double> el(last_);
      for (std::size_t i = 0; i < last_; ++i) el[i] = std::exp(g_[rank_ - 1][i]);
      for (std::size_t row = 0; row < rows_; ++row) {
        const double r = std::exp(row_exp[row]);
        const double* eb = base_.exp_base.data() + row * last_;
        double* k = kernel_.data() + row * last_;
        for (std::size_t i = 0; i < last_; ++i) k[i] = eb[i] * r * el[i];
        for (std::size_t t = 0; t < last_terms_.size(); ++t) {
          const double* tv = last_terms_[t]->exp_values.data() + last_offsets_[row * last_terms_.size() + t];
          for (std::size_t i = 0; i < last_; ++i) k[i] *= tv[i];
        }
      }
    } else {
      for_each_row([&](std::size_t row, const std::size_t* o) {
        double* k = kernel_.data() + row * last_;
        log_row(row, o, rank_, k);
        for (std::size_t i = 0; i < last_; ++i) k[i] = std::exp(k[i]);
      });
    }
    rowdot_valid_ = false;
  }

  /// Multiplicative update of axis n. Returns false if some contraction is zero or non-finite.
  bool scaling_update(std::size_t n) {
    std::vector<double> r(shape_[n], 0.0);
    const std::vector<double>& vl = v_[rank_ - 1];
    if (n + 1 < rank_) {
      if (!rowdot_valid_) {
        for (std::size_t row = 0; row < rows_; ++row) rowdot_[row] = dot(kernel_.data() + row * last_, vl.data(), last_);
        rowdot_valid_ = true;
      }
      for_each_row([&](std::size_t row, const std::size_t* o) {
        double w = rowdot_[row];
        for (std::size_t j = 0; j + 1 < rank_; ++j) {
          if (j != n) w *= v_[j][o[j]];
        }
        r[o[n]] += w;
      });
    } else {
      for_each_row([&](std::size_t row, const std::size_t* o) {
        double w = 1.0;
        for (std::size_t j = 0; j + 1 < rank_; ++j) w *= v_[j][o[j]];
        axpy(w, kernel_.data() + row * last_, r.data(), last_);
      });
    }
    const std::vector<double>& mu = mu_[n];
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (mu[k] > 0.0) {
        const double nv = mu[k] / r[k];
        if (!(r[k] > 0.0 && std::isfinite(r[k]) && nv > 0.0 && std::isfinite(nv))) return false;
      }
    }
    bool out_of_range = false;
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double nv = mu[k] > 0.0 ? mu[k] / r[k] : 0.0;
      if (mu[k] > 0.0 && !(nv > 1.0 / kScalingBound && nv < kScalingBound)) out_of_range = true;
      v_[n][k] = nv;
    }
    if (n + 1 == rank_) rowdot_valid_ = false;
    if (out_of_range) absorb();
    return true;
  }

  /// Max-shifted log-sum-exp update of g_n; assumes all scalings are 1.
  void log_update(std::size_t n) {
    const std::size_t an = shape_[n];
    std::vector<double> peak(an, -std::numeric_limits<double>::infinity());
    std::vector<double> acc(an, 0.0);
    const bool last_axis = (n + 1 == rank_);
    std::vector<double> z(last_);
    auto visit = [&](auto&& body) {
      for_each_row([&](std::size_t row, const std::size_t* o) {
        log_row(row, o, n, z.data());
        for (std::size_t i = 0; i < last_; ++i) body(last_axis ? i : o[n], z[i]);
      });
    };
    visit([&](std::size_t slot, double x) { peak[slot] = std::max(peak[slot], x); });
    visit([&](std::size_t slot, double x) { acc[slot] += std::exp(x - peak[slot]); });
    for (std::size_t k = 0; k < an; ++k) {
      const double m = mu_[n][k];
      g_[n][k] = m > 0.0 ? std::log(m) - (peak[k] + std::log(acc[k])) : kLogZero;
    }
  }

  Shape shape_;
  const MarginalFamily& mu_;
  double eps_;
  const KernelCache& base_;
  std::size_t rank_ = 0;
  std::size_t last_ = 0;
  std::size_t total_ = 0;
  std::size_t rows_ = 0;
  std::vector<PreparedTerm> terms_;
  std::vector<const PreparedTerm*> last_terms_;
  std::vector<std::size_t> last_offsets_;
  std::vector<double> row_const_;
  std::vector<double> kernel_;
  std::vector<double> rowdot_;
  bool rowdot_valid_ = false;
  std::vector<std::vector<double>> g_;
  std::vector<std::vector<double>> v_;
};

inline SinkhornResult run_sinkhorn(const DenseTensor& cost, std::span<const BlockTerm> terms, const MarginalFamily& mu,
                                   const SinkhornConfig& cfg, const DualPotentials* init, KernelCache* cache) {
  cfg.validate();
  KernelCache local;
  KernelCache& base = cache ? *cache : local;
  // Without a reusable cache, exp(-C/eps) would cost as much as one direct assembly.
  base.prepare(cost, cfg.epsilon, cache != nullptr);
  SinkhornEngine engine(cost, terms, mu, cfg, init, base);
  std::vector<double> trace;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iters = 0;
  while (iters < cfg.max_iters) {
    engine.sweep();
    ++iters;
    if (cfg.record_dual_trace) trace.push_back(engine.current_dual_objective());
    if (iters % cfg.check_every == 0 || iters == cfg.max_iters) {
      residual = engine.residual();
      if (residual <= cfg.tol) {
        converged = true;
        break;
      }
    }
  }
  return engine.finish(iters, residual, converged, std::move(trace));
}

}  // namespace detail

/// Entropic MMOT with effective cost `cost + sum(terms)`; the terms are added inside
/// the kernel assembly so no modified N-D cost tensor is formed by the caller.
inline SinkhornResult sinkhorn_mmot(const DenseTensor& cost, std::span<const BlockTerm> terms,
                                    const MarginalFamily& mu, const SinkhornConfig& cfg,
                                    const DualPotentials* init = nullptr) {
  return detail::run_sinkhorn(cost, terms, mu, cfg, init, nullptr);
}

inline SinkhornResult sinkhorn_mmot(const DenseTensor& cost, const MarginalFamily& mu, const SinkhornConfig& cfg,
                                    const DualPotentials* init = nullptr) {
  return sinkhorn_mmot(cost, std::span<const BlockTerm>{}, mu, cfg, init);
}

/// The KL-referenced form  min <C,P> + eps KL(P | mu_1 (x) ... (x) mu_N), solved as the
/// negative-entropy problem with cost C - eps (+)_n log mu_n.
inline SinkhornResult sinkhorn_mmot_kl(const DenseTensor& cost, const MarginalFamily& mu, const SinkhornConfig& cfg,
                                       const DualPotentials* init = nullptr) {
  std::vector<BlockTerm> shifts;
  for (std::size_t n = 0; n < mu.size(); ++n) {
    std::vector<double> s(mu[n].size());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = mu[n][k] > 0.0 ? -cfg.epsilon * std::log(mu[n][k]) : 0.0;
    shifts.push_back({AxisBlock{n, n + 1}, DenseTensor::vector(std::move(s))});
  }
  return sinkhorn_mmot(cost, shifts, mu, cfg, init);
}

}  // namespace mmotdc
