#pragma once

// Dense N-D tensors of doubles and the probability-tensor operations used by
// the multi-marginal solvers: block marginals, tensor products and sums,
// entropy / KL functionals, and the vec / mat / concat reshapes.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmotdc/error.hpp"

namespace mmotdc {

using Shape = std::vector<std::size_t>;

/// Absolute tolerance on total mass when validating probability tensors.
inline constexpr double kMassTolerance = 1e-9;

/// Stored values below this are treated as exact zeros by the KL support test.
inline constexpr double kZeroThreshold = 1e-300;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

class DenseTensor {
 public:
  /// Rank-0 tensor holding 0.
  DenseTensor() : data_(1, 0.0) {}

  explicit DenseTensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  DenseTensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_) + " (expected " +
                        std::to_string(shape_size(shape_)) + ")");
    }
    if (!all_finite()) throw DomainError("tensor data contains NaN or infinity");
  }

  static DenseTensor scalar(double value) { return DenseTensor(Shape{}, std::vector<double>{value}); }

  static DenseTensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return DenseTensor(Shape{n}, std::move(values));
  }

  static DenseTensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return DenseTensor(Shape{rows, cols}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  template <class... Index>
  double operator()(Index... index) const {
    return data_[offset_of(index...)];
  }
  template <class... Index>
  double& operator()(Index... index) {
    return data_[offset_of(index...)];
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ConfigError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  template <class... Index>
  std::size_t offset_of(Index... index) const {
    assert(sizeof...(Index) == shape_.size());
    const std::size_t idx[] = {static_cast<std::size_t>(index)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(Index); ++a) {
      assert(idx[a] < shape_[a]);
      off = off * shape_[a] + idx[a];
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void debug_check_finite([[maybe_unused]] const DenseTensor& t) {
#ifndef NDEBUG
  if (!t.all_finite()) throw DomainError("operation produced NaN or infinity");
#endif
}

/// Half-open contiguous range of axes [begin, end), zero-based.
struct AxisBlock {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const AxisBlock&, const AxisBlock&) = default;
};

/// Ordered contiguous blocks of axes whose concatenation is (0, ..., N-1).
class TuplePartition {
 public:
  TuplePartition(std::vector<AxisBlock> blocks, std::size_t num_axes)
      : blocks_(std::move(blocks)), num_axes_(num_axes) {
    if (blocks_.empty()) throw ConfigError("partition needs at least one block");
    std::size_t next = 0;
    for (const AxisBlock& b : blocks_) {
      if (b.begin != next || b.end <= b.begin) {
        throw ConfigError("partition blocks must be nonempty, disjoint and contiguous in axis order");
      }
      next = b.end;
    }
    if (next != num_axes_) {
      throw ConfigError("partition covers " + std::to_string(next) + " axes, tensor has " +
                        std::to_string(num_axes_));
    }
  }

  /// Builds a partition from explicit axis lists such as {{0,1},{2,3}}.
  static TuplePartition from_lists(const std::vector<std::vector<std::size_t>>& lists) {
    std::vector<AxisBlock> blocks;
    std::size_t next = 0;
    for (const auto& list : lists) {
      if (list.empty()) throw ConfigError("partition block is empty");
      for (std::size_t k = 0; k < list.size(); ++k) {
        if (list[k] != next + k) {
          throw ConfigError("partition block {" + join(list) +
                            "} is not the next contiguous run of axes (expected axis " +
                            std::to_string(next + k) + ")");
        }
      }
      blocks.push_back({next, next + list.size()});
      next += list.size();
    }
    return TuplePartition(std::move(blocks), next);
  }

  static TuplePartition singletons(std::size_t num_axes) {
    std::vector<AxisBlock> blocks;
    for (std::size_t a = 0; a < num_axes; ++a) blocks.push_back({a, a + 1});
    return TuplePartition(std::move(blocks), num_axes);
  }

  const std::vector<AxisBlock>& blocks() const noexcept { return blocks_; }
  const AxisBlock& block(std::size_t m) const { return blocks_.at(m); }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t num_axes() const noexcept { return num_axes_; }

  /// True iff some block holds a single axis.
  bool degenerate() const {
    return std::any_of(blocks_.begin(), blocks_.end(), [](const AxisBlock& b) { return b.size() == 1; });
  }

  void check_rank(std::size_t rank) const {
    if (rank != num_axes_) {
      throw ConfigError("partition over " + std::to_string(num_axes_) + " axes applied to rank-" +
                        std::to_string(rank) + " tensor");
    }
  }

  std::vector<std::vector<std::size_t>> to_lists() const {
    std::vector<std::vector<std::size_t>> out;
    for (const AxisBlock& b : blocks_) {
      std::vector<std::size_t> list(b.size());
      std::iota(list.begin(), list.end(), b.begin);
      out.push_back(std::move(list));
    }
    return out;
  }

 private:
  static std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  }

  std::vector<AxisBlock> blocks_;
  std::size_t num_axes_;
};

/// A DenseTensor known to be nonnegative with unit mass (within kMassTolerance).
class ProbabilityTensor {
 public:
  explicit ProbabilityTensor(DenseTensor t, double tolerance = kMassTolerance) : t_(std::move(t)) {
    for (double v : t_.values()) {
      if (!(v >= 0.0)) throw DomainError("probability tensor has a negative or NaN entry");
    }
    const double mass = t_.sum();
    if (std::abs(mass - 1.0) > tolerance) {
      throw DomainError("probability tensor mass " + std::to_string(mass) + " differs from 1");
    }
  }

  const DenseTensor& tensor() const noexcept { return t_; }
  operator const DenseTensor&() const noexcept { return t_; }  // NOLINT(google-explicit-constructor)
  const Shape& shape() const noexcept { return t_.shape(); }

 private:
  DenseTensor t_;
};

/// The N prescribed axis marginals mu_1, ..., mu_N.
class MarginalFamily {
 public:
  explicit MarginalFamily(std::vector<std::vector<double>> mu, double tolerance = kMassTolerance)
      : mu_(std::move(mu)) {
    for (std::size_t n = 0; n < mu_.size(); ++n) {
      const auto& v = mu_[n];
      if (v.empty()) throw ConfigError("marginal " + std::to_string(n) + " is empty");
      double mass = 0.0;
      for (double x : v) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
          throw DomainError("marginal " + std::to_string(n) + " has a negative or non-finite entry");
        }
        mass += x;
      }
      if (std::abs(mass - 1.0) > tolerance) {
        throw DomainError("marginal " + std::to_string(n) + " has mass " + std::to_string(mass));
      }
    }
  }

  static MarginalFamily uniform(const Shape& extents) {
    std::vector<std::vector<double>> mu;
    for (std::size_t a : extents) mu.emplace_back(a, 1.0 / static_cast<double>(a));
    return MarginalFamily(std::move(mu));
  }

  std::size_t size() const noexcept { return mu_.size(); }
  const std::vector<double>& operator[](std::size_t n) const { return mu_[n]; }
  const std::vector<std::vector<double>>& all() const noexcept { return mu_; }

  Shape extents() const {
    Shape s;
    for (const auto& v : mu_) s.push_back(v.size());
    return s;
  }

  void check_shape(const Shape& shape) const {
    if (shape != extents()) {
      throw ConfigError("marginal extents " + shape_string(extents()) + " do not match tensor shape " +
                        shape_string(shape));
    }
  }

 private:
  std::vector<std::vector<double>> mu_;
};

namespace detail {

inline void check_block(const Shape& shape, const AxisBlock& block) {
  if (block.begin >= block.end || block.end > shape.size()) {
    throw ConfigError("axis range [" + std::to_string(block.begin) + "," + std::to_string(block.end) +
                      ") invalid for tensor of shape " + shape_string(shape));
  }
}

/// Sizes of the axes before, inside and after a contiguous block.
struct BlockSplit {
  std::size_t outer = 1;
  std::size_t middle = 1;
  std::size_t inner = 1;
};

inline BlockSplit split_at(const Shape& shape, const AxisBlock& block) {
  BlockSplit s;
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (a < block.begin) s.outer *= shape[a];
    else if (a < block.end) s.middle *= shape[a];
    else s.inner *= shape[a];
  }
  return s;
}

inline void check_same_shape(const DenseTensor& a, const DenseTensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

}  // namespace detail

/// Sum of P over every axis outside `block`.
inline DenseTensor marginalize(const DenseTensor& p, const AxisBlock& block) {
  detail::check_block(p.shape(), block);
  const auto [outer, middle, inner] = detail::split_at(p.shape(), block);
  DenseTensor out(Shape(p.shape().begin() + block.begin, p.shape().begin() + block.end));
  auto src = p.values();
  auto dst = out.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < middle; ++m) {
      const double* row = src.data() + (o * middle + m) * inner;
      double acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) acc += row[i];
      dst[m] += acc;
    }
  }
  debug_check_finite(out);
  return out;
}

/// log of marginalize(exp(log_p), block), computed with max-shifted log-sum-exp.
inline DenseTensor log_marginalize(const DenseTensor& log_p, const AxisBlock& block) {
  detail::check_block(log_p.shape(), block);
  const auto [outer, middle, inner] = detail::split_at(log_p.shape(), block);
  Shape out_shape(log_p.shape().begin() + block.begin, log_p.shape().begin() + block.end);
  std::vector<double> peak(middle, -std::numeric_limits<double>::infinity());
  auto src = log_p.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < middle; ++m) {
      const double* row = src.data() + (o * middle + m) * inner;
      for (std::size_t i = 0; i < inner; ++i) peak[m] = std::max(peak[m], row[i]);
    }
  }
  std::vector<double> acc(middle, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < middle; ++m) {
      const double* row = src.data() + (o * middle + m) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += std::exp(row[i] - peak[m]);
      acc[m] += s;
    }
  }
  for (std::size_t m = 0; m < middle; ++m) acc[m] = peak[m] + std::log(acc[m]);
  return DenseTensor(std::move(out_shape), std::move(acc));
}

/// Marginal over an arbitrary strictly increasing list of axes (not limited to partitions).
inline DenseTensor marginalize_axes(const DenseTensor& p, std::span<const std::size_t> axes) {
  const Shape& shape = p.shape();
  Shape out_shape;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    if (axes[k] >= shape.size() || (k > 0 && axes[k] <= axes[k - 1])) {
      throw ConfigError("marginal axes must be strictly increasing and within rank " +
                        std::to_string(shape.size()));
    }
    out_shape.push_back(shape[axes[k]]);
  }
  if (axes.empty()) return DenseTensor::scalar(p.sum());
  DenseTensor out(out_shape);
  // Stride contributed to the output offset by each input axis (0 for summed axes).
  std::vector<std::size_t> out_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = axes.size(); k-- > 0;) {
    out_stride[axes[k]] = stride;
    stride *= out_shape[k];
  }
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t out_off = 0;
  auto src = p.values();
  auto dst = out.values();
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    dst[out_off] += src[flat];
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) {
        out_off += out_stride[a];
        break;
      }
      out_off -= out_stride[a] * (shape[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}

/// Outer product; the result's multi-index is the concatenation of the factors' indices.
inline DenseTensor tensor_product(std::span<const DenseTensor> factors) {
  if (factors.empty()) throw ConfigError("tensor_product needs at least one factor");
  DenseTensor acc = factors[0];
  for (std::size_t f = 1; f < factors.size(); ++f) {
    const DenseTensor& b = factors[f];
    Shape shape = acc.shape();
    shape.insert(shape.end(), b.shape().begin(), b.shape().end());
    DenseTensor next(shape);
    auto out = next.values();
    const std::size_t nb = b.size();
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double a = acc[i];
      for (std::size_t j = 0; j < nb; ++j) out[i * nb + j] = a * b[j];
    }
    acc = std::move(next);
  }
  debug_check_finite(acc);
  return acc;
}

inline DenseTensor tensor_product(std::initializer_list<DenseTensor> factors) {
  return tensor_product(std::span<const DenseTensor>(factors.begin(), factors.size()));
}

/// Generalized (A + B)_{i,j} = A_i + B_j over any number of blocks.
inline DenseTensor tensor_sum(std::span<const DenseTensor> blocks) {
  if (blocks.empty()) return DenseTensor::scalar(0.0);
  DenseTensor acc = blocks[0];
  for (std::size_t f = 1; f < blocks.size(); ++f) {
    const DenseTensor& b = blocks[f];
    Shape shape = acc.shape();
    shape.insert(shape.end(), b.shape().begin(), b.shape().end());
    DenseTensor next(shape);
    auto out = next.values();
    const std::size_t nb = b.size();
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double a = acc[i];
      for (std::size_t j = 0; j < nb; ++j) out[i * nb + j] = a + b[j];
    }
    acc = std::move(next);
  }
  debug_check_finite(acc);
  return acc;
}

inline DenseTensor tensor_sum(std::span<const DenseTensor> blocks, const Shape& target) {
  Shape concat;
  for (const auto& b : blocks) concat.insert(concat.end(), b.shape().begin(), b.shape().end());
  if (concat != target) {
    throw ConfigError("tensor_sum block shapes concatenate to " + shape_string(concat) +
                      ", target is " + shape_string(target));
  }
  return tensor_sum(blocks);
}

inline std::vector<DenseTensor> block_marginals(const DenseTensor& p, const TuplePartition& partition) {
  partition.check_rank(p.rank());
  std::vector<DenseTensor> out;
  out.reserve(partition.num_blocks());
  for (const AxisBlock& b : partition.blocks()) out.push_back(marginalize(p, b));
  return out;
}

/// P_{#T}: tensor product of all block marginals of P.
inline DenseTensor factored_projection(const DenseTensor& p, const TuplePartition& partition) {
  return tensor_product(block_marginals(p, partition));
}

inline double inner(const DenseTensor& a, const DenseTensor& b) {
  detail::check_same_shape(a, b, "inner");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// H(P) = sum p log p with 0 log 0 = 0.
inline double neg_entropy(const DenseTensor& p) {
  double acc = 0.0;
  for (double v : p.values()) {
    if (v < 0.0) throw DomainError("neg_entropy: negative entry");
    if (v > 0.0) acc += v * std::log(v);
  }
  return acc;
}

/// KL(P | Q); +infinity when P is not absolutely continuous w.r.t. Q.
inline double kl_divergence(const DenseTensor& p, const DenseTensor& q) {
  detail::check_same_shape(p, q, "kl_divergence");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pv = p[i];
    const double qv = q[i];
    if (pv < 0.0 || qv < 0.0) throw DomainError("kl_divergence: negative entry");
    if (pv < kZeroThreshold) continue;
    if (qv < kZeroThreshold) return std::numeric_limits<double>::infinity();
    acc += pv * std::log(pv / qv);
  }
  return acc;
}

// Reshapes. With row-major storage, A_{i,j} -> b_{i*n+j} and
// P_{i,j,k,l} -> A_{i*n2+j, k*n4+l} leave the flat data untouched.

inline DenseTensor vectorize(const DenseTensor& a) {
  if (a.rank() != 2) throw ConfigError("vectorize expects a matrix, got shape " + shape_string(a.shape()));
  return DenseTensor(Shape{a.size()}, std::vector<double>(a.values().begin(), a.values().end()));
}

inline DenseTensor unvectorize(const DenseTensor& b, std::size_t rows, std::size_t cols) {
  if (b.rank() != 1 || b.size() != rows * cols) throw ConfigError("unvectorize: length mismatch");
  return DenseTensor(Shape{rows, cols}, std::vector<double>(b.values().begin(), b.values().end()));
}

inline DenseTensor matricize(const DenseTensor& p) {
  if (p.rank() != 4) throw ConfigError("matricize expects a 4-D tensor, got shape " + shape_string(p.shape()));
  const Shape& s = p.shape();
  return DenseTensor(Shape{s[0] * s[1], s[2] * s[3]}, std::vector<double>(p.values().begin(), p.values().end()));
}

inline DenseTensor dematricize(const DenseTensor& a, const Shape& shape4) {
  if (a.rank() != 2 || shape4.size() != 4 || a.extent(0) != shape4[0] * shape4[1] ||
      a.extent(1) != shape4[2] * shape4[3]) {
    throw ConfigError("dematricize: matrix shape " + shape_string(a.shape()) + " incompatible with " +
                      shape_string(shape4));
  }
  return DenseTensor(shape4, std::vector<double>(a.values().begin(), a.values().end()));
}

/// Stacks two equal-column matrices vertically.
inline DenseTensor concat_v(const DenseTensor& top, const DenseTensor& bottom) {
  if (top.rank() != 2 || bottom.rank() != 2 || top.extent(1) != bottom.extent(1)) {
    throw ConfigError("concat_v: column counts differ (" + shape_string(top.shape()) + " vs " +
                      shape_string(bottom.shape()) + ")");
  }
  std::vector<double> data(top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return DenseTensor(Shape{top.extent(0) + bottom.extent(0), top.extent(1)}, std::move(data));
}

/// Stacks two equal-row matrices horizontally.
inline DenseTensor concat_h(const DenseTensor& left, const DenseTensor& right) {
  if (left.rank() != 2 || right.rank() != 2 || left.extent(0) != right.extent(0)) {
    throw ConfigError("concat_h: row counts differ (" + shape_string(left.shape()) + " vs " +
                      shape_string(right.shape()) + ")");
  }
  const std::size_t rows = left.extent(0);
  const std::size_t cl = left.extent(1);
  const std::size_t cr = right.extent(1);
  std::vector<double> data;
  data.reserve(rows * (cl + cr));
  for (std::size_t r = 0; r < rows; ++r) {
    data.insert(data.end(), left.values().begin() + r * cl, left.values().begin() + (r + 1) * cl);
    data.insert(data.end(), right.values().begin() + r * cr, right.values().begin() + (r + 1) * cr);
  }
  return DenseTensor(Shape{rows, cl + cr}, std::move(data));
}

/// mu_1 (x) ... (x) mu_N.
inline DenseTensor product_measure(const MarginalFamily& mu) {
  std::vector<DenseTensor> factors;
  for (const auto& v : mu.all()) factors.push_back(DenseTensor::vector(v));
  return tensor_product(factors);
}

}  // namespace mmotdc
