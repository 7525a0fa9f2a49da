// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/errors.hpp"

namespace helut {

using Index = Eigen::Index;

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// A rectangular nonzero region. An empty `values` marks a structural block
// whose entries are all treated as nonzero.
template <typename Scalar>
struct MatrixBlock {
  Index row0 = 0;
  Index col0 = 0;
  Index rows = 0;
  Index cols = 0;
  DenseMatrix<Scalar> values;

  bool structural() const { return values.size() == 0; }
};

template <typename Scalar = double>
class BlockSparseMatrix {
 public:
  BlockSparseMatrix() = default;
  BlockSparseMatrix(Index rows, Index cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ParameterError("negative matrix shape");
  }

  template <typename Derived>
  static BlockSparseMatrix from_dense(const Eigen::MatrixBase<Derived>& m) {
    BlockSparseMatrix out(m.rows(), m.cols());
    if (m.size() > 0) out.add_block(0, 0, m.template cast<Scalar>());
    return out;
  }

  void add_block(Index row0, Index col0, DenseMatrix<Scalar> values) {
    const Index r = values.rows();
    const Index c = values.cols();
    check_fits(row0, col0, r, c);
    blocks_.push_back(MatrixBlock<Scalar>{row0, col0, r, c, std::move(values)});
  }

  void add_structural_block(Index row0, Index col0, Index rows, Index cols) {
    check_fits(row0, col0, rows, cols);
    blocks_.push_back(MatrixBlock<Scalar>{row0, col0, rows, cols, DenseMatrix<Scalar>()});
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  const std::vector<MatrixBlock<Scalar>>& blocks() const { return blocks_; }

  bool structural() const {
    return std::any_of(blocks_.begin(), blocks_.end(),
                       [](const auto& b) { return b.structural(); });
  }

  DenseMatrix<Scalar> dense() const {
    if (structural()) throw ParameterError("structural matrix has no values");
    DenseMatrix<Scalar> m = DenseMatrix<Scalar>::Zero(rows_, cols_);
    for (const auto& b : blocks_) m.block(b.row0, b.col0, b.rows, b.cols) += b.values;
    return m;
  }

  BlockSparseMatrix transpose() const {
    BlockSparseMatrix out(cols_, rows_);
    for (const auto& b : blocks_) {
      if (b.structural()) {
        out.add_structural_block(b.col0, b.row0, b.cols, b.rows);
      } else {
        out.add_block(b.col0, b.row0, b.values.transpose());
      }
    }
    return out;
  }

  // Sub-matrix [r0, r1) x [c0, c1) with tile-relative coordinates.
  BlockSparseMatrix tile(Index r0, Index r1, Index c0, Index c1) const {
    BlockSparseMatrix out(r1 - r0, c1 - c0);
    for (const auto& b : blocks_) {
      const Index br0 = std::max(b.row0, r0);
      const Index br1 = std::min(b.row0 + b.rows, r1);
      const Index bc0 = std::max(b.col0, c0);
      const Index bc1 = std::min(b.col0 + b.cols, c1);
      if (br0 >= br1 || bc0 >= bc1) continue;
      if (b.structural()) {
        out.add_structural_block(br0 - r0, bc0 - c0, br1 - br0, bc1 - bc0);
      } else {
        out.add_block(br0 - r0, bc0 - c0,
                      b.values.block(br0 - b.row0, bc0 - b.col0, br1 - br0, bc1 - bc0));
      }
    }
    return out;
  }

 private:
  void check_fits(Index row0, Index col0, Index rows, Index cols) const {
    if (row0 < 0 || col0 < 0 || row0 + rows > rows_ || col0 + cols > cols_) {
      throw LayoutError("block [" + std::to_string(row0) + "+" + std::to_string(rows) + ", " +
                        std::to_string(col0) + "+" + std::to_string(cols) +
                        "] outside matrix " + std::to_string(rows_) + "x" +
                        std::to_string(cols_));
    }
  }

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<MatrixBlock<Scalar>> blocks_;
};

// full_ring: offsets are taken mod n, outputs need no folding.
// compact: offsets are taken mod R = next_pow2(rows); the rotated products are
// folded back onto [0, R) with a rotate-and-sum at stride R.
enum class DiagonalLayout { full_ring, compact };

inline std::string to_string(DiagonalLayout layout) {
  return layout == DiagonalLayout::full_ring ? "full_ring" : "compact";
}

inline DiagonalLayout diagonal_layout_from_string(const std::string& s) {
  if (s == "full_ring") return DiagonalLayout::full_ring;
  if (s == "compact") return DiagonalLayout::compact;
  throw ParameterError("unknown diagonal layout '" + s + "'");
}

// g_t[j] = M[(j + t) mod modulus, j] restricted to its nonzero column window.
template <typename Scalar>
struct Diagonal {
  Index first_col = 0;
  Index last_col = -1;
  SlotVector<Scalar> values;  // empty for structural diagonals

  Index length() const { return last_col - first_col + 1; }
};

template <typename Scalar = double>
class DiagonalizedMatrix {
 public:
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index slots() const { return slots_; }
  Index modulus() const { return modulus_; }
  DiagonalLayout layout() const { return layout_; }
  bool has_values() const { return has_values_; }
  const std::map<Index, Diagonal<Scalar>>& diagonals() const { return diagonals_; }
  Index nonzero_count() const { return static_cast<Index>(diagonals_.size()); }
  bool has_offset(Index t) const { return diagonals_.count(t) > 0; }

  std::vector<Index> offsets() const {
    std::vector<Index> out;
    out.reserve(diagonals_.size());
    for (const auto& [t, d] : diagonals_) out.push_back(t);
    return out;
  }

  // Signed rotate-right amount applied to diagonal t.
  Index shift(Index t) const {
    if (layout_ == DiagonalLayout::compact) return t;
    return (arc_start_ > 0 && t >= arc_start_) ? t - slots_ : t;
  }

  static DiagonalizedMatrix from_blocks(const BlockSparseMatrix<Scalar>& m,
                                        const VmParams& params, DiagonalLayout layout);

  // One past the highest slot touched before folding.
  Index support() const { return support_; }
  Index fold_blocks() const { return fold_blocks_; }
  int fold_rotations() const { return ilog2(fold_blocks_); }

  // rot_right(g_t, right) materialized over the slot ring.
  SlotVector<Scalar> plaintext_slots(Index t, Index right) const {
    const Diagonal<Scalar>& d = diagonals_.at(t);
    SlotVector<Scalar> out = SlotVector<Scalar>::Zero(slots_);
    if (d.values.size() == 0) return out;
    for (Index k = 0; k < d.length(); ++k) {
      out(pos_mod(d.first_col + k + right, slots_)) = d.values(k);
    }
    return out;
  }

  // Plaintext evaluation of the diagonal identity, length-rows result.
  SlotVector<Scalar> apply(const SlotVector<Scalar>& x) const {
    if (!has_values_) throw ParameterError("structural diagonals cannot be applied");
    if (x.size() != cols_) throw LayoutError("apply: vector length mismatch");
    SlotVector<Scalar> z = SlotVector<Scalar>::Zero(slots_);
    for (const auto& [t, d] : diagonals_) {
      const Index s = shift(t);
      for (Index k = 0; k < d.length(); ++k) {
        const Index j = d.first_col + k;
        z(pos_mod(j + s, slots_)) += d.values(k) * x(j);
      }
    }
    SlotVector<Scalar> out = SlotVector<Scalar>::Zero(rows_);
    for (Index f = 0; f < fold_blocks_; ++f) {
      for (Index i = 0; i < rows_; ++i) out(i) += z(pos_mod(i + f * modulus_, slots_));
    }
    return out;
  }

 private:
  void finalize() {
    support_ = 0;
    for (const auto& [t, d] : diagonals_) support_ = std::max(support_, t + d.last_col + 1);
    fold_blocks_ = 1;
    if (layout_ == DiagonalLayout::compact && support_ > modulus_) {
      fold_blocks_ = std::min(next_pow2(ceil_div(support_, modulus_)), slots_ / modulus_);
    }
    arc_start_ = 0;
    if (layout_ == DiagonalLayout::full_ring && diagonals_.size() > 1) {
      Index prev = -1;
      Index first = diagonals_.begin()->first;
      Index best_gap = first + slots_ - diagonals_.rbegin()->first;
      for (const auto& [t, d] : diagonals_) {
        if (prev >= 0 && t - prev > best_gap) {
          best_gap = t - prev;
          arc_start_ = t;
        }
        prev = t;
      }
    }
  }

  Index rows_ = 0;
  Index cols_ = 0;
  Index slots_ = 0;
  Index modulus_ = 0;
  DiagonalLayout layout_ = DiagonalLayout::full_ring;
  bool has_values_ = true;
  std::map<Index, Diagonal<Scalar>> diagonals_;
  Index support_ = 0;
  Index fold_blocks_ = 1;
  Index arc_start_ = 0;
};

namespace detail {

// Column window of a structural rectangle on residue t, or {1, 0} if empty.
inline std::pair<Index, Index> rect_window(Index t, Index r0, Index r1, Index c0, Index c1,
                                           Index m) {
  const Index u0 = pos_mod(c0 + t, m);
  Index first = (u0 >= r0 && u0 < r1) ? c0 : c0 + pos_mod(r0 - u0, m);
  const Index u1 = pos_mod(c1 - 1 + t, m);
  Index last = (u1 >= r0 && u1 < r1) ? c1 - 1 : c1 - 1 - pos_mod(u1 - (r1 - 1), m);
  if (first > c1 - 1 || last < c0 || first > last) return {1, 0};
  return {first, last};
}

}  // namespace detail

template <typename Scalar>
DiagonalizedMatrix<Scalar> DiagonalizedMatrix<Scalar>::from_blocks(
    const BlockSparseMatrix<Scalar>& m, const VmParams& params, DiagonalLayout layout) {
  params.validate();
  const Index n = params.n;
  if (m.rows() > n || m.cols() > n) {
    throw CapacityError("matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                        " exceeds slot count " + std::to_string(n) + "; tile it first");
  }
  DiagonalizedMatrix<Scalar> out;
  out.rows_ = m.rows();
  out.cols_ = m.cols();
  out.slots_ = n;
  out.layout_ = layout;
  out.modulus_ =
      layout == DiagonalLayout::full_ring ? n : std::max<Index>(1, next_pow2(m.rows()));
  out.has_values_ = !m.structural();
  const Index mod = out.modulus_;

  std::vector<Index> first(static_cast<std::size_t>(mod), std::numeric_limits<Index>::max());
  std::vector<Index> last(static_cast<std::size_t>(mod), -1);

  if (out.has_values_) {
    for (const auto& b : m.blocks()) {
      for (Index jj = 0; jj < b.cols; ++jj) {
        const Index j = b.col0 + jj;
        for (Index ii = 0; ii < b.rows; ++ii) {
          if (b.values(ii, jj) == Scalar(0)) continue;
          const auto t = static_cast<std::size_t>(pos_mod(b.row0 + ii - j, mod));
          first[t] = std::min(first[t], j);
          last[t] = std::max(last[t], j);
        }
      }
    }
    for (Index t = 0; t < mod; ++t) {
      if (last[t] < 0) continue;
      Diagonal<Scalar> d{first[t], last[t], SlotVector<Scalar>::Zero(last[t] - first[t] + 1)};
      out.diagonals_.emplace(t, std::move(d));
    }
    for (const auto& b : m.blocks()) {
      for (Index jj = 0; jj < b.cols; ++jj) {
        const Index j = b.col0 + jj;
        for (Index ii = 0; ii < b.rows; ++ii) {
          const Scalar v = b.values(ii, jj);
          if (v == Scalar(0)) continue;
          auto& d = out.diagonals_.at(pos_mod(b.row0 + ii - j, mod));
          d.values(j - d.first_col) += v;
        }
      }
    }
  } else {
    for (const auto& b : m.blocks()) {
      if (b.rows == 0 || b.cols == 0) continue;
      const Index r0 = b.row0, r1 = b.row0 + b.rows, c0 = b.col0, c1 = b.col0 + b.cols;
      const Index count = std::min(mod, b.rows + b.cols - 1);
      const Index start = pos_mod(r0 - (c1 - 1), mod);
      for (Index k = 0; k < count; ++k) {
        const Index t = pos_mod(start + k, mod);
        auto [f, l] = detail::rect_window(t, r0, r1, c0, c1, mod);
        if (f > l) continue;
        first[t] = std::min(first[t], f);
        last[t] = std::max(last[t], l);
      }
    }
    for (Index t = 0; t < mod; ++t) {
      if (last[t] < 0) continue;
      out.diagonals_.emplace(t, Diagonal<Scalar>{first[t], last[t], SlotVector<Scalar>()});
    }
  }
  out.finalize();
  return out;
}

template <typename Scalar>
DiagonalizedMatrix<Scalar> diagonalize(const BlockSparseMatrix<Scalar>& m, const VmParams& params,
                                       DiagonalLayout layout = DiagonalLayout::full_ring) {
  return DiagonalizedMatrix<Scalar>::from_blocks(m, params, layout);
}

template <typename Derived>
DiagonalizedMatrix<typename Derived::Scalar> diagonalize(
    const Eigen::MatrixBase<Derived>& m, const VmParams& params,
    DiagonalLayout layout = DiagonalLayout::full_ring) {
  using S = typename Derived::Scalar;
  return diagonalize(BlockSparseMatrix<S>::from_dense(m), params, layout);
}

// Each offset s is split as s = g * n1 + b with 0 <= b < n1.
struct BsgsPlan {
  Index n1 = 1;
  Index n2 = 1;
  Index giant_min = 0;
  std::map<Index, std::pair<Index, Index>> assignment;  // diagonal key -> (g, b)
  Index baby_rotations = 0;
  Index giant_rotations = 0;

  Index rotations() const { return baby_rotations + giant_rotations; }
  Index bound() const { return (n1 - 1) + (n2 - 1); }
};

namespace detail {

struct SplitCost {
  Index babies = 0;
  Index giants = 0;
  Index gmin = 0;
  Index gmax = 0;
};

inline SplitCost split_cost(std::span<const Index> shifts, Index n1, Index smin, Index smax,
                            std::vector<char>& seen_b, std::vector<char>& seen_g) {
  SplitCost c;
  c.gmin = floor_div(smin, n1);
  c.gmax = floor_div(smax, n1);
  seen_b.assign(static_cast<std::size_t>(n1), 0);
  seen_g.assign(static_cast<std::size_t>(c.gmax - c.gmin + 1), 0);
  for (Index s : shifts) {
    const Index g = floor_div(s, n1);
    const Index b = s - g * n1;
    if (b != 0 && !seen_b[static_cast<std::size_t>(b)]) {
      seen_b[static_cast<std::size_t>(b)] = 1;
      ++c.babies;
    }
    if (g != 0 && !seen_g[static_cast<std::size_t>(g - c.gmin)]) {
      seen_g[static_cast<std::size_t>(g - c.gmin)] = 1;
      ++c.giants;
    }
  }
  return c;
}

}  // namespace detail

// Picks the baby-step width minimizing logged rotations over the actual offset
// set; ties go to the most balanced split, then the smaller n1.
inline BsgsPlan plan_bsgs_shifts(std::span<const Index> shifts) {
  BsgsPlan plan;
  if (shifts.empty()) return plan;
  const auto [mn, mx] = std::minmax_element(shifts.begin(), shifts.end());
  const Index smin = *mn, smax = *mx;
  const Index span = smax - smin + 1;
  const auto count = static_cast<Index>(shifts.size());
  const bool contiguous = count == span;
  const auto root = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(span))));
  Index lo = 1;
  Index hi = std::min(span, 4 * root + 4);
  if (!contiguous && count > 4096) {
    lo = std::max<Index>(1, root / 2);
    hi = std::min(span, 2 * root + 2);
  }
  std::vector<char> seen_b, seen_g;
  Index best_rot = std::numeric_limits<Index>::max();
  Index best_imbalance = 0;
  for (Index n1 = lo; n1 <= hi; ++n1) {
    detail::SplitCost c;
    if (contiguous) {
      c.gmin = floor_div(smin, n1);
      c.gmax = floor_div(smax, n1);
      const bool hits_zero_residue = c.gmax > c.gmin || pos_mod(smin, n1) == 0;
      c.babies = std::min(n1, span) - (hits_zero_residue ? 1 : 0);
      c.giants = (c.gmax - c.gmin + 1) - ((c.gmin <= 0 && c.gmax >= 0) ? 1 : 0);
    } else {
      c = detail::split_cost(shifts, n1, smin, smax, seen_b, seen_g);
    }
    const Index rot = c.babies + c.giants;
    const Index n2 = c.gmax - c.gmin + 1;
    const Index imbalance = n1 > n2 ? n1 - n2 : n2 - n1;
    if (rot < best_rot || (rot == best_rot && imbalance < best_imbalance)) {
      best_rot = rot;
      best_imbalance = imbalance;
      plan.n1 = n1;
      plan.n2 = n2;
      plan.giant_min = c.gmin;
      plan.baby_rotations = c.babies;
      plan.giant_rotations = c.giants;
    }
  }
  return plan;
}

template <typename Scalar>
BsgsPlan plan_bsgs(const DiagonalizedMatrix<Scalar>& m) {
  std::vector<Index> shifts;
  shifts.reserve(m.diagonals().size());
  for (const auto& [t, d] : m.diagonals()) shifts.push_back(m.shift(t));
  BsgsPlan plan = plan_bsgs_shifts(shifts);
  for (const auto& [t, d] : m.diagonals()) {
    const Index s = m.shift(t);
    const Index g = floor_div(s, plan.n1);
    plan.assignment.emplace(t, std::make_pair(g, s - g * plan.n1));
  }
  return plan;
}

namespace detail {

template <typename Scalar>
BasicCipherVec<Scalar> fold(Evaluator<Scalar>& vm, const DiagonalizedMatrix<Scalar>& m,
                            BasicCipherVec<Scalar> acc) {
  for (Index step = m.modulus(); step < m.fold_blocks() * m.modulus(); step *= 2) {
    acc = vm.add(acc, vm.rotate(acc, step));
  }
  return acc;
}

template <typename Scalar>
BasicPlainVec<Scalar> diagonal_plain(Evaluator<Scalar>& vm, const DiagonalizedMatrix<Scalar>& m,
                                     Index t, Index right) {
  if (!vm.functional()) return BasicPlainVec<Scalar>();
  if (!m.has_values()) throw ParameterError("functional matvec needs diagonal values");
  return BasicPlainVec<Scalar>(m.plaintext_slots(t, right));
}

template <typename Scalar>
void check_matvec(const Evaluator<Scalar>& vm, const DiagonalizedMatrix<Scalar>& m) {
  if (m.slots() != vm.slots()) {
    throw LayoutError("diagonals built for " + std::to_string(m.slots()) +
                      " slots, machine has " + std::to_string(vm.slots()));
  }
}

template <typename Scalar>
BasicCipherVec<Scalar> zero_product(Evaluator<Scalar>& vm, const BasicCipherVec<Scalar>& x) {
  return vm.mul(x, vm.constant(Scalar(0), 0));
}

}  // namespace detail

// One rotation per nonzero offset other than zero, one multiply per diagonal.
template <typename Scalar>
BasicCipherVec<Scalar> matvec_hs(Evaluator<Scalar>& vm, const DiagonalizedMatrix<Scalar>& m,
                                 const BasicCipherVec<Scalar>& x) {
  detail::check_matvec(vm, m);
  if (m.nonzero_count() == 0) return detail::zero_product(vm, x);
  std::optional<BasicCipherVec<Scalar>> acc;
  for (const auto& [t, d] : m.diagonals()) {
    const Index s = m.shift(t);
    auto xr = vm.rotate_right(x, s);
    auto term = vm.mul(xr, detail::diagonal_plain(vm, m, t, s));
    acc = acc ? vm.add(*acc, term) : term;
  }
  return detail::fold(vm, m, *acc);
}

template <typename Scalar>
BasicCipherVec<Scalar> matvec_bsgs(Evaluator<Scalar>& vm, const DiagonalizedMatrix<Scalar>& m,
                                   const BsgsPlan& plan, const BasicCipherVec<Scalar>& x) {
  detail::check_matvec(vm, m);
  if (plan.assignment.size() != m.diagonals().size()) {
    throw PlanningError("plan does not cover the diagonal set");
  }
  if (m.nonzero_count() == 0) return detail::zero_product(vm, x);

  std::map<Index, std::vector<std::pair<Index, Index>>> groups;  // g -> (key, b)
  std::map<Index, BasicCipherVec<Scalar>> babies;
  for (const auto& [t, gb] : plan.assignment) {
    const auto [g, b] = gb;
    if (!m.has_offset(t)) throw PlanningError("plan references unknown diagonal");
    if (b < 0 || b >= plan.n1) throw PlanningError("baby step outside [0, n1)");
    groups[g].emplace_back(t, b);
    if (!babies.count(b)) babies.emplace(b, vm.rotate_right(x, b, true));
  }

  std::optional<BasicCipherVec<Scalar>> acc;
  for (const auto& [g, members] : groups) {
    std::vector<BasicCipherVec<Scalar>> terms;
    terms.reserve(members.size());
    for (const auto& [t, b] : members) {
      terms.push_back(vm.mul(babies.at(b), detail::diagonal_plain(vm, m, t, b)));
    }
    auto inner = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) inner = vm.add(inner, terms[i]);
    terms.clear();
    auto shifted = vm.rotate_right(inner, g * plan.n1);
    acc = acc ? vm.add(*acc, shifted) : shifted;
  }
  return detail::fold(vm, m, *acc);
}

// After the call slot b*w holds the sum of slots [b*w, (b+1)*w) for
// w = next_pow2(width). With `mask` the other slots are zeroed at one level.
template <typename Scalar>
BasicCipherVec<Scalar> rot_sum(Evaluator<Scalar>& vm, const BasicCipherVec<Scalar>& x,
                               Index width, bool mask = false) {
  if (width < 1) throw ParameterError("rot_sum width must be positive");
  const Index w = next_pow2(width);
  if (w > vm.slots()) throw CapacityError("rot_sum width exceeds slot count");
  auto acc = x;
  for (Index step = 1; step < w; step *= 2) acc = vm.add(acc, vm.rotate(acc, step));
  if (!mask) return acc;
  BasicPlainVec<Scalar> anchors;
  if (vm.functional()) {
    SlotVector<Scalar> s = SlotVector<Scalar>::Zero(vm.slots());
    for (Index i = 0; i < vm.slots(); i += w) s(i) = Scalar(1);
    anchors = BasicPlainVec<Scalar>(std::move(s));
  }
  return vm.mul(acc, anchors);
}

enum class MatvecAlgo { hs, bsgs };

template <typename Scalar = double>
struct LinearTile {
  Index row_chunk = 0;
  Index col_chunk = 0;
  DiagonalizedMatrix<Scalar> diag;
  BsgsPlan plan;
};

// A linear map wider or taller than one ciphertext, split into n x n tiles.
// Input chunk c feeds columns [c*n, (c+1)*n); output chunk r holds rows
// [r*n, (r+1)*n).
template <typename Scalar = double>
class TiledLinearMap {
 public:
  TiledLinearMap() = default;
  TiledLinearMap(Index rows, Index cols, Index slots, std::vector<LinearTile<Scalar>> tiles)
      : rows_(rows), cols_(cols), slots_(slots), tiles_(std::move(tiles)) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index row_chunks() const { return std::max<Index>(1, ceil_div(rows_, slots_)); }
  Index col_chunks() const { return std::max<Index>(1, ceil_div(cols_, slots_)); }
  const std::vector<LinearTile<Scalar>>& tiles() const { return tiles_; }

  Index diagonal_count() const {
    Index total = 0;
    for (const auto& t : tiles_) total += t.diag.nonzero_count();
    return total;
  }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  Index slots_ = 1;
  std::vector<LinearTile<Scalar>> tiles_;
};

template <typename Scalar>
TiledLinearMap<Scalar> make_tiled(const BlockSparseMatrix<Scalar>& m, const VmParams& params,
                                  DiagonalLayout layout = DiagonalLayout::full_ring) {
  const Index n = params.n;
  const Index rc = std::max<Index>(1, ceil_div(m.rows(), n));
  const Index cc = std::max<Index>(1, ceil_div(m.cols(), n));
  std::vector<LinearTile<Scalar>> tiles;
  for (Index r = 0; r < rc; ++r) {
    for (Index c = 0; c < cc; ++c) {
      auto sub = m.tile(r * n, std::min(m.rows(), (r + 1) * n), c * n,
                        std::min(m.cols(), (c + 1) * n));
      if (sub.blocks().empty()) continue;
      auto diag = diagonalize(sub, params, layout);
      if (diag.nonzero_count() == 0) continue;
      auto plan = plan_bsgs(diag);
      tiles.push_back(LinearTile<Scalar>{r, c, std::move(diag), std::move(plan)});
    }
  }
  return TiledLinearMap<Scalar>(m.rows(), m.cols(), n, std::move(tiles));
}

template <typename Scalar>
std::vector<BasicCipherVec<Scalar>> tiled_matvec(Evaluator<Scalar>& vm,
                                                 const TiledLinearMap<Scalar>& map,
                                                 std::span<const BasicCipherVec<Scalar>> inputs,
                                                 MatvecAlgo algo = MatvecAlgo::bsgs) {
  if (static_cast<Index>(inputs.size()) != map.col_chunks()) {
    throw LayoutError("expected " + std::to_string(map.col_chunks()) + " input ciphertexts, got " +
                      std::to_string(inputs.size()));
  }
  std::vector<std::optional<BasicCipherVec<Scalar>>> acc(static_cast<std::size_t>(map.row_chunks()));
  for (const auto& tile : map.tiles()) {
    const auto& x = inputs[static_cast<std::size_t>(tile.col_chunk)];
    auto y = algo == MatvecAlgo::bsgs ? matvec_bsgs(vm, tile.diag, tile.plan, x)
                                      : matvec_hs(vm, tile.diag, x);
    auto& slot = acc[static_cast<std::size_t>(tile.row_chunk)];
    slot = slot ? vm.add(*slot, y) : y;
  }
  std::vector<BasicCipherVec<Scalar>> out;
  out.reserve(acc.size());
  for (auto& a : acc) out.push_back(a ? *a : detail::zero_product(vm, inputs.front()));
  return out;
}

}  // namespace helut
