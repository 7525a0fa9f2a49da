// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>

#include "helut/errors.hpp"
#include "helut/ledger.hpp"

namespace helut {

template <typename Scalar>
using SlotVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct VmParams {
  std::int64_t n = std::int64_t{1} << 15;  // slot count, ring degree 2n
  int max_level = 24;                      // L
  int boot_level = 12;                     // L_boot
  int min_level = 1;                       // l_min

  void validate() const {
    if (n < 1 || (n & (n - 1)) != 0) {
      throw ParameterError("slot count n must be a power of two, got " + std::to_string(n));
    }
    if (min_level < 0 || min_level > boot_level || boot_level > max_level) {
      throw ParameterError("levels must satisfy 0 <= l_min <= L_boot <= L");
    }
  }
  std::int64_t ring_degree() const { return 2 * n; }
  bool operator==(const VmParams&) const = default;
};

enum class ObjectKind { ciphertext, plaintext };

// Bytes of a ciphertext (two polynomials) or plaintext at a level, 8 bytes per
// RNS coefficient.
inline std::int64_t object_size_bytes(const VmParams& p, int level,
                                      ObjectKind kind = ObjectKind::ciphertext) {
  const std::int64_t polys = kind == ObjectKind::ciphertext ? 2 : 1;
  return polys * p.ring_degree() * (level + 1) * 8;
}

enum class ExecMode { functional, accounting };

template <typename Scalar>
class Evaluator;

template <typename Scalar = double>
class BasicPlainVec {
 public:
  BasicPlainVec() = default;
  explicit BasicPlainVec(SlotVector<Scalar> slots) : slots_(std::move(slots)) {}
  const SlotVector<Scalar>& slots() const { return slots_; }
  bool materialized() const { return slots_.size() > 0; }

 private:
  SlotVector<Scalar> slots_;
};

template <typename Scalar = double>
class BasicCipherVec {
 public:
  BasicCipherVec() = default;
  const SlotVector<Scalar>& slots() const { return slots_; }
  int level() const { return level_; }
  int scale_exp() const { return scale_exp_; }
  bool materialized() const { return slots_.size() > 0; }
  Scalar operator[](Eigen::Index i) const { return slots_(i); }

 private:
  friend class Evaluator<Scalar>;
  BasicCipherVec(SlotVector<Scalar> slots, int level, int scale_exp)
      : slots_(std::move(slots)), level_(level), scale_exp_(scale_exp) {}

  SlotVector<Scalar> slots_;
  int level_ = 0;
  int scale_exp_ = 1;
};

using PlainVec = BasicPlainVec<double>;
using CipherVec = BasicCipherVec<double>;

// Slot-level CKKS machine. Every primitive validates levels, computes slot
// values in functional mode, and appends to the ledger in both modes.
template <typename Scalar = double>
class Evaluator {
 public:
  using Cipher = BasicCipherVec<Scalar>;
  using Plain = BasicPlainVec<Scalar>;
  using Vector = SlotVector<Scalar>;

  explicit Evaluator(VmParams params, ExecMode mode = ExecMode::functional)
      : params_(params), mode_(mode) {
    params_.validate();
  }

  const VmParams& params() const { return params_; }
  ExecMode mode() const { return mode_; }
  bool functional() const { return mode_ == ExecMode::functional; }
  std::int64_t slots() const { return params_.n; }
  OpLedger& ledger() { return ledger_; }
  const OpLedger& ledger() const { return ledger_; }

  Cipher encrypt(std::span<const Scalar> values, int level) {
    check_level_range(level);
    if (static_cast<std::int64_t>(values.size()) > params_.n) {
      throw CapacityError("encrypt: " + std::to_string(values.size()) +
                          " values exceed slot capacity " + std::to_string(params_.n));
    }
    Vector slots;
    if (functional()) {
      slots = Vector::Zero(params_.n);
      for (std::size_t i = 0; i < values.size(); ++i) slots(static_cast<Eigen::Index>(i)) = values[i];
    }
    ledger_.record(OpKind::encrypt_upload, level);
    return Cipher(std::move(slots), level, 1);
  }

  Cipher encrypt(const Vector& values, int level) {
    return encrypt(std::span<const Scalar>(values.data(), static_cast<std::size_t>(values.size())),
                   level);
  }

  // Opaque ciphertext for accounting runs.
  Cipher encrypt_placeholder(int level) {
    check_level_range(level);
    if (functional()) return encrypt(Vector::Zero(0), level);
    ledger_.record(OpKind::encrypt_upload, level);
    return Cipher(Vector(), level, 1);
  }

  Plain encode(std::span<const Scalar> values) const {
    if (static_cast<std::int64_t>(values.size()) > params_.n) {
      throw CapacityError("encode: " + std::to_string(values.size()) +
                          " values exceed slot capacity " + std::to_string(params_.n));
    }
    if (!functional()) return Plain();
    Vector slots = Vector::Zero(params_.n);
    for (std::size_t i = 0; i < values.size(); ++i) slots(static_cast<Eigen::Index>(i)) = values[i];
    return Plain(std::move(slots));
  }

  Plain encode(const Vector& values) const {
    return encode(std::span<const Scalar>(values.data(), static_cast<std::size_t>(values.size())));
  }

  // Constant on slots [0, width), zero elsewhere.
  Plain constant(Scalar value, std::int64_t width) const {
    if (width > params_.n) throw CapacityError("constant plaintext wider than slot count");
    if (!functional()) return Plain();
    Vector slots = Vector::Zero(params_.n);
    slots.head(width).setConstant(value);
    return Plain(std::move(slots));
  }

  // Indicator of slots [begin, end).
  Plain mask(std::int64_t begin, std::int64_t end) const {
    if (begin < 0 || end > params_.n || begin > end) {
      throw LayoutError("mask range [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") outside slot ring");
    }
    if (!functional()) return Plain();
    Vector slots = Vector::Zero(params_.n);
    slots.segment(begin, end - begin).setOnes();
    return Plain(std::move(slots));
  }

  Cipher add(const Cipher& a, const Cipher& b) { return combine(a, b, Scalar(1)); }
  Cipher sub(const Cipher& a, const Cipher& b) { return combine(a, b, Scalar(-1)); }

  Cipher add(const Cipher& a, const Plain& p) {
    check_plain(p);
    ledger_.record(OpKind::pt_add, a.level_);
    Vector out;
    if (functional()) out = a.slots_ + p.slots();
    return Cipher(std::move(out), a.level_, a.scale_exp_);
  }

  Cipher mul(const Cipher& a, const Cipher& b) {
    auto [x, y] = align(a, b);
    check_mul_level(x.level_, "ct_mul");
    ledger_.record(OpKind::ct_mul, x.level_);
    Vector out;
    if (functional()) out = x.slots_.cwiseProduct(y.slots_);
    return Cipher(std::move(out), x.level_ - 1, x.scale_exp_ + y.scale_exp_ - 1);
  }

  Cipher mul(const Cipher& a, const Plain& p) {
    check_plain(p);
    check_mul_level(a.level_, "pt_mul");
    ledger_.record(OpKind::pt_mul, a.level_);
    Vector out;
    if (functional()) out = a.slots_.cwiseProduct(p.slots());
    return Cipher(std::move(out), a.level_ - 1, a.scale_exp_);
  }

  // Left rotation by k: slot i moves to i - k (mod n).
  Cipher rotate(const Cipher& a, std::int64_t k, bool hoisted = false) {
    const std::int64_t n = params_.n;
    const std::int64_t s = ((k % n) + n) % n;
    if (s == 0) return a;
    ledger_.record(OpKind::rotate, a.level_, s, 1, hoisted);
    Vector out;
    if (functional()) {
      out.resize(n);
      out.head(n - s) = a.slots_.tail(n - s);
      out.tail(s) = a.slots_.head(s);
    }
    return Cipher(std::move(out), a.level_, a.scale_exp_);
  }

  Cipher rotate_right(const Cipher& a, std::int64_t k, bool hoisted = false) {
    return rotate(a, -k, hoisted);
  }

  Cipher bootstrap(const Cipher& a) {
    ledger_.record(OpKind::bootstrap, a.level_);
    return Cipher(a.slots_, params_.boot_level, 1);
  }

  // Modulus drop without a primitive; counted as metadata only.
  Cipher drop_to(const Cipher& a, int level) {
    if (level > a.level_) throw LevelError("cannot raise level without bootstrap");
    ledger_.note_level_drop(a.level_, level);
    return Cipher(a.slots_, level, a.scale_exp_);
  }

  // Replaces slot values without logging. Models an idealized evaluation that
  // shares the op sequence of a polynomial one.
  Cipher with_slots(const Cipher& a, Vector slots) const {
    if (!functional()) return a;
    if (slots.size() != params_.n) throw LayoutError("with_slots: wrong slot count");
    return Cipher(std::move(slots), a.level_, a.scale_exp_);
  }

  Vector decrypt(const Cipher& a) const {
    if (!functional()) throw ParameterError("decrypt requires functional mode");
    return a.slots_;
  }

 private:
  void check_level_range(int level) const {
    if (level < params_.min_level || level > params_.max_level) {
      throw ParameterError("level " + std::to_string(level) + " outside [" +
                           std::to_string(params_.min_level) + ", " +
                           std::to_string(params_.max_level) + "]");
    }
  }

  void check_plain(const Plain& p) const {
    if (functional() && p.slots().size() != params_.n) {
      throw LayoutError("plaintext is not materialized with " + std::to_string(params_.n) +
                        " slots");
    }
  }

  void check_mul_level(int level, const char* op) const {
    if (level < params_.min_level + 1) {
      throw LevelError(std::string(op) + " at level " + std::to_string(level) +
                       " needs level >= " + std::to_string(params_.min_level + 1) +
                       "; a bootstrap is missing");
    }
  }

  std::pair<Cipher, Cipher> align(const Cipher& a, const Cipher& b) {
    if (a.level_ == b.level_) return {a, b};
    if (a.level_ > b.level_) return {drop_to(a, b.level_), b};
    return {a, drop_to(b, a.level_)};
  }

  Cipher combine(const Cipher& a, const Cipher& b, Scalar sign) {
    auto [x, y] = align(a, b);
    ledger_.record(OpKind::ct_add, x.level_);
    Vector out;
    if (functional()) out = x.slots_ + sign * y.slots_;
    return Cipher(std::move(out), x.level_, x.scale_exp_);
  }

  VmParams params_;
  ExecMode mode_;
  OpLedger ledger_;
};

using Vm = Evaluator<double>;

// Inserts a bootstrap before an operation whenever its depth would push the
// operand below l_min. schedule() lists the ensure() calls that bootstrapped;
// a bootstrapper built from a schedule bootstraps at exactly those calls, so
// dropping one entry replays the run with that bootstrap removed.
template <typename Scalar = double>
class GreedyBootstrapper {
 public:
  using Cipher = BasicCipherVec<Scalar>;

  explicit GreedyBootstrapper(Evaluator<Scalar>& vm) : vm_(vm) {}
  GreedyBootstrapper(Evaluator<Scalar>& vm, std::set<int> fixed_schedule)
      : vm_(vm), fixed_(std::move(fixed_schedule)) {}

  Cipher ensure(const Cipher& ct, int levels_needed) {
    const VmParams& p = vm_.params();
    const int call = calls_++;
    if (fixed_ ? !fixed_->count(call) : ct.level() - levels_needed >= p.min_level) return ct;
    if (p.boot_level - levels_needed < p.min_level) {
      throw LevelError("operation needs " + std::to_string(levels_needed) +
                       " levels but a bootstrap restores only " +
                       std::to_string(p.boot_level - p.min_level));
    }
    schedule_.insert(call);
    PhaseScope scope(vm_.ledger(), "bootstrap");
    return vm_.bootstrap(ct);
  }

  int placed() const { return static_cast<int>(schedule_.size()); }
  const std::set<int>& schedule() const { return schedule_; }
  Evaluator<Scalar>& vm() { return vm_; }

 private:
  Evaluator<Scalar>& vm_;
  std::optional<std::set<int>> fixed_;
  std::set<int> schedule_;
  int calls_ = 0;
};

using Bootstrapper = GreedyBootstrapper<double>;

inline std::int64_t next_pow2(std::int64_t x) {
  std::int64_t p = 1;
  while (p < x) p <<= 1;
  return p;
}

inline int ilog2(std::int64_t x) {
  int r = 0;
  while ((std::int64_t{1} << (r + 1)) <= x) ++r;
  return r;
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t pos_mod(std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; }

}  // namespace helut
