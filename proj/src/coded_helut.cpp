// SPDX-License-Identifier: Apache-2.0
#include "helut/coded_helut.hpp"

#include <cmath>

#include "helut/errors.hpp"
#include "helut/he_linalg.hpp"

namespace helut {

namespace {

void check_base(int base) {
  if (base < 2 || (base & (base - 1)) != 0) {
    throw ParameterError("digit base must be a power of two >= 2, got " + std::to_string(base));
  }
}

void check_batch(const Vm& vm, int base, int digits, std::int64_t batch) {
  if (batch < 1) throw ParameterError("batch must be positive");
  if (batch > tokens_per_ciphertext(vm.slots(), base, digits)) {
    throw CapacityError("batch of " + std::to_string(batch) + " tokens exceeds " +
                        std::to_string(tokens_per_ciphertext(vm.slots(), base, digits)) +
                        " per ciphertext");
  }
}

PlainVec slots_plain(const Vm& vm, Eigen::VectorXd v) {
  if (!vm.functional()) return PlainVec();
  return PlainVec(std::move(v));
}

}  // namespace

double indicator_poly(double u, int p, const IndicatorParams& params) {
  const double pp = static_cast<double>(p) * p;
  double y = 1.0 - u * u / pp;
  for (int i = 0; i < params.r; ++i) y = y * y;
  for (int i = 0; i < params.s; ++i) y = y * y * (3.0 - 2.0 * y);
  return y;
}

double indicator_max_error(int p, const IndicatorParams& params) {
  double err = 0.0;
  for (int u = -(p - 1); u <= p - 1; ++u) {
    const double want = u == 0 ? 1.0 : 0.0;
    err = std::max(err, std::abs(indicator_poly(u, p, params) - want));
  }
  return err;
}

IndicatorParams sweep_indicator(int p, double tolerance, int max_depth, int max_s) {
  for (int depth = 2; depth <= max_depth; ++depth) {
    for (int r = 0; r <= depth - 2; ++r) {
      if ((depth - 2 - r) % 2 != 0) continue;
      const int s = (depth - 2 - r) / 2;
      if (s > max_s) continue;
      IndicatorParams ip{r, s};
      if (indicator_max_error(p, ip) <= tolerance) return ip;
    }
  }
  throw ParameterError("no indicator parameters reach tolerance for p=" + std::to_string(p));
}

std::int64_t coded_block_width(int base, int digits) {
  return next_pow2(std::int64_t{base} * digits);
}

std::int64_t tokens_per_ciphertext(std::int64_t n, int base, int digits) {
  return n / coded_block_width(base, digits);
}

Eigen::VectorXd encode_digit_tokens(std::span<const std::int64_t> tokens, int base, int digits,
                                    std::int64_t n) {
  const std::int64_t w = coded_block_width(base, digits);
  const auto batch = static_cast<std::int64_t>(tokens.size());
  if (batch * w > n) {
    throw CapacityError(std::to_string(batch) + " tokens need " + std::to_string(batch * w) +
                        " slots, only " + std::to_string(n) + " available");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(std::max<std::int64_t>(1, batch * w));
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto dig = digit_decompose(tokens[static_cast<std::size_t>(b)], base, digits);
    for (int t = 0; t < digits; ++t) v(b * w + t) = dig[static_cast<std::size_t>(t)];
  }
  return v;
}

CipherVec rearrange(Vm& vm, const CipherVec& x, int base, int digits, std::int64_t batch) {
  check_batch(vm, base, digits, batch);
  const std::int64_t w = coded_block_width(base, digits);
  std::vector<CipherVec> parts;
  for (int t = 0; t < digits; ++t) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(vm.slots());
    if (vm.functional()) {
      for (std::int64_t b = 0; b < batch; ++b) m(b * w + t) = 1.0;
    }
    parts.push_back(vm.mul(x, slots_plain(vm, std::move(m))));
  }
  CipherVec acc = parts.front();
  for (int t = 1; t < digits; ++t) {
    acc = vm.add(acc, vm.rotate_right(parts[static_cast<std::size_t>(t)],
                                      std::int64_t{t} * (base - 1)));
  }
  return acc;
}

CipherVec replicate(Vm& vm, const CipherVec& x, int base) {
  check_base(base);
  CipherVec acc = x;
  for (std::int64_t step = 1; step < base; step *= 2) acc = vm.add(acc, vm.rotate_right(acc, step));
  return acc;
}

CipherVec indicator(Vm& vm, const CipherVec& x, int base, int digits, std::int64_t batch,
                    const IndicatorParams& params, IndicatorMode mode) {
  check_base(base);
  check_batch(vm, base, digits, batch);
  const std::int64_t w = coded_block_width(base, digits);
  const std::int64_t used = std::int64_t{base} * digits;
  Eigen::VectorXd jmask;
  if (vm.functional()) {
    jmask = Eigen::VectorXd::Constant(vm.slots(), static_cast<double>(base));
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < used; ++i) jmask(b * w + i) = static_cast<double>(i % base);
    }
  }
  const double pp = static_cast<double>(base) * base;
  CipherVec u = vm.add(x, slots_plain(vm, -jmask));
  CipherVec y = vm.mul(u, u);
  y = vm.mul(y, slots_plain(vm, vm.functional() ? Eigen::VectorXd::Constant(vm.slots(), -1.0 / pp)
                                                : Eigen::VectorXd()));
  auto ones = vm.functional() ? Eigen::VectorXd::Ones(vm.slots()) : Eigen::VectorXd();
  y = vm.add(y, slots_plain(vm, ones));
  for (int i = 0; i < params.r; ++i) y = vm.mul(y, y);
  for (int i = 0; i < params.s; ++i) {
    CipherVec a = vm.mul(y, slots_plain(vm, vm.functional() ? Eigen::VectorXd::Constant(vm.slots(), -2.0)
                                                            : Eigen::VectorXd()));
    a = vm.add(a, slots_plain(vm, vm.functional() ? Eigen::VectorXd::Constant(vm.slots(), 3.0)
                                                  : Eigen::VectorXd()));
    CipherVec y2 = vm.mul(y, y);
    y = vm.mul(y2, a);
  }
  if (mode == IndicatorMode::exact && vm.functional()) {
    Eigen::VectorXd exact = Eigen::VectorXd::Zero(vm.slots());
    const Eigen::VectorXd& in = x.slots();
    for (std::int64_t s = 0; s < vm.slots(); ++s) {
      if (jmask(s) < base && std::llround(in(s)) == std::llround(jmask(s))) exact(s) = 1.0;
    }
    y = vm.with_slots(y, std::move(exact));
  }
  return y;
}

std::vector<CipherVec> table_mult(Vm& vm, const CipherVec& onehot, const CodedTableStack& stack,
                                  std::int64_t batch) {
  check_batch(vm, stack.base, stack.digits, batch);
  const std::int64_t w = coded_block_width(stack.base, stack.digits);
  std::vector<CipherVec> out;
  out.reserve(static_cast<std::size_t>(stack.d));
  for (int c = 0; c < stack.d; ++c) {
    Eigen::VectorXd col;
    if (vm.functional()) {
      if (stack.structural()) throw ParameterError("functional table mult needs weights");
      col = Eigen::VectorXd::Zero(vm.slots());
      for (std::int64_t b = 0; b < batch; ++b) {
        for (int t = 0; t < stack.digits; ++t) {
          for (int r = 0; r < stack.base; ++r) {
            col(b * w + std::int64_t{t} * stack.base + r) = stack.sub_tables[t](r, c);
          }
        }
      }
    }
    CipherVec prod = vm.mul(onehot, slots_plain(vm, std::move(col)));
    out.push_back(rot_sum(vm, prod, stack.rows()));
  }
  return out;
}

std::vector<CipherVec> coded_helut_lookup(Vm& vm, Bootstrapper& boot, const CipherVec& tokens,
                                          const CodedTableStack& stack,
                                          const CodedLookupOptions& options) {
  check_base(stack.base);
  OpLedger& ledger = vm.ledger();
  CipherVec x;
  {
    PhaseScope ph(ledger, "rearrange");
    x = rearrange(vm, boot.ensure(tokens, 1), stack.base, stack.digits, options.batch);
  }
  {
    PhaseScope ph(ledger, "replicate");
    x = replicate(vm, x, stack.base);
  }
  x = boot.ensure(x, options.indicator.depth());
  {
    PhaseScope ph(ledger, "indicator");
    x = indicator(vm, x, stack.base, stack.digits, options.batch, options.indicator, options.mode);
  }
  x = boot.ensure(x, 1);
  PhaseScope ph(ledger, "table_mult");
  return table_mult(vm, x, stack, options.batch);
}

CipherVec consolidate(Vm& vm, std::span<const CipherVec> shards, int base, int digits,
                      std::int64_t batch) {
  if (shards.empty()) throw ParameterError("consolidate needs at least one shard");
  check_batch(vm, base, digits, batch);
  const std::int64_t w = coded_block_width(base, digits);
  const auto d = static_cast<std::int64_t>(shards.size());
  if (batch * d > vm.slots()) throw CapacityError("consolidated output exceeds slot count");
  std::optional<CipherVec> acc;
  for (std::int64_t c = 0; c < d; ++c) {
    for (std::int64_t b = 0; b < batch; ++b) {
      Eigen::VectorXd m;
      if (vm.functional()) {
        m = Eigen::VectorXd::Zero(vm.slots());
        m(b * w) = 1.0;
      }
      CipherVec part = vm.mul(shards[static_cast<std::size_t>(c)], slots_plain(vm, std::move(m)));
      part = vm.rotate_right(part, b * d + c - b * w);
      acc = acc ? vm.add(*acc, part) : part;
    }
  }
  return *acc;
}

}  // namespace helut
