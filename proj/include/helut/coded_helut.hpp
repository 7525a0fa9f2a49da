// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/embedding.hpp"

namespace helut {

// Indicator of u == 0 for integer u in (-p, p): y0 = 1 - u^2/p^2, then r
// squarings, then s smoothstep passes y^2 (3 - 2y).
struct IndicatorParams {
  int r = 7;
  int s = 0;
  int depth() const { return 2 + r + 2 * s; }
  bool operator==(const IndicatorParams&) const = default;
};

enum class IndicatorMode { polynomial, exact };

double indicator_poly(double u, int p, const IndicatorParams& params);

// Largest deviation from the exact indicator over the integer grid (-p, p).
double indicator_max_error(int p, const IndicatorParams& params);

// Minimal-depth parameters meeting `tolerance`; ties go to the smaller r.
IndicatorParams sweep_indicator(int p, double tolerance = 1e-3, int max_depth = 40, int max_s = 4);

// Slots per token after rearrangement.
std::int64_t coded_block_width(int base, int digits);
std::int64_t tokens_per_ciphertext(std::int64_t n, int base, int digits);

// Client layout: digit t of token b sits at slot b*w + t.
Eigen::VectorXd encode_digit_tokens(std::span<const std::int64_t> tokens, int base, int digits,
                                    std::int64_t n);

// Moves digit t of every token to slot b*w + t*p. One level.
CipherVec rearrange(Vm& vm, const CipherVec& x, int base, int digits, std::int64_t batch);

// Copies each digit slot over its p-slot group. No level.
CipherVec replicate(Vm& vm, const CipherVec& x, int base);

// Slot b*w + t*p + j becomes [digit_t == j]; padding slots become 0.
CipherVec indicator(Vm& vm, const CipherVec& x, int base, int digits, std::int64_t batch,
                    const IndicatorParams& params, IndicatorMode mode = IndicatorMode::polynomial);

// One ciphertext per embedding column; slot b*w holds column c of token b.
std::vector<CipherVec> table_mult(Vm& vm, const CipherVec& onehot, const CodedTableStack& stack,
                                  std::int64_t batch);

struct CodedLookupOptions {
  IndicatorParams indicator;
  IndicatorMode mode = IndicatorMode::polynomial;
  std::int64_t batch = 1;
};

// Full pipeline on an uploaded token ciphertext. Phases are tagged rearrange,
// replicate, indicator and table_mult; bootstraps are inserted greedily.
std::vector<CipherVec> coded_helut_lookup(Vm& vm, Bootstrapper& boot, const CipherVec& tokens,
                                          const CodedTableStack& stack,
                                          const CodedLookupOptions& options);

// Gathers the per-column shards into a contiguous row-major layout: token b,
// column c at slot b*d + c. One level.
CipherVec consolidate(Vm& vm, std::span<const CipherVec> shards, int base, int digits,
                      std::int64_t batch);

}  // namespace helut
