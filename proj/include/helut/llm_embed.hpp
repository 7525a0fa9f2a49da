// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/cost_model.hpp"
#include "helut/embedding.hpp"

namespace helut {

struct SequenceLookup {
  std::vector<std::int64_t> tokens;
  std::int64_t vocab = 0;
  int d = 0;

  void validate() const;
};

// Column j holds entry j of every token's one-hot (or digit one-hot) row,
// token i in slot i.
struct ColumnPackedMatrix {
  std::vector<CipherVec> columns;
};

ColumnPackedMatrix pack_columns(Vm& vm, const SequenceLookup& seq, int level);
ColumnPackedMatrix pack_columns_compressed(Vm& vm, const SequenceLookup& seq, int base, int digits,
                                           int level);

// Output column c = sum_j cols[j] * E[j][c]; no rotations, one level.
std::vector<CipherVec> cpmm_embedding(Vm& vm, const ColumnPackedMatrix& cols,
                                      const Eigen::MatrixXd& table);

// Same op counts as cpmm_embedding without materializing anything.
std::vector<CipherVec> cpmm_embedding_accounting(Vm& vm, std::int64_t columns, int d, int level);

// Packs m copies of the table (or stack) along the block diagonal.
PackedEmbeddingSet sequence_packing(const TableSource& table, std::int64_t m,
                                    const VmParams& params,
                                    DiagonalLayout layout = DiagonalLayout::full_ring);

// Client encoding of a sequence for the block-diagonal lookup.
Eigen::VectorXd encode_sequence(const PackedEmbeddingSet& packed, std::span<const std::int64_t> tokens);

// Token i's embedding lands at [i*d, (i+1)*d) across the output ciphertexts.
std::vector<CipherVec> blockdiag_sequence_lookup(Vm& vm, const PackedEmbeddingSet& packed,
                                                 std::span<const std::int64_t> tokens, int level);

enum class LlmStrategy { cpmm, blockdiag, client_side };

std::string to_string(LlmStrategy s);
LlmStrategy llm_strategy_from_string(const std::string& s);

struct LlmScenario {
  std::int64_t vocab = 50257;
  int d = 768;
  std::int64_t m = 1;
  std::optional<CompressionSpec> compression;
  LlmStrategy strategy = LlmStrategy::blockdiag;
  int level = 1;
  double memory_budget_gib = 512.0;
  DiagonalLayout layout = DiagonalLayout::full_ring;
};

struct ScenarioRow {
  std::string strategy;
  bool compressed = false;
  std::int64_t m = 0;
  std::int64_t input_cts = 0;
  std::uint64_t rotations = 0;
  std::uint64_t muls = 0;
  int levels = 0;
  std::int64_t diagonals = 0;
  double diagonal_gib = 0.0;
  double upload_gib = 0.0;
  double upload_seconds = 0.0;
  // Server compute only; upload is reported separately.
  double est_seconds = 0.0;
  int round_trips = 0;
  std::string status = "ok";
};

// Plaintext bytes the block-diagonal strategy must hold for its diagonals.
double blockdiag_diagonal_gib(const PackedEmbeddingSet& packed, const VmParams& params, int level);

// Accounting run of one scenario. Raises CapacityError when the diagonals
// exceed the memory budget.
ScenarioRow run_scenario(const LlmScenario& scenario, const VmParams& params,
                         const CostTable& table, OpLedger* ledger_out = nullptr);

std::string scenario_csv_header();
std::string scenario_csv_row(const ScenarioRow& row);

struct GenerationStepCost {
  CostReport report;
  int round_trips = 0;
};

// Per-token cost of one generation step (m = 1).
GenerationStepCost generation_step_cost(LlmScenario scenario, const VmParams& params,
                                        const CostTable& table);

}  // namespace helut
