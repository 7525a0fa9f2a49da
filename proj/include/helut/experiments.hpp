// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/coded_helut.hpp"
#include "helut/config.hpp"
#include "helut/cost_model.hpp"
#include "helut/embedding.hpp"

namespace helut {

// One compressed table looked up by both pipelines.
struct CompareSetting {
  int base = 16;
  int digits = 32;
  int d = 768;
  VmParams params{std::int64_t{1} << 15, 24, 14, 0};
  int upload_level = 1;
  IndicatorParams indicator{11, 0};
  DiagonalLayout layout = DiagonalLayout::full_ring;
};

CompareSetting parse_compare_setting(const ConfigNode& node);

// Shape-only stack; k saturates when base^digits overflows.
CodedTableStack compare_stack(const CompareSetting& s);

struct PipelineRun {
  OpLedger ledger;
  std::vector<Upload> uploads;
  std::vector<CipherVec> outputs;
  int levels_consumed = 0;
};

// Uploads the digit tokens, then rearrange, replicate, indicator, table_mult.
PipelineRun run_coded_pipeline(Vm& vm, const CodedTableStack& stack,
                               std::span<const std::int64_t> tokens, const CodedLookupOptions& options,
                               int level);

// Uploads the client one-hot vector, then one block-diagonal BSGS lookup.
PipelineRun run_digit_pipeline(Vm& vm, const PackedEmbeddingSet& packed,
                               const Eigen::VectorXd& client, int level,
                               MatvecAlgo algo = MatvecAlgo::bsgs);

struct ComparePoint {
  int d = 0;
  CostReport baseline;
  CostReport ours;
  std::uint64_t baseline_rotations = 0;
  std::uint64_t ours_rotations = 0;
  int baseline_levels = 0;
  int ours_levels = 0;
  double speedup() const { return ours.total_seconds > 0 ? baseline.total_seconds / ours.total_seconds : 0.0; }
};

// Accounting runs of both pipelines.
ComparePoint compare_point(const CompareSetting& setting, const CostTable& table,
                           PipelineRun* baseline_run = nullptr, PipelineRun* ours_run = nullptr);

std::string compare_csv_header();
std::string compare_csv_row(const ComparePoint& p);

// Reference phase timings paired with the accounting ledgers of the compare
// setting they describe.
struct ReferenceBreakdown {
  std::string name = "cpu-default";
  int max_level = 31;
  CompareSetting setting;
  std::vector<BreakdownRow> baseline;
  std::vector<BreakdownRow> ours;
};

ReferenceBreakdown load_reference_breakdown(const std::filesystem::path& path);

// Fills op counts, invocations and upload bytes from the pipeline ledgers.
void attach_ledgers(ReferenceBreakdown& ref);

CostTable calibrate_reference(const ReferenceBreakdown& ref);

std::filesystem::path default_reference_breakdown();

}  // namespace helut
