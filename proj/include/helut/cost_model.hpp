// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/ledger.hpp"

namespace helut {

// Per-op latency at each level, a flat bootstrap latency, an upload bandwidth,
// and optional flat per-invocation costs for named phases.
struct CostTable {
  std::string name;
  double upload_mib_s = 40.0;
  double bootstrap_s = 0.0;
  // op name ("pt_mul", "rotate", "rotate_hoisted", ...) -> level -> seconds
  std::map<std::string, std::map<int, double>> ops;
  std::map<std::string, double> composites;

  void set(const std::string& op, int level, double seconds) { ops[op][level] = seconds; }
  double op_seconds(OpKind kind, int level, bool hoisted = false) const;
  bool has_op(const std::string& op, int level) const;
};

struct Upload {
  std::uint64_t count = 1;
  int level = 1;
  ObjectKind kind = ObjectKind::ciphertext;
};

struct PhaseCost {
  std::string phase;
  double seconds = 0.0;
  std::uint64_t invocations = 0;
  std::map<OpKind, std::uint64_t> ops;
  bool composite = false;
};

struct CostReport {
  std::string table;
  std::vector<PhaseCost> phases;  // in order of first appearance
  double total_seconds = 0.0;
  double upload_seconds = 0.0;
  double bootstrap_seconds = 0.0;
  std::uint64_t bootstraps = 0;
  std::uint64_t rotations = 0;
  std::uint64_t multiplies = 0;

  double phase_seconds(const std::string& phase) const;
};

// Ledger uploads grouped by level.
std::vector<Upload> uploads_from_ledger(const OpLedger& ledger);

double upload_seconds(const Upload& u, const VmParams& params, const CostTable& table);

// Upload and bootstrap costs go to phases "upload" and "bootstrap"; phases with
// a composite entry are priced per invocation. encrypt_upload ledger entries
// are not priced; pass them through `uploads`.
CostReport estimate(const OpLedger& ledger, std::span<const Upload> uploads,
                    const VmParams& params, const CostTable& table);

struct BreakdownRow {
  std::string phase;
  double seconds = 0.0;
  // Op counts attributed to the row. Unused for composite rows.
  std::vector<LedgerEntry> ops;
  // Kind whose per-level coefficient the row determines.
  std::optional<OpKind> dominant;
  bool composite = false;
  std::uint64_t invocations = 1;
  // For the "upload" row: bytes moved.
  std::uint64_t upload_bytes = 0;
};

struct CalibrationOptions {
  std::string name = "calibrated";
  int max_level = 31;
};

// Solves for one coefficient c_k per dominant kind such that every op row is
// reproduced with latency(k, level) = c_k * (level + 1). Kinds that dominate no
// row are free.
CostTable calibrate_from_breakdown(std::span<const BreakdownRow> rows,
                                   const CalibrationOptions& options = {});

CostTable load_cost_table(const std::filesystem::path& path);
void save_cost_table(const CostTable& table, const std::filesystem::path& path);
std::string cost_table_to_json(const CostTable& table);
CostTable cost_table_from_json(const std::string& text, const std::string& source = {});

// Accepts a path or a bare name looked up as <name>.json in HELUT_COST_DIR,
// then in the built-in data directory.
std::filesystem::path resolve_cost_table(const std::string& name_or_path);

std::string cost_report_csv(const CostReport& report);
std::string cost_report_json(const CostReport& report);
std::string ledger_json(const OpLedger& ledger);

}  // namespace helut
