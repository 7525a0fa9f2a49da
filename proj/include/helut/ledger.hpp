// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace helut {

enum class OpKind : std::uint8_t {
  pt_add,
  ct_add,
  pt_mul,
  ct_mul,
  rotate,
  bootstrap,
  encrypt_upload,
};

inline constexpr std::array<OpKind, 7> kAllOpKinds = {
    OpKind::pt_add, OpKind::ct_add,    OpKind::pt_mul,         OpKind::ct_mul,
    OpKind::rotate, OpKind::bootstrap, OpKind::encrypt_upload,
};

std::string_view to_string(OpKind kind);
OpKind op_kind_from_string(std::string_view name);

struct LedgerEntry {
  OpKind kind = OpKind::pt_add;
  int level = 0;
  // Rotation amount (left, mod n); zero for other kinds.
  std::int64_t offset = 0;
  std::uint64_t count = 1;
  std::string phase;
  bool hoisted = false;

  bool operator==(const LedgerEntry&) const = default;
};

// Append-only trace of primitive operations. Adjacent identical entries are
// coalesced into one entry with a larger count.
class OpLedger {
 public:
  void record(OpKind kind, int level, std::int64_t offset = 0, std::uint64_t count = 1,
              bool hoisted = false);

  void push_phase(std::string name);
  void pop_phase();
  const std::string& current_phase() const;

  void note_level_drop(int from, int to);
  void warn(std::string message);

  // Folds another ledger's entries and metadata into this one.
  void merge(const OpLedger& other);

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::uint64_t count(OpKind kind) const;
  std::uint64_t count(OpKind kind, std::string_view phase) const;
  const std::map<OpKind, std::uint64_t>& counters() const { return counters_; }
  std::uint64_t level_drops() const { return level_drops_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::map<std::string, std::uint64_t>& phase_invocations() const {
    return phase_invocations_;
  }
  std::uint64_t total_ops() const;

 private:
  std::vector<LedgerEntry> entries_;
  std::map<OpKind, std::uint64_t> counters_;
  std::vector<std::string> phases_;
  std::map<std::string, std::uint64_t> phase_invocations_;
  std::vector<std::string> warnings_;
  std::uint64_t level_drops_ = 0;
};

class PhaseScope {
 public:
  PhaseScope(OpLedger& ledger, std::string name) : ledger_(ledger) {
    ledger_.push_phase(std::move(name));
  }
  ~PhaseScope() { ledger_.pop_phase(); }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  OpLedger& ledger_;
};

}  // namespace helut
