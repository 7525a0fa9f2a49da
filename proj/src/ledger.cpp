// SPDX-License-Identifier: Apache-2.0
#include "helut/ledger.hpp"

#include "helut/errors.hpp"

namespace helut {

namespace {
const std::string kNoPhase = "unphased";
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::pt_add: return "pt_add";
    case OpKind::ct_add: return "ct_add";
    case OpKind::pt_mul: return "pt_mul";
    case OpKind::ct_mul: return "ct_mul";
    case OpKind::rotate: return "rotate";
    case OpKind::bootstrap: return "bootstrap";
    case OpKind::encrypt_upload: return "encrypt_upload";
  }
  return "unknown";
}

OpKind op_kind_from_string(std::string_view name) {
  for (OpKind k : kAllOpKinds) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown op kind '" + std::string(name) + "'");
}

void OpLedger::record(OpKind kind, int level, std::int64_t offset, std::uint64_t count,
                      bool hoisted) {
  if (count == 0) return;
  const std::string& phase = current_phase();
  if (!entries_.empty()) {
    LedgerEntry& last = entries_.back();
    if (last.kind == kind && last.level == level && last.offset == offset &&
        last.hoisted == hoisted && last.phase == phase) {
      last.count += count;
      counters_[kind] += count;
      return;
    }
  }
  entries_.push_back(LedgerEntry{kind, level, offset, count, phase, hoisted});
  counters_[kind] += count;
}

void OpLedger::push_phase(std::string name) {
  ++phase_invocations_[name];
  phases_.push_back(std::move(name));
}

void OpLedger::pop_phase() {
  if (!phases_.empty()) phases_.pop_back();
}

const std::string& OpLedger::current_phase() const {
  return phases_.empty() ? kNoPhase : phases_.back();
}

void OpLedger::note_level_drop(int from, int to) {
  if (from != to) ++level_drops_;
}

void OpLedger::warn(std::string message) {
  for (const auto& w : warnings_) {
    if (w == message) return;
  }
  warnings_.push_back(std::move(message));
}

void OpLedger::merge(const OpLedger& other) {
  for (const auto& e : other.entries_) {
    if (!entries_.empty()) {
      LedgerEntry& last = entries_.back();
      if (last.kind == e.kind && last.level == e.level && last.offset == e.offset &&
          last.hoisted == e.hoisted && last.phase == e.phase) {
        last.count += e.count;
        counters_[e.kind] += e.count;
        continue;
      }
    }
    entries_.push_back(e);
    counters_[e.kind] += e.count;
  }
  for (const auto& [name, n] : other.phase_invocations_) phase_invocations_[name] += n;
  for (const auto& w : other.warnings_) warn(w);
  level_drops_ += other.level_drops_;
}

std::uint64_t OpLedger::count(OpKind kind) const {
  auto it = counters_.find(kind);
  return it == counters_.end() ? 0 : it->second;
}

std::uint64_t OpLedger::count(OpKind kind, std::string_view phase) const {
  std::uint64_t total = 0;
  for (const auto& e : entries_) {
    if (e.kind == kind && e.phase == phase) total += e.count;
  }
  return total;
}

std::uint64_t OpLedger::total_ops() const {
  std::uint64_t total = 0;
  for (const auto& [k, n] : counters_) total += n;
  return total;
}

}  // namespace helut
