// SPDX-License-Identifier: Apache-2.0
#include "helut/llm_embed.hpp"

#include <cstdio>
#include <sstream>

#include "helut/errors.hpp"

namespace helut {

namespace {

constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

void check_sequence_capacity(const Vm& vm, const SequenceLookup& seq) {
  seq.validate();
  if (static_cast<std::int64_t>(seq.tokens.size()) > vm.slots()) {
    throw CapacityError("sequence of " + std::to_string(seq.tokens.size()) +
                        " tokens exceeds slot count");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// One real product sets the output level; the rest are counted in bulk.
std::vector<CipherVec> cpmm_products(Vm& vm, const CipherVec& col, std::int64_t columns, int d) {
  CipherVec one = vm.mul(col, PlainVec());
  const auto total = static_cast<std::uint64_t>(columns) * static_cast<std::uint64_t>(d);
  if (total > 1) vm.ledger().record(OpKind::pt_mul, col.level(), 0, total - 1);
  if (columns > 1) {
    vm.ledger().record(OpKind::ct_add, one.level(), 0,
                       static_cast<std::uint64_t>(columns - 1) * static_cast<std::uint64_t>(d));
  }
  return std::vector<CipherVec>(static_cast<std::size_t>(d), one);
}

}  // namespace

void SequenceLookup::validate() const {
  if (vocab < 1 || d < 1) throw ParameterError("vocabulary and width must be positive");
  if (tokens.empty()) throw ParameterError("sequence needs at least one token");
  for (auto t : tokens) {
    if (t < 0 || t >= vocab) {
      throw IndexError("token " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
}

ColumnPackedMatrix pack_columns(Vm& vm, const SequenceLookup& seq, int level) {
  check_sequence_capacity(vm, seq);
  ColumnPackedMatrix out;
  out.columns.reserve(static_cast<std::size_t>(seq.vocab));
  const auto m = static_cast<Eigen::Index>(seq.tokens.size());
  for (std::int64_t j = 0; j < seq.vocab; ++j) {
    if (!vm.functional()) {
      out.columns.push_back(vm.encrypt_placeholder(level));
      continue;
    }
    Eigen::VectorXd col = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) col(i) = seq.tokens[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
    out.columns.push_back(vm.encrypt(col, level));
  }
  return out;
}

ColumnPackedMatrix pack_columns_compressed(Vm& vm, const SequenceLookup& seq, int base, int digits,
                                           int level) {
  check_sequence_capacity(vm, seq);
  const auto m = static_cast<Eigen::Index>(seq.tokens.size());
  std::vector<std::vector<int>> dig;
  for (auto t : seq.tokens) dig.push_back(digit_decompose(t, base, digits));
  ColumnPackedMatrix out;
  for (int t = 0; t < digits; ++t) {
    for (int r = 0; r < base; ++r) {
      if (!vm.functional()) {
        out.columns.push_back(vm.encrypt_placeholder(level));
        continue;
      }
      Eigen::VectorXd col = Eigen::VectorXd::Zero(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        col(i) = dig[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] == r ? 1.0 : 0.0;
      }
      out.columns.push_back(vm.encrypt(col, level));
    }
  }
  return out;
}

std::vector<CipherVec> cpmm_embedding(Vm& vm, const ColumnPackedMatrix& cols,
                                      const Eigen::MatrixXd& table) {
  if (static_cast<Eigen::Index>(cols.columns.size()) != table.rows()) {
    throw LayoutError("column count " + std::to_string(cols.columns.size()) +
                      " differs from table rows " + std::to_string(table.rows()));
  }
  if (cols.columns.empty()) throw ParameterError("no input columns");
  std::vector<CipherVec> out;
  for (Eigen::Index c = 0; c < table.cols(); ++c) {
    std::vector<CipherVec> terms;
    terms.reserve(cols.columns.size());
    for (Eigen::Index j = 0; j < table.rows(); ++j) {
      terms.push_back(vm.mul(cols.columns[static_cast<std::size_t>(j)],
                             vm.constant(table(j, c), vm.slots())));
    }
    CipherVec acc = terms.front();
    for (std::size_t j = 1; j < terms.size(); ++j) acc = vm.add(acc, terms[j]);
    out.push_back(std::move(acc));
  }
  return out;
}

std::vector<CipherVec> cpmm_embedding_accounting(Vm& vm, std::int64_t columns, int d, int level) {
  if (columns < 1 || d < 1) throw ParameterError("CP-MM needs positive shape");
  if (vm.functional()) throw ParameterError("accounting CP-MM needs accounting mode");
  std::vector<CipherVec> cols;
  for (std::int64_t j = 0; j < columns; ++j) cols.push_back(vm.encrypt_placeholder(level));
  return cpmm_products(vm, cols.front(), columns, d);
}

PackedEmbeddingSet sequence_packing(const TableSource& table, std::int64_t m,
                                    const VmParams& params, DiagonalLayout layout) {
  if (m < 1) throw ParameterError("sequence length must be positive");
  std::vector<TableSource> copies;
  copies.reserve(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) copies.push_back(table);
  return pack_block_diagonal(copies, params, layout);
}

Eigen::VectorXd encode_sequence(const PackedEmbeddingSet& packed,
                                std::span<const std::int64_t> tokens) {
  if (tokens.size() != packed.layout().segments.size()) {
    throw LayoutError("packing holds " + std::to_string(packed.layout().segments.size()) +
                      " blocks for " + std::to_string(tokens.size()) + " tokens");
  }
  LookupRequest req;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    req.indices.push_back(TableIndex{packed.layout().segments[i].table_id, tokens[i]});
  }
  return encode_client(req, packed.layout());
}

std::vector<CipherVec> blockdiag_sequence_lookup(Vm& vm, const PackedEmbeddingSet& packed,
                                                 std::span<const std::int64_t> tokens, int level) {
  std::vector<CipherVec> inputs;
  if (vm.functional()) {
    inputs = encrypt_chunks(vm, encode_sequence(packed, tokens), level);
  } else {
    inputs = placeholder_chunks(vm, packed.layout().sparse_slots(), level);
  }
  return lookup_encrypted(vm, packed, inputs);
}

std::string to_string(LlmStrategy s) {
  switch (s) {
    case LlmStrategy::cpmm: return "cpmm";
    case LlmStrategy::blockdiag: return "blockdiag";
    case LlmStrategy::client_side: return "client_side";
  }
  return "unknown";
}

LlmStrategy llm_strategy_from_string(const std::string& s) {
  if (s == "cpmm") return LlmStrategy::cpmm;
  if (s == "blockdiag") return LlmStrategy::blockdiag;
  if (s == "client_side") return LlmStrategy::client_side;
  throw ParameterError("unknown LLM strategy '" + s + "'");
}

double blockdiag_diagonal_gib(const PackedEmbeddingSet& packed, const VmParams& params, int level) {
  return static_cast<double>(packed.diagonal_count()) *
         static_cast<double>(object_size_bytes(params, level, ObjectKind::plaintext)) / kGiB;
}

ScenarioRow run_scenario(const LlmScenario& s, const VmParams& params, const CostTable& table,
                         OpLedger* ledger_out) {
  ScenarioRow row;
  row.strategy = to_string(s.strategy);
  row.compressed = s.compression.has_value();
  row.m = s.m;
  if (s.m < 1 || s.m > params.n) throw ParameterError("sequence length outside [1, n]");
  Vm vm(params, ExecMode::accounting);
  int base = 0, digits = 0;
  if (s.compression) {
    base = s.compression->base;
    digits = s.compression->digits > 0 ? s.compression->digits : digits_needed(s.vocab, base);
  }
  const std::int64_t row_width = s.compression ? std::int64_t{base} * digits : s.vocab;

  if (s.strategy == LlmStrategy::client_side) {
    row.round_trips = static_cast<int>(s.m);
    row.status = "leaks_table";
    return row;
  }

  if (s.strategy == LlmStrategy::cpmm) {
    std::vector<CipherVec> cols;
    {
      PhaseScope ph(vm.ledger(), "upload");
      for (std::int64_t j = 0; j < row_width; ++j) cols.push_back(vm.encrypt_placeholder(s.level));
    }
    PhaseScope ph(vm.ledger(), "cpmm");
    cpmm_products(vm, cols.front(), row_width, s.d);
    row.input_cts = row_width;
  } else {
    TableSource src = s.compression
                          ? TableSource(compress_shape("vocab", s.vocab, s.d, CompressionSpec{base, digits, 0}))
                          : TableSource(EmbeddingTable{"vocab", s.vocab, s.d, {}});
    const std::int64_t slots_needed = s.m * row_width;
    row.input_cts = ceil_div(slots_needed, params.n);
    PackedEmbeddingSet packed = sequence_packing(src, s.m, params, s.layout);
    row.diagonals = packed.diagonal_count();
    row.diagonal_gib = blockdiag_diagonal_gib(packed, params, s.level);
    if (row.diagonal_gib > s.memory_budget_gib) {
      throw CapacityError("block-diagonal lookup needs " + fmt(row.diagonal_gib) +
                          " GiB of diagonals, budget is " + fmt(s.memory_budget_gib) + " GiB");
    }
    std::vector<CipherVec> inputs;
    {
      PhaseScope ph(vm.ledger(), "upload");
      inputs = placeholder_chunks(vm, slots_needed, s.level);
    }
    PhaseScope ph(vm.ledger(), "bsgs");
    lookup_encrypted(vm, packed, inputs);
  }

  const auto uploads = uploads_from_ledger(vm.ledger());
  for (const auto& u : uploads) {
    row.upload_gib += static_cast<double>(object_size_bytes(params, u.level)) *
                      static_cast<double>(u.count) / kGiB;
  }
  CostReport rep = estimate(vm.ledger(), uploads, params, table);
  row.rotations = vm.ledger().count(OpKind::rotate);
  row.muls = vm.ledger().count(OpKind::pt_mul) + vm.ledger().count(OpKind::ct_mul);
  row.levels = 1;
  row.upload_seconds = rep.upload_seconds;
  row.est_seconds = rep.total_seconds - rep.upload_seconds;
  if (ledger_out) *ledger_out = vm.ledger();
  return row;
}

std::string scenario_csv_header() {
  return "strategy,compressed,m,input_cts,rotations,muls,levels,diagonals,diagonal_gib,upload_gib,"
         "upload_seconds,est_seconds,round_trips,status\n";
}

std::string scenario_csv_row(const ScenarioRow& r) {
  std::ostringstream out;
  out << r.strategy << ',' << (r.compressed ? 1 : 0) << ',' << r.m << ',' << r.input_cts << ','
      << r.rotations << ',' << r.muls << ',' << r.levels << ',' << r.diagonals << ','
      << fmt(r.diagonal_gib) << ',' << fmt(r.upload_gib) << ',' << fmt(r.upload_seconds) << ','
      << fmt(r.est_seconds) << ','
      << r.round_trips << ',' << r.status << '\n';
  return out.str();
}

GenerationStepCost generation_step_cost(LlmScenario scenario, const VmParams& params,
                                        const CostTable& table) {
  scenario.m = 1;
  GenerationStepCost out;
  if (scenario.strategy == LlmStrategy::client_side) {
    out.round_trips = 1;
    out.report.table = table.name;
    return out;
  }
  OpLedger ledger;
  run_scenario(scenario, params, table, &ledger);
  out.report = estimate(ledger, uploads_from_ledger(ledger), params, table);
  return out;
}

}  // namespace helut
