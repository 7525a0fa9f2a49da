// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helut/llm_embed.hpp"
#include "support/generators.hpp"

using namespace helut;
using helut::testing::Gen;

namespace {

VmParams toy_params(std::int64_t n = 256) { return VmParams{n, 24, 14, 0}; }
VmParams gpt2_params() { return VmParams{std::int64_t{1} << 15, 24, 14, 0}; }

const CostTable& cpu() {
  static const CostTable t = load_cost_table(resolve_cost_table("cpu-default"));
  return t;
}

Eigen::VectorXd gather(const Vm& vm, const std::vector<CipherVec>& cts, std::int64_t width) {
  Eigen::VectorXd out(width);
  for (std::int64_t i = 0; i < width; ++i) {
    out(i) = vm.decrypt(cts[static_cast<std::size_t>(i / vm.slots())])(i % vm.slots());
  }
  return out;
}

LlmScenario gpt2(LlmStrategy s, std::int64_t m, bool compressed) {
  LlmScenario sc;
  sc.strategy = s;
  sc.m = m;
  if (compressed) sc.compression = CompressionSpec{16, 32, 0};
  return sc;
}

}  // namespace

TEST_CASE("sequence validation") {
  CHECK_NOTHROW((SequenceLookup{{0, 3}, 4, 2}.validate()));
  CHECK_THROWS_AS((SequenceLookup{{4}, 4, 2}.validate()), IndexError);
  CHECK_THROWS_AS((SequenceLookup{{}, 4, 2}.validate()), ParameterError);
  CHECK(llm_strategy_from_string(to_string(LlmStrategy::client_side)) == LlmStrategy::client_side);
}

TEST_CASE("column-packed product on a 2x4 one-hot against a 4x3 table") {
  Vm vm(toy_params(8));
  Eigen::MatrixXd e(4, 3);
  e << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  const SequenceLookup seq{{2, 0}, 4, 3};
  const auto cols = pack_columns(vm, seq, 1);
  REQUIRE(cols.columns.size() == 4);
  const auto out = cpmm_embedding(vm, cols, e);
  REQUIRE(out.size() == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(vm.decrypt(out[c])(0) == e(2, c));
    CHECK(vm.decrypt(out[c])(1) == e(0, c));
    CHECK(out[c].level() == 0);
  }
  CHECK(vm.ledger().count(OpKind::rotate) == 0);
  CHECK(vm.ledger().count(OpKind::pt_mul) == 12);
}

TEST_CASE("property: column-packed product uses V*d multiplies and no rotations") {
  Gen g(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t vocab = g.integer(1, 64);
    const int d = g.small(1, 8);
    const std::int64_t m = g.integer(1, 16);
    std::vector<std::int64_t> tokens;
    for (std::int64_t i = 0; i < m; ++i) tokens.push_back(g.integer(0, vocab - 1));
    const EmbeddingTable t = random_table("v", vocab, d, g.seed());
    Vm vm(toy_params(16));
    const auto out = cpmm_embedding(vm, pack_columns(vm, SequenceLookup{tokens, vocab, d}, 1), t.weights);
    CHECK(vm.ledger().count(OpKind::rotate) == 0);
    CHECK(vm.ledger().count(OpKind::pt_mul) == static_cast<std::uint64_t>(vocab * d));
    for (std::int64_t i = 0; i < m; ++i) {
      for (int c = 0; c < d; ++c) CHECK(vm.decrypt(out[c])(i) == doctest::Approx(t.weights(tokens[i], c)));
    }
    Vm acc(toy_params(16), ExecMode::accounting);
    cpmm_embedding_accounting(acc, vocab, d, 1);
    CHECK(acc.ledger().count(OpKind::pt_mul) == vm.ledger().count(OpKind::pt_mul));
    CHECK(acc.ledger().count(OpKind::rotate) == 0);
  }
}

TEST_CASE("compressed columns match the compressed table") {
  Gen g(8);
  const EmbeddingTable t = random_table("v", 200, 12, 1);
  const CodedTableStack s = compress_table(t, CompressionSpec{4, 4, 0}, 2);
  const SequenceLookup seq{{0, 17, 199, 42}, 200, 12};
  Vm vm(toy_params(16));
  const auto cols = pack_columns_compressed(vm, seq, 4, 4, 1);
  CHECK(cols.columns.size() == 16);
  const auto out = cpmm_embedding(vm, cols, s.stacked());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const Eigen::VectorXd want = s.lookup(seq.tokens[i]);
    for (int c = 0; c < 12; ++c) CHECK(vm.decrypt(out[c])(i) == doctest::Approx(want(c)).epsilon(1e-12));
  }
}

TEST_CASE("uploading every vocabulary column at the lowest level costs about 49 GiB") {
  const VmParams p = gpt2_params();
  const double gib = 50257.0 * static_cast<double>(object_size_bytes(p, 0)) / (1024.0 * 1024.0 * 1024.0);
  CHECK(gib == doctest::Approx(49.08).epsilon(1e-3));
  const ScenarioRow row = run_scenario(gpt2(LlmStrategy::cpmm, 1, false), p, cpu());
  CHECK(row.input_cts == 50257);
  CHECK(row.upload_gib == doctest::Approx(2.0 * gib).epsilon(1e-6));
}

TEST_CASE("digit compression shrinks the column count by about 98x") {
  const ScenarioRow full = run_scenario(gpt2(LlmStrategy::cpmm, 1, false), gpt2_params(), cpu());
  const ScenarioRow comp = run_scenario(gpt2(LlmStrategy::cpmm, 1, true), gpt2_params(), cpu());
  CHECK(comp.input_cts == 512);
  CHECK(static_cast<double>(full.input_cts) / static_cast<double>(comp.input_cts) == doctest::Approx(98.16).epsilon(1e-3));
  CHECK(full.muls == 50257ull * 768ull);
  CHECK(full.rotations == 0);
  CHECK(comp.rotations == 0);
  CHECK(full.levels == 1);
}

TEST_CASE("column-packed estimates land near 6.2 hours and 223 seconds") {
  const ScenarioRow full = run_scenario(gpt2(LlmStrategy::cpmm, 1, false), gpt2_params(), cpu());
  const ScenarioRow comp = run_scenario(gpt2(LlmStrategy::cpmm, 1, true), gpt2_params(), cpu());
  CHECK(std::abs(full.est_seconds - 6.2 * 3600.0) <= 0.10 * 6.2 * 3600.0);
  CHECK(std::abs(comp.est_seconds - 223.0) <= 0.10 * 223.0);
}

TEST_CASE("block-diagonal lookup of one token equals the single-table lookup") {
  Gen g(5);
  const VmParams p = toy_params(64);
  for (int trial = 0; trial < 10; ++trial) {
    const EmbeddingTable t = random_table("v", g.integer(2, 40), g.small(1, 6), g.seed());
    const std::int64_t tok = g.integer(0, t.k - 1);
    Vm a(p), b(p);
    const std::vector<std::int64_t> tokens{tok};
    const auto seq = blockdiag_sequence_lookup(a, sequence_packing(t, 1, p), tokens, 2);
    const std::vector<TableSource> one{t};
    const PackedEmbeddingSet packed = pack_block_diagonal(one, p);
    const LookupRequest req{{{t.id, tok}}};
    const auto direct = lookup_encrypted(b, packed, encrypt_chunks(b, encode_client(req, packed.layout()), 2));
    CHECK(gather(a, seq, t.d) == gather(b, direct, t.d));
    CHECK(a.ledger().count(OpKind::rotate) == b.ledger().count(OpKind::rotate));
  }
}

TEST_CASE("property: block-diagonal sequence lookups return every token's row") {
  Gen g(77);
  for (int trial = 0; trial < 25; ++trial) {
    const std::int64_t vocab = g.integer(1, 256);
    const int d = g.small(1, 16);
    const std::int64_t m = g.integer(1, 8);
    std::vector<std::int64_t> tokens;
    for (std::int64_t i = 0; i < m; ++i) tokens.push_back(g.integer(0, vocab - 1));
    const EmbeddingTable t = random_table("v", vocab, d, g.seed());
    const bool compressed = vocab > 4 && g.coin();
    const VmParams p = toy_params(512);
    Vm vm(p);
    std::optional<CodedTableStack> stack;
    if (compressed) stack = compress_table(t, CompressionSpec{4, 0, 0}, g.seed());
    const TableSource src = stack ? TableSource(*stack) : TableSource(t);
    const PackedEmbeddingSet packed = sequence_packing(src, m, p);
    const auto out = blockdiag_sequence_lookup(vm, packed, tokens, 2);
    const Eigen::VectorXd flat = gather(vm, out, m * d);
    double err = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      const Eigen::VectorXd want = stack ? Eigen::VectorXd(stack->lookup(tokens[i])) : Eigen::VectorXd(t.weights.row(tokens[i]).transpose());
      err = std::max(err, (flat.segment(i * d, d) - want).cwiseAbs().maxCoeff());
    }
    CAPTURE(trial);
    CHECK(err <= 1e-9);
  }
}

TEST_CASE("128 compressed tokens fit in two input ciphertexts") {
  const ScenarioRow row = run_scenario(gpt2(LlmStrategy::blockdiag, 128, true), gpt2_params(), cpu());
  CHECK(row.input_cts == 2);
  CHECK(row.status == "ok");
}

TEST_CASE("uncompressed diagonals exceed a small memory budget") {
  LlmScenario s = gpt2(LlmStrategy::blockdiag, 3, false);
  s.memory_budget_gib = 120.0;
  CHECK_THROWS_AS(run_scenario(s, gpt2_params(), cpu()), CapacityError);
  s.memory_budget_gib = 512.0;
  const ScenarioRow row = run_scenario(s, gpt2_params(), cpu());
  CHECK(row.diagonal_gib > 120.0);
  CHECK(row.diagonal_gib < 512.0);
}

TEST_CASE("block-diagonal time grows with the sequence length") {
  double prev = 0.0;
  for (std::int64_t m : {1, 2, 3}) {
    const ScenarioRow row = run_scenario(gpt2(LlmStrategy::blockdiag, m, false), gpt2_params(), cpu());
    CHECK(row.est_seconds > prev);
    prev = row.est_seconds;
  }
}

TEST_CASE("client-side lookups need one round trip per token") {
  const ScenarioRow row = run_scenario(gpt2(LlmStrategy::client_side, 128, false), gpt2_params(), cpu());
  CHECK(row.round_trips == 128);
  CHECK(row.status == "leaks_table");
  const GenerationStepCost g = generation_step_cost(gpt2(LlmStrategy::client_side, 1, false), gpt2_params(), cpu());
  CHECK(g.round_trips == 1);
}

TEST_CASE("compressed generation steps are cheaper than uncompressed ones") {
  const auto comp = generation_step_cost(gpt2(LlmStrategy::blockdiag, 1, true), gpt2_params(), cpu());
  const auto full = generation_step_cost(gpt2(LlmStrategy::blockdiag, 1, false), gpt2_params(), cpu());
  CHECK(comp.report.total_seconds < full.report.total_seconds);
  CHECK(comp.report.total_seconds == doctest::Approx(3.22).epsilon(0.01));
}
