// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helut/config.hpp"
#include "helut/embedding.hpp"
#include "helut/model_io.hpp"
#include "support/generators.hpp"

using namespace helut;
using helut::testing::Gen;
using helut::testing::max_abs_diff;

namespace {

VmParams params(std::int64_t n) { return VmParams{n, 24, 12, 1}; }

// Repeated divmod, least significant digit first.
std::vector<int> divmod_digits(std::int64_t i, int p, int digits) {
  std::vector<int> out;
  for (int t = 0; t < digits; ++t) {
    out.push_back(static_cast<int>(i % p));
    i /= p;
  }
  return out;
}

EmbeddingModelSpec criteo_spec(std::int64_t threshold) {
  ConfigNode root(load_json_file(std::filesystem::path(HELUT_DATA_DIR) / "configs" / "criteo_tables.json"));
  EmbeddingModelSpec spec = parse_embedding_spec(root);
  spec.threshold = threshold;
  return spec;
}

Eigen::VectorXd run_lookup(const PackedEmbeddingSet& packed, const Eigen::VectorXd& client,
                           std::int64_t n, int* level = nullptr) {
  Vm vm(params(n));
  const auto in = encrypt_chunks(vm, client, 3);
  const auto out = lookup_encrypted(vm, packed, std::span<const CipherVec>(in));
  Eigen::VectorXd flat(static_cast<Eigen::Index>(out.size()) * n);
  for (std::size_t i = 0; i < out.size(); ++i) {
    flat.segment(static_cast<Eigen::Index>(i) * n, n) = vm.decrypt(out[i]);
    if (level) *level = out[i].level();
  }
  return flat.head(packed.total_cols());
}

}  // namespace

TEST_CASE("one_hot") {
  CHECK(one_hot(2, 4) == Eigen::Vector4d(0, 0, 1, 0));
  CHECK(one_hot(0, 1) == Eigen::VectorXd::Ones(1));
  for (std::int64_t i = 0; i < 9; ++i) CHECK(one_hot(i, 9).sum() == 1.0);
  CHECK_THROWS_AS(one_hot(4, 4), IndexError);
  CHECK_THROWS_AS(one_hot(-1, 4), IndexError);
}

TEST_CASE("digit_decompose examples") {
  CHECK(digit_decompose(14, 4, 2) == std::vector<int>{2, 3});
  CHECK(digit_decompose(0, 7, 5) == std::vector<int>(5, 0));
  const auto d = digit_decompose(50256, 16, 4);
  CHECK(d == std::vector<int>{0, 5, 4, 12});
  CHECK(d == divmod_digits(50256, 16, 4));
  CHECK(digit_compose(d, 16) == 50256);
  CHECK_THROWS_AS(digit_decompose(16, 4, 2), IndexError);
}

TEST_CASE("recomposition is exhaustive up to 2^16") {
  const std::vector<std::pair<int, int>> cases{{2, 16}, {4, 8}, {16, 4}, {3, 10}, {256, 2}};
  for (const auto& [p, l] : cases) {
    const auto limit = static_cast<std::int64_t>(std::pow(p, l));
    for (std::int64_t i = 0; i < limit; ++i) {
      const auto d = digit_decompose(i, p, l);
      if (digit_compose(d, p) != i || d != divmod_digits(i, p, l)) {
        FAIL("recomposition failed at i=" << i << " p=" << p);
      }
    }
  }
}

TEST_CASE("digits_needed") {
  CHECK(digits_needed(1'000'000, 4) == 10);
  CHECK(digits_needed(50257, 16) == 4);
  CHECK(digits_needed(4, 4) == 1);
  CHECK(digits_needed(5, 4) == 2);
  CHECK(digits_needed(1, 4) == 1);
}

TEST_CASE("encode_client concatenates one-hots") {
  EmbeddingModelSpec spec;
  spec.tables = {{"a", 2, 3, {}, {}}, {"b", 4, 3, {}, {}}};
  const SlotLayout layout = make_layout(spec);
  const Eigen::VectorXd v = encode_client(LookupRequest{{{"a", 1}, {"b", 2}}}, layout);
  Eigen::VectorXd want(6);
  want << 0, 1, 0, 0, 1, 0;
  CHECK(v == want);
  CHECK_THROWS_AS(encode_client(LookupRequest{{{"b", 1}, {"a", 2}}}, layout), LayoutError);
  CHECK_THROWS_AS(encode_client(LookupRequest{{{"a", 1}}}, layout), LayoutError);
  CHECK_THROWS_AS(encode_client(LookupRequest{{{"a", 2}, {"b", 0}}}, layout), IndexError);
}

TEST_CASE("compressed segments hold one hot per digit") {
  EmbeddingModelSpec spec;
  spec.tables = {{"vocab", 50257, 768, 16, 32}};
  const SlotLayout layout = make_layout(spec);
  CHECK(layout.sparse_slots() == 512);
  Gen g(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t i = g.integer(0, 50256);
    const Eigen::VectorXd v = encode_client(LookupRequest{{{"vocab", i}}}, layout);
    CHECK(v.size() == 512);
    CHECK(v.sum() == 32.0);
    for (int t = 0; t < 32; ++t) CHECK(v.segment(t * 16, 16).sum() == 1.0);
  }
}

TEST_CASE("compress_table shapes") {
  const CodedTableStack big = compress_shape("big", 1'000'000, 8, CompressionSpec{4, 0, 0});
  CHECK(big.digits == 10);
  CHECK(big.rows() == 40);
  const EmbeddingTable t = random_table("t", 3, 5, 1);
  const CodedTableStack small = compress_table(t, CompressionSpec{4, 0, 0}, 2);
  CHECK(small.digits == 1);
  CHECK(small.stacked().rows() == 4);
  CHECK(small.stacked().cols() == 5);
  CHECK_THROWS_AS(compress_shape("x", 100, 4, CompressionSpec{4, 3, 0}), ParameterError);
}

TEST_CASE("stacked rows follow the sub-tables") {
  const CodedTableStack s = compress_table(random_table("t", 60, 4, 1), CompressionSpec{4, 3, 0}, 9);
  const Eigen::MatrixXd st = s.stacked();
  const double bound = 1.0 / std::sqrt(4.0);
  for (int t = 0; t < 3; ++t) {
    for (int r = 0; r < 4; ++r) CHECK(st.row(t * 4 + r) == s.sub_tables[t].row(r));
  }
  CHECK(st.cwiseAbs().maxCoeff() <= bound);
  const auto dig = digit_decompose(37, 4, 3);
  Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(4);
  for (int t = 0; t < 3; ++t) want += s.sub_tables[t].row(dig[t]);
  CHECK(s.lookup(37) == want);
}

TEST_CASE("threshold compresses strictly larger tables") {
  EmbeddingModelSpec spec;
  spec.threshold = 100;
  spec.tables = {{"eq", 100, 2, {}, {}}, {"gt", 101, 2, {}, {}}};
  CHECK_FALSE(spec.compressed(spec.tables[0]));
  CHECK(spec.compressed(spec.tables[1]));
}

TEST_CASE("UCI layout needs 28 slots") {
  EmbeddingModelSpec spec;
  spec.dense_count = 5;
  const std::vector<std::int64_t> ks{2, 4, 2, 3, 2, 3, 4, 3};
  for (std::size_t i = 0; i < ks.size(); ++i) spec.tables.push_back({"t" + std::to_string(i), ks[i], 4, {}, {}});
  const SlotLayout layout = make_layout(spec);
  CHECK(layout.sparse_slots() == 23);
  CHECK(layout.total_slots() == 28);
}

TEST_CASE("Criteo-shaped slot counts across thresholds") {
  struct Row {
    std::int64_t threshold;
    std::int64_t slots;
    std::int64_t ciphertexts;
    double ratio;
  };
  const std::vector<Row> rows{{500, 1096, 1, 31180},
                              {5000, 9027, 1, 3746},
                              {50000, 47759, 2, 707.1},
                              {500000, 569545, 18, 59.28},
                              {5000000, 2772109, 85, 12.18}};
  const VmParams p;
  for (const auto& r : rows) {
    CAPTURE(r.threshold);
    const SlotLayout layout = make_layout(criteo_spec(r.threshold));
    CHECK(layout.total_slots() == r.slots);
    CHECK(ceil_div(layout.total_slots(), p.n) == r.ciphertexts);
    CHECK(layout.compression_ratio() == doctest::Approx(r.ratio).epsilon(1e-3));
  }
}

TEST_CASE("packed ciphertext counts for the two largest Criteo models") {
  const VmParams p;
  for (auto [threshold, cts] : {std::pair<std::int64_t, Index>{500000, 18}, {5000000, 85}}) {
    const EmbeddingModelSpec spec = criteo_spec(threshold);
    const auto tables = build_tables(spec, 1, false);
    const PackedEmbeddingSet packed = pack_block_diagonal(tables, p, DiagonalLayout::full_ring, 13);
    CHECK(ceil_div(packed.layout().total_slots(), p.n) == cts);
    CHECK(packed.input_ciphertexts() == ceil_div(packed.layout().sparse_slots(), p.n));
  }
}

TEST_CASE("compact Criteo packing: 512 diagonals for the two smallest models, 1024 for the next") {
  const VmParams p;
  for (auto [threshold, diags] : {std::pair<std::int64_t, Index>{500, 512}, {5000, 512}, {50000, 1024}}) {
    const EmbeddingModelSpec spec = criteo_spec(threshold);
    const PackedEmbeddingSet packed = pack_block_diagonal(build_tables(spec, 1, false), p, DiagonalLayout::compact, 13);
    CAPTURE(threshold);
    CHECK(packed.diagonal_count() == diags);
  }
}

TEST_CASE("block-diagonal packing places tables corner to corner") {
  Gen g(12);
  std::vector<TableSource> tables{random_table("a", 3, 2, 1), random_table("b", 5, 4, 2),
                                  compress_table(random_table("c", 20, 3, 3), CompressionSpec{4, 0, 0}, 4)};
  const PackedEmbeddingSet packed = pack_block_diagonal(tables, params(64));
  const auto& b = packed.blocks();
  REQUIRE(b.size() == 3);
  for (std::size_t i = 1; i < b.size(); ++i) {
    CHECK(b[i].row_offset == b[i - 1].row_offset + b[i - 1].rows);
    CHECK(b[i].col_offset == b[i - 1].col_offset + b[i - 1].cols);
  }
  const Eigen::MatrixXd m = packed.matrix();
  CHECK(m.rows() == 3 + 5 + 12);
  CHECK(m.cols() == 2 + 4 + 3);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      bool inside = false;
      for (const auto& blk : b) {
        inside |= i >= blk.row_offset && i < blk.row_offset + blk.rows && j >= blk.col_offset &&
                  j < blk.col_offset + blk.cols;
      }
      if (!inside) CHECK(m(i, j) == 0.0);
    }
  }
}

TEST_CASE("single uncompressed table reads a row") {
  const EmbeddingTable t = random_table("t", 10, 6, 5);
  const PackedEmbeddingSet packed = pack_block_diagonal({t}, params(32));
  for (std::int64_t i = 0; i < 10; ++i) {
    int level = 0;
    const Eigen::VectorXd out = run_lookup(packed, one_hot(i, 10), 32, &level);
    CHECK(max_abs_diff(out, t.row(i).transpose()) <= 1e-12);
    CHECK(level == 2);
  }
}

TEST_CASE("compressed table sums its sub-table rows") {
  const CodedTableStack s = compress_table(random_table("c", 200, 5, 1), CompressionSpec{4, 0, 0}, 3);
  const PackedEmbeddingSet packed = pack_block_diagonal({s}, params(64));
  const SlotLayout& layout = packed.layout();
  for (std::int64_t i : {0, 1, 57, 199}) {
    const Eigen::VectorXd client = encode_client(LookupRequest{{{"c", i}}}, layout);
    CHECK(max_abs_diff(run_lookup(packed, client, 64), s.lookup(i).transpose()) <= 1e-12);
  }
}

TEST_CASE("multi-table output is contiguous and gap-free") {
  Gen g(19);
  std::vector<TableSource> tables{random_table("a", 7, 3, 1), random_table("b", 4, 2, 2),
                                  compress_table(random_table("c", 300, 4, 3), CompressionSpec{8, 0, 0}, 4)};
  const PackedEmbeddingSet packed = pack_block_diagonal(tables, params(128));
  const LookupRequest req{{{"a", 6}, {"b", 0}, {"c", 123}}};
  const Eigen::VectorXd out = run_lookup(packed, encode_client(req, packed.layout()), 128);
  const Eigen::VectorXd want = lookup_plain(tables, req);
  CHECK(out.size() == 9);
  CHECK(max_abs_diff(out, want) <= 1e-12);
}

TEST_CASE("inputs wider than one ciphertext are split and summed") {
  const EmbeddingTable a = random_table("a", 40, 3, 1);
  const EmbeddingTable b = random_table("b", 30, 5, 2);
  const PackedEmbeddingSet packed = pack_block_diagonal({a, b}, params(16));
  CHECK(packed.input_ciphertexts() == 5);
  const LookupRequest req{{{"a", 33}, {"b", 2}}};
  int level = 0;
  const Eigen::VectorXd out = run_lookup(packed, encode_client(req, packed.layout()), 16, &level);
  CHECK(max_abs_diff(out, lookup_plain({a, b}, req)) <= 1e-12);
  CHECK(level == 2);
}

TEST_CASE("lookup rejects a wrong number of inputs") {
  const PackedEmbeddingSet packed = pack_block_diagonal({random_table("a", 40, 3, 1)}, params(16));
  Vm vm(params(16));
  std::vector<CipherVec> one{vm.encrypt(Eigen::VectorXd::Zero(16), 3)};
  CHECK_THROWS_AS(lookup_encrypted(vm, packed, std::span<const CipherVec>(one)), LayoutError);
}

TEST_CASE("property: encrypted lookup matches the plaintext oracle and consumes one level") {
  Gen g(20240613);
  for (int trial = 0; trial < 150; ++trial) {
    const std::int64_t n = 256;
    EmbeddingModelSpec spec;
    spec.base = 1 << g.small(1, 3);
    spec.threshold = g.integer(8, 200);
    const int count = g.small(1, 6);
    for (int i = 0; i < count; ++i) {
      spec.tables.push_back({"t" + std::to_string(i), g.log_uniform(1, 1000), g.small(1, 12), {}, {}});
    }
    const auto tables = build_tables(spec, g.seed());
    const auto layout = g.coin() ? DiagonalLayout::full_ring : DiagonalLayout::compact;
    const PackedEmbeddingSet packed = pack_block_diagonal(tables, params(n), layout);
    LookupRequest req;
    for (const auto& t : spec.tables) req.indices.push_back({t.id, g.integer(0, t.k - 1)});
    int level = 0;
    const Eigen::VectorXd out = run_lookup(packed, encode_client(req, packed.layout()), n, &level);
    CAPTURE(trial);
    CHECK(max_abs_diff(out, lookup_plain(tables, req)) <= 1e-6);
    CHECK(level == 2);
    CHECK(packed.input_ciphertexts() == std::max<Index>(1, ceil_div(packed.layout().sparse_slots(), n)));
  }
}
