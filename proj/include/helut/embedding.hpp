// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/he_linalg.hpp"

namespace helut {

struct CompressionSpec {
  int base = 4;
  int digits = 0;  // 0: smallest count covering the table
  std::int64_t threshold = 0;
};

// Smallest digit count with base^digits >= k.
int digits_needed(std::int64_t k, int base);

Eigen::VectorXd one_hot(std::int64_t i, std::int64_t k);

// Least-significant digit first.
std::vector<int> digit_decompose(std::int64_t i, int base, int digits);

std::int64_t digit_compose(std::span<const int> digits, int base);

struct EmbeddingTable {
  std::string id;
  std::int64_t k = 0;
  int d = 0;
  Eigen::MatrixXd weights;  // k x d, empty for shape-only tables

  bool structural() const { return weights.size() == 0; }
  Eigen::RowVectorXd row(std::int64_t i) const;
};

EmbeddingTable random_table(const std::string& id, std::int64_t k, int d, std::uint64_t seed);

struct CodedTableStack {
  std::string parent_id;
  std::int64_t k = 0;
  int base = 0;
  int digits = 0;
  int d = 0;
  std::vector<Eigen::MatrixXd> sub_tables;  // digits tables of base x d, empty if shape-only

  bool structural() const { return sub_tables.empty(); }
  std::int64_t rows() const { return static_cast<std::int64_t>(base) * digits; }
  Eigen::MatrixXd stacked() const;
  Eigen::RowVectorXd lookup(std::int64_t i) const;
};

// Sub-tables are drawn uniformly from [-1/sqrt(d), 1/sqrt(d)].
CodedTableStack compress_table(const EmbeddingTable& table, const CompressionSpec& spec,
                               std::uint64_t seed);
CodedTableStack compress_shape(const std::string& id, std::int64_t k, int d,
                               const CompressionSpec& spec);

struct TableSpec {
  std::string id;
  std::int64_t k = 0;
  int d = 0;
  std::optional<int> base;  // explicit compression
  std::optional<int> digits;
};

struct EmbeddingModelSpec {
  std::vector<TableSpec> tables;
  std::int64_t threshold = -1;  // compress when k > threshold; negative disables
  int base = 4;
  std::int64_t dense_count = 0;

  bool compressed(const TableSpec& t) const;
  int base_for(const TableSpec& t) const;
  int digits_for(const TableSpec& t) const;
  std::int64_t output_width() const;
};

struct SlotSegment {
  std::string table_id;
  std::int64_t offset = 0;  // relative to the start of the one-hot region
  std::int64_t k = 0;
  int d = 0;
  bool compressed = false;
  int base = 0;
  int digits = 0;

  std::int64_t width() const { return compressed ? std::int64_t{base} * digits : k; }
};

// Slot assignment shared by client and server.
struct SlotLayout {
  std::int64_t dense_count = 0;
  std::vector<SlotSegment> segments;

  std::int64_t sparse_slots() const;
  std::int64_t total_slots() const { return dense_count + sparse_slots(); }
  std::int64_t output_width() const;
  std::int64_t uncompressed_slots() const;
  double compression_ratio() const {
    return static_cast<double>(uncompressed_slots()) / static_cast<double>(sparse_slots());
  }
};

SlotLayout make_layout(const EmbeddingModelSpec& spec);

struct TableIndex {
  std::string table_id;
  std::int64_t index = 0;
};

struct LookupRequest {
  std::vector<TableIndex> indices;
};

// One-hot region for a request; tables must appear in layout order.
Eigen::VectorXd encode_client(const LookupRequest& request, const SlotLayout& layout);

using TableSource = std::variant<EmbeddingTable, CodedTableStack>;

// Materializes the tables of a model. Shape-only tables are produced when
// `with_weights` is false.
std::vector<TableSource> build_tables(const EmbeddingModelSpec& spec, std::uint64_t seed,
                                      bool with_weights = true);

// Concatenated embedding rows for a request, computed in the clear.
Eigen::VectorXd lookup_plain(const std::vector<TableSource>& tables, const LookupRequest& request);

struct PackedBlock {
  std::string table_id;
  Index row_offset = 0;  // input slot offset
  Index col_offset = 0;  // output slot offset
  Index rows = 0;
  Index cols = 0;
  bool compressed = false;
};

class PackedEmbeddingSet {
 public:
  PackedEmbeddingSet() = default;
  PackedEmbeddingSet(SlotLayout layout, std::vector<PackedBlock> blocks,
                     BlockSparseMatrix<double> op, TiledLinearMap<double> map,
                     DiagonalLayout diag_layout)
      : layout_(std::move(layout)),
        blocks_(std::move(blocks)),
        op_(std::move(op)),
        map_(std::move(map)),
        diag_layout_(diag_layout) {}

  const SlotLayout& layout() const { return layout_; }
  const std::vector<PackedBlock>& blocks() const { return blocks_; }
  Index total_rows() const { return op_.cols(); }
  Index total_cols() const { return op_.rows(); }
  // Lookup operator: outputs x inputs.
  const BlockSparseMatrix<double>& op() const { return op_; }
  // Block-diagonal table matrix: inputs x outputs.
  Eigen::MatrixXd matrix() const { return op_.dense().transpose(); }
  const TiledLinearMap<double>& map() const { return map_; }
  DiagonalLayout diag_layout() const { return diag_layout_; }
  Index input_ciphertexts() const { return map_.col_chunks(); }
  Index output_ciphertexts() const { return map_.row_chunks(); }
  Index diagonal_count() const { return map_.diagonal_count(); }

 private:
  SlotLayout layout_;
  std::vector<PackedBlock> blocks_;
  BlockSparseMatrix<double> op_;
  TiledLinearMap<double> map_;
  DiagonalLayout diag_layout_ = DiagonalLayout::full_ring;
};

// Places the tables corner to corner and diagonalizes the lookup operator,
// tiling it when the inputs or outputs exceed one ciphertext.
PackedEmbeddingSet pack_block_diagonal(const std::vector<TableSource>& tables,
                                       const VmParams& params,
                                       DiagonalLayout layout = DiagonalLayout::full_ring,
                                       std::int64_t dense_count = 0);

// Splits a client vector into ciphertext-sized chunks and encrypts them.
std::vector<CipherVec> encrypt_chunks(Vm& vm, const Eigen::VectorXd& values, int level);
std::vector<CipherVec> placeholder_chunks(Vm& vm, std::int64_t slots, int level);

// One output ciphertext per n output slots.
std::vector<CipherVec> lookup_encrypted(Vm& vm, const PackedEmbeddingSet& packed,
                                        std::span<const CipherVec> inputs,
                                        MatvecAlgo algo = MatvecAlgo::bsgs);

}  // namespace helut
