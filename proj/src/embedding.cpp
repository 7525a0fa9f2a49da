// SPDX-License-Identifier: Apache-2.0
#include "helut/embedding.hpp"

#include <cmath>
#include <random>

#include "helut/errors.hpp"

namespace helut {

namespace {

void fill_uniform(Eigen::MatrixXd& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::size_t index) {
  return seed + 0x9E3779B97F4A7C15ULL * (index + 1);
}

}  // namespace

int digits_needed(std::int64_t k, int base) {
  if (base < 2) throw ParameterError("digit base must be at least 2");
  if (k < 1) throw ParameterError("table must have at least one row");
  int digits = 1;
  std::int64_t cap = base;
  while (cap < k) {
    cap *= base;
    ++digits;
  }
  return digits;
}

Eigen::VectorXd one_hot(std::int64_t i, std::int64_t k) {
  if (k < 1) throw ParameterError("one_hot: k must be positive");
  if (i < 0 || i >= k) {
    throw IndexError("index " + std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
  v(i) = 1.0;
  return v;
}

std::vector<int> digit_decompose(std::int64_t i, int base, int digits) {
  if (base < 2) throw ParameterError("digit base must be at least 2");
  if (digits < 1) throw ParameterError("digit count must be positive");
  if (i < 0) throw IndexError("negative index " + std::to_string(i));
  std::vector<int> out(static_cast<std::size_t>(digits));
  std::int64_t rest = i;
  for (int t = 0; t < digits; ++t) {
    out[static_cast<std::size_t>(t)] = static_cast<int>(rest % base);
    rest /= base;
  }
  if (rest != 0) {
    throw IndexError("index " + std::to_string(i) + " needs more than " + std::to_string(digits) +
                     " base-" + std::to_string(base) + " digits");
  }
  return out;
}

std::int64_t digit_compose(std::span<const int> digits, int base) {
  std::int64_t v = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) v = v * base + *it;
  return v;
}

Eigen::RowVectorXd EmbeddingTable::row(std::int64_t i) const {
  if (i < 0 || i >= k) {
    throw IndexError("row " + std::to_string(i) + " outside table '" + id + "' of " +
                     std::to_string(k) + " rows");
  }
  if (structural()) throw ParameterError("table '" + id + "' has no weights");
  return weights.row(i);
}

EmbeddingTable random_table(const std::string& id, std::int64_t k, int d, std::uint64_t seed) {
  if (k < 1 || d < 1) throw ParameterError("table '" + id + "' must have positive shape");
  EmbeddingTable t{id, k, d, Eigen::MatrixXd(k, d)};
  std::mt19937_64 rng(seed);
  fill_uniform(t.weights, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  return t;
}

Eigen::MatrixXd CodedTableStack::stacked() const {
  if (structural()) throw ParameterError("stack '" + parent_id + "' has no weights");
  Eigen::MatrixXd m(rows(), d);
  for (int t = 0; t < digits; ++t) m.block(std::int64_t{t} * base, 0, base, d) = sub_tables[t];
  return m;
}

Eigen::RowVectorXd CodedTableStack::lookup(std::int64_t i) const {
  if (i < 0 || i >= k) {
    throw IndexError("row " + std::to_string(i) + " outside table '" + parent_id + "' of " +
                     std::to_string(k) + " rows");
  }
  if (structural()) throw ParameterError("stack '" + parent_id + "' has no weights");
  const auto dig = digit_decompose(i, base, digits);
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(d);
  for (int t = 0; t < digits; ++t) out += sub_tables[t].row(dig[static_cast<std::size_t>(t)]);
  return out;
}

CodedTableStack compress_shape(const std::string& id, std::int64_t k, int d,
                               const CompressionSpec& spec) {
  if (d < 1) throw ParameterError("table '" + id + "' must have positive width");
  const int digits = spec.digits > 0 ? spec.digits : digits_needed(k, spec.base);
  if (spec.base < 2) throw ParameterError("digit base must be at least 2");
  double cap = std::pow(static_cast<double>(spec.base), digits);
  if (cap < static_cast<double>(k)) {
    throw ParameterError("base " + std::to_string(spec.base) + " with " + std::to_string(digits) +
                         " digits cannot address " + std::to_string(k) + " rows");
  }
  return CodedTableStack{id, k, spec.base, digits, d, {}};
}

CodedTableStack compress_table(const EmbeddingTable& table, const CompressionSpec& spec,
                               std::uint64_t seed) {
  CodedTableStack s = compress_shape(table.id, table.k, table.d, spec);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(s.d));
  for (int t = 0; t < s.digits; ++t) {
    Eigen::MatrixXd sub(s.base, s.d);
    fill_uniform(sub, bound, rng);
    s.sub_tables.push_back(std::move(sub));
  }
  return s;
}

bool EmbeddingModelSpec::compressed(const TableSpec& t) const {
  if (t.base) return true;
  return threshold >= 0 && t.k > threshold;
}

int EmbeddingModelSpec::base_for(const TableSpec& t) const { return t.base ? *t.base : base; }

int EmbeddingModelSpec::digits_for(const TableSpec& t) const {
  const int need = digits_needed(t.k, base_for(t));
  if (!t.digits) return need;
  if (*t.digits < need) {
    throw ParameterError("table '" + t.id + "' needs " + std::to_string(need) + " digits in base " +
                         std::to_string(base_for(t)));
  }
  return *t.digits;
}

std::int64_t EmbeddingModelSpec::output_width() const {
  std::int64_t w = 0;
  for (const auto& t : tables) w += t.d;
  return w;
}

std::int64_t SlotLayout::sparse_slots() const {
  std::int64_t w = 0;
  for (const auto& s : segments) w += s.width();
  return w;
}

std::int64_t SlotLayout::output_width() const {
  std::int64_t w = 0;
  for (const auto& s : segments) w += s.d;
  return w;
}

std::int64_t SlotLayout::uncompressed_slots() const {
  std::int64_t w = 0;
  for (const auto& s : segments) w += s.k;
  return w;
}

SlotLayout make_layout(const EmbeddingModelSpec& spec) {
  SlotLayout layout;
  layout.dense_count = spec.dense_count;
  std::int64_t offset = 0;
  for (const auto& t : spec.tables) {
    if (t.k < 1 || t.d < 1) throw ParameterError("table '" + t.id + "' must have positive shape");
    SlotSegment s{t.id, offset, t.k, t.d, spec.compressed(t), 0, 0};
    if (s.compressed) {
      s.base = spec.base_for(t);
      s.digits = spec.digits_for(t);
    }
    offset += s.width();
    layout.segments.push_back(s);
  }
  return layout;
}

Eigen::VectorXd encode_client(const LookupRequest& request, const SlotLayout& layout) {
  if (request.indices.size() != layout.segments.size()) {
    throw LayoutError("request has " + std::to_string(request.indices.size()) +
                      " indices, layout has " + std::to_string(layout.segments.size()) + " tables");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.sparse_slots());
  for (std::size_t i = 0; i < request.indices.size(); ++i) {
    const auto& seg = layout.segments[i];
    const auto& req = request.indices[i];
    if (req.table_id != seg.table_id) {
      throw LayoutError("request table '" + req.table_id + "' at position " + std::to_string(i) +
                        " does not match layout table '" + seg.table_id + "'");
    }
    if (req.index < 0 || req.index >= seg.k) {
      throw IndexError("index " + std::to_string(req.index) + " outside table '" + seg.table_id +
                       "' of " + std::to_string(seg.k) + " rows");
    }
    if (seg.compressed) {
      const auto dig = digit_decompose(req.index, seg.base, seg.digits);
      for (int t = 0; t < seg.digits; ++t) {
        v(seg.offset + std::int64_t{t} * seg.base + dig[static_cast<std::size_t>(t)]) = 1.0;
      }
    } else {
      v(seg.offset + req.index) = 1.0;
    }
  }
  return v;
}

std::vector<TableSource> build_tables(const EmbeddingModelSpec& spec, std::uint64_t seed,
                                      bool with_weights) {
  std::vector<TableSource> out;
  for (std::size_t i = 0; i < spec.tables.size(); ++i) {
    const TableSpec& t = spec.tables[i];
    if (spec.compressed(t)) {
      CompressionSpec cs{spec.base_for(t), spec.digits_for(t), spec.threshold};
      if (with_weights) {
        EmbeddingTable shape{t.id, t.k, t.d, {}};
        out.emplace_back(compress_table(shape, cs, derive_seed(seed, i)));
      } else {
        out.emplace_back(compress_shape(t.id, t.k, t.d, cs));
      }
    } else if (with_weights) {
      out.emplace_back(random_table(t.id, t.k, t.d, derive_seed(seed, i)));
    } else {
      out.emplace_back(EmbeddingTable{t.id, t.k, t.d, {}});
    }
  }
  return out;
}

Eigen::VectorXd lookup_plain(const std::vector<TableSource>& tables, const LookupRequest& request) {
  if (request.indices.size() != tables.size()) {
    throw LayoutError("request does not cover every table");
  }
  std::int64_t width = 0;
  for (const auto& t : tables) {
    width += std::visit([](const auto& x) -> std::int64_t { return x.d; }, t);
  }
  Eigen::VectorXd out(width);
  std::int64_t off = 0;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const auto& req = request.indices[i];
    Eigen::RowVectorXd row = std::visit(
        [&](const auto& x) -> Eigen::RowVectorXd {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, EmbeddingTable>) {
            return x.row(req.index);
          } else {
            return x.lookup(req.index);
          }
        },
        tables[i]);
    out.segment(off, row.size()) = row.transpose();
    off += row.size();
  }
  return out;
}

PackedEmbeddingSet pack_block_diagonal(const std::vector<TableSource>& tables,
                                       const VmParams& params, DiagonalLayout layout,
                                       std::int64_t dense_count) {
  SlotLayout slots;
  slots.dense_count = dense_count;
  std::vector<PackedBlock> blocks;
  Index in = 0, out = 0;
  for (const auto& src : tables) {
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          SlotSegment seg;
          if constexpr (std::is_same_v<T, EmbeddingTable>) {
            seg = SlotSegment{t.id, in, t.k, t.d, false, 0, 0};
          } else {
            seg = SlotSegment{t.parent_id, in, t.k, t.d, true, t.base, t.digits};
          }
          blocks.push_back(PackedBlock{seg.table_id, in, out, seg.width(), seg.d, seg.compressed});
          slots.segments.push_back(seg);
          in += seg.width();
          out += seg.d;
        },
        src);
  }
  BlockSparseMatrix<double> op(out, in);
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const PackedBlock& b = blocks[i];
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          if (t.structural()) {
            op.add_structural_block(b.col_offset, b.row_offset, b.cols, b.rows);
          } else if constexpr (std::is_same_v<T, EmbeddingTable>) {
            op.add_block(b.col_offset, b.row_offset, t.weights.transpose());
          } else {
            op.add_block(b.col_offset, b.row_offset, t.stacked().transpose());
          }
        },
        tables[i]);
  }
  auto map = make_tiled(op, params, layout);
  return PackedEmbeddingSet(std::move(slots), std::move(blocks), std::move(op), std::move(map),
                            layout);
}

std::vector<CipherVec> encrypt_chunks(Vm& vm, const Eigen::VectorXd& values, int level) {
  const std::int64_t n = vm.slots();
  const std::int64_t chunks = std::max<std::int64_t>(1, ceil_div(values.size(), n));
  std::vector<CipherVec> out;
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t begin = c * n;
    const std::int64_t len = std::min<std::int64_t>(n, values.size() - begin);
    out.push_back(vm.encrypt(Eigen::VectorXd(values.segment(begin, std::max<std::int64_t>(0, len))), level));
  }
  return out;
}

std::vector<CipherVec> placeholder_chunks(Vm& vm, std::int64_t slots, int level) {
  const std::int64_t chunks = std::max<std::int64_t>(1, ceil_div(slots, vm.slots()));
  std::vector<CipherVec> out;
  for (std::int64_t c = 0; c < chunks; ++c) out.push_back(vm.encrypt_placeholder(level));
  return out;
}

std::vector<CipherVec> lookup_encrypted(Vm& vm, const PackedEmbeddingSet& packed,
                                        std::span<const CipherVec> inputs, MatvecAlgo algo) {
  if (static_cast<Index>(inputs.size()) != packed.input_ciphertexts()) {
    throw LayoutError("lookup expects " + std::to_string(packed.input_ciphertexts()) +
                      " input ciphertexts, got " + std::to_string(inputs.size()));
  }
  return tiled_matvec(vm, packed.map(), inputs, algo);
}

}  // namespace helut
