// SPDX-License-Identifier: Apache-2.0
#include "helut/dlrm.hpp"

#include <cmath>
#include <random>

#include "helut/errors.hpp"

namespace helut {

namespace {

void check_layers(const std::vector<int>& dims, const std::vector<DenseLayer>& layers,
                  const char* name) {
  if (dims.size() < 2) throw ParameterError(std::string(name) + " needs at least two widths");
  for (int w : dims) {
    if (w < 1) throw ParameterError(std::string(name) + " widths must be positive");
  }
  if (layers.empty()) return;
  if (layers.size() != dims.size() - 1) {
    throw ParameterError(std::string(name) + " has " + std::to_string(layers.size()) +
                         " layers for " + std::to_string(dims.size()) + " widths");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rows() != dims[i + 1] || l.weight.cols() != dims[i] || l.bias.size() != dims[i + 1]) {
      throw ParameterError(std::string(name) + " layer " + std::to_string(i) +
                           " shape does not match its widths");
    }
  }
}

std::vector<DenseLayer> random_layers(const std::vector<int>& dims, std::mt19937_64& rng) {
  std::vector<DenseLayer> out;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer l{Eigen::MatrixXd(dims[i + 1], dims[i]), Eigen::VectorXd(dims[i + 1])};
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = dist(rng);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = dist(rng);
    out.push_back(std::move(l));
  }
  return out;
}

Eigen::VectorXd apply_activation(const PolyActivation& a, const Eigen::VectorXd& v, bool exact) {
  return v.unaryExpr([&](double x) { return exact ? a.eval_exact(x) : a.eval_plain(x); });
}

PlainVec padded_plain(const Vm& vm, const Eigen::VectorXd& values) {
  if (!vm.functional()) return PlainVec();
  return vm.encode(values);
}

}  // namespace

void NetworkSpec::validate() const {
  check_layers(bottom_dims, bottom, "bottom MLP");
  check_layers(top_dims, top, "top MLP");
  if (bottom_dims.front() != dense_count()) {
    throw ParameterError("bottom MLP input width " + std::to_string(bottom_dims.front()) +
                         " differs from dense feature count " + std::to_string(dense_count()));
  }
  const std::int64_t want = bottom_dims.back() + embedding.output_width();
  if (top_dims.front() != want) {
    throw ParameterError("top MLP input width " + std::to_string(top_dims.front()) +
                         " must equal bottom output plus embedding widths (" +
                         std::to_string(want) + ")");
  }
  if (top_dims.back() != 1) throw ParameterError("top MLP must end in a single logit");
  if (!(activation_bound > 0)) throw ParameterError("activation bound must be positive");
}

void init_random_weights(NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  spec.bottom = random_layers(spec.bottom_dims, rng);
  spec.top = random_layers(spec.top_dims, rng);
}

DlrmModel build_model(NetworkSpec spec, std::vector<TableSource> tables, const VmParams& params,
                      DiagonalLayout layout) {
  spec.validate();
  if (spec.bottom.empty() || spec.top.empty()) throw ParameterError("network has no weights");
  DlrmModel m;
  m.packed = pack_block_diagonal(tables, params, layout, spec.dense_count());
  if (m.packed.output_ciphertexts() != 1) {
    throw CapacityError("embedding outputs exceed one ciphertext");
  }
  m.shared_input = spec.dense_count() + m.packed.layout().sparse_slots() <= params.n;
  m.activation = make_activation(spec.activation, spec.activation_bound);
  for (const auto& l : spec.bottom) {
    auto d = diagonalize(l.weight, params);
    auto p = plan_bsgs(d);
    m.bottom_plans.push_back(LayerPlan{std::move(d), std::move(p)});
  }
  for (const auto& l : spec.top) {
    auto d = diagonalize(l.weight, params);
    auto p = plan_bsgs(d);
    m.top_plans.push_back(LayerPlan{std::move(d), std::move(p)});
  }
  m.tables = std::move(tables);
  m.spec = std::move(spec);
  return m;
}

DlrmInput random_input(const DlrmModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dense(-1.0, 1.0);
  DlrmInput in;
  in.dense.resize(model.spec.dense_count());
  for (Eigen::Index i = 0; i < in.dense.size(); ++i) in.dense(i) = dense(rng);
  for (const auto& seg : model.layout().segments) {
    std::uniform_int_distribution<std::int64_t> idx(0, seg.k - 1);
    in.request.indices.push_back(TableIndex{seg.table_id, idx(rng)});
  }
  return in;
}

Eigen::VectorXd client_vector(const DlrmModel& model, const DlrmInput& input) {
  if (input.dense.size() != model.spec.dense_count()) {
    throw LayoutError("expected " + std::to_string(model.spec.dense_count()) + " dense values, got " +
                      std::to_string(input.dense.size()));
  }
  Eigen::VectorXd sparse = encode_client(input.request, model.layout());
  Eigen::VectorXd v(input.dense.size() + sparse.size());
  v << input.dense, sparse;
  return v;
}

std::vector<CipherVec> encrypt_input(Vm& vm, const DlrmModel& model, const DlrmInput& input,
                                     int level) {
  const std::int64_t dc = model.spec.dense_count();
  const std::int64_t ss = model.layout().sparse_slots();
  if (!vm.functional()) {
    if (model.shared_input) return {vm.encrypt_placeholder(level)};
    std::vector<CipherVec> out{vm.encrypt_placeholder(level)};
    for (auto& c : placeholder_chunks(vm, ss, level)) out.push_back(std::move(c));
    return out;
  }
  Eigen::VectorXd v = client_vector(model, input);
  if (model.shared_input) return {vm.encrypt(v, level)};
  std::vector<CipherVec> out{vm.encrypt(Eigen::VectorXd(v.head(dc)), level)};
  for (auto& c : encrypt_chunks(vm, Eigen::VectorXd(v.tail(ss)), level)) out.push_back(std::move(c));
  return out;
}

double forward_plain(const DlrmModel& model, const DlrmInput& input, bool exact) {
  const NetworkSpec& s = model.spec;
  Eigen::VectorXd h = input.dense;
  for (const auto& l : s.bottom) h = apply_activation(model.activation, l.weight * h + l.bias, exact);
  Eigen::VectorXd emb = lookup_plain(model.tables, input.request);
  Eigen::VectorXd z(h.size() + emb.size());
  z << h, emb;
  for (std::size_t i = 0; i < s.top.size(); ++i) {
    z = s.top[i].weight * z + s.top[i].bias;
    if (i + 1 < s.top.size()) z = apply_activation(model.activation, z, exact);
  }
  return z(0);
}

double calibrate_activation_bound(const DlrmModel& model, std::span<const DlrmInput> samples,
                                  double margin) {
  const NetworkSpec& s = model.spec;
  double peak = 0.0;
  for (const auto& in : samples) {
    Eigen::VectorXd h = in.dense;
    for (const auto& l : s.bottom) {
      Eigen::VectorXd pre = l.weight * h + l.bias;
      peak = std::max(peak, pre.cwiseAbs().maxCoeff());
      h = apply_activation(model.activation, pre, true);
    }
    Eigen::VectorXd emb = lookup_plain(model.tables, in.request);
    Eigen::VectorXd z(h.size() + emb.size());
    z << h, emb;
    for (std::size_t i = 0; i + 1 < s.top.size(); ++i) {
      Eigen::VectorXd pre = s.top[i].weight * z + s.top[i].bias;
      peak = std::max(peak, pre.cwiseAbs().maxCoeff());
      z = apply_activation(model.activation, pre, true);
    }
  }
  return std::max(peak * margin, 1e-6);
}

std::pair<CipherVec, CipherVec> extract_features(Vm& vm, const CipherVec& x,
                                                 std::int64_t dense_count,
                                                 std::int64_t sparse_slots) {
  if (dense_count < 0 || sparse_slots < 0 || dense_count + sparse_slots > vm.slots()) {
    throw LayoutError("dense and sparse regions do not fit one ciphertext");
  }
  CipherVec dense = vm.mul(x, vm.mask(0, dense_count));
  CipherVec sparse = vm.mul(vm.rotate(x, dense_count), vm.mask(0, sparse_slots));
  return {dense, sparse};
}

CipherVec linear_layer(Vm& vm, const LayerPlan& layer, const DenseLayer& weights,
                       const CipherVec& x) {
  CipherVec y = matvec_bsgs(vm, layer.diag, layer.plan, x);
  return vm.add(y, padded_plain(vm, weights.bias));
}

CipherVec concat_interaction(Vm& vm, const CipherVec& dense_out, const CipherVec& emb_out,
                             std::int64_t bottom_width, std::int64_t emb_width) {
  if (bottom_width < 1 || emb_width < 1 || bottom_width + emb_width > vm.slots()) {
    throw LayoutError("concatenation widths " + std::to_string(bottom_width) + " + " +
                      std::to_string(emb_width) + " do not fit " + std::to_string(vm.slots()) +
                      " slots");
  }
  CipherVec a = vm.mul(dense_out, vm.mask(0, bottom_width));
  CipherVec b = vm.mul(vm.rotate_right(emb_out, bottom_width),
                       vm.mask(bottom_width, bottom_width + emb_width));
  return vm.add(a, b);
}

InferenceResult infer(Vm& vm, Bootstrapper& boot, const DlrmModel& model,
                      std::span<const CipherVec> inputs) {
  const NetworkSpec& s = model.spec;
  OpLedger& ledger = vm.ledger();
  const int start = boot.placed();
  const std::size_t expected =
      model.shared_input ? 1 : 1 + static_cast<std::size_t>(model.packed.input_ciphertexts());
  if (inputs.size() != expected) {
    throw LayoutError("inference expects " + std::to_string(expected) + " input ciphertexts, got " +
                      std::to_string(inputs.size()));
  }

  CipherVec dense;
  std::vector<CipherVec> sparse;
  {
    PhaseScope ph(ledger, "extract");
    if (model.shared_input) {
      CipherVec x = boot.ensure(inputs[0], 1);
      auto [d, sp] = extract_features(vm, x, s.dense_count(), model.layout().sparse_slots());
      dense = std::move(d);
      sparse.push_back(std::move(sp));
    } else {
      dense = inputs[0];
      sparse.assign(inputs.begin() + 1, inputs.end());
    }
  }

  CipherVec h = dense;
  {
    PhaseScope ph(ledger, "bottom_mlp");
    for (std::size_t i = 0; i < s.bottom.size(); ++i) {
      h = linear_layer(vm, model.bottom_plans[i], s.bottom[i], boot.ensure(h, 1));
      h = activation_eval(vm, model.activation, h, s.bottom_dims[i + 1], &boot);
    }
  }

  CipherVec emb;
  {
    PhaseScope ph(ledger, "embedding");
    for (auto& c : sparse) c = boot.ensure(c, 1);
    emb = lookup_encrypted(vm, model.packed, sparse).front();
  }

  CipherVec z;
  {
    PhaseScope ph(ledger, "concat");
    z = concat_interaction(vm, boot.ensure(h, 1), boot.ensure(emb, 1), s.bottom_width(),
                           s.embedding.output_width());
  }

  {
    PhaseScope ph(ledger, "top_mlp");
    for (std::size_t i = 0; i < s.top.size(); ++i) {
      z = linear_layer(vm, model.top_plans[i], s.top[i], boot.ensure(z, 1));
      if (i + 1 < s.top.size()) z = activation_eval(vm, model.activation, z, s.top_dims[i + 1], &boot);
    }
  }
  return InferenceResult{z, boot.placed() - start};
}

}  // namespace helut
