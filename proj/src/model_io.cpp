// SPDX-License-Identifier: Apache-2.0
#include "helut/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "helut/errors.hpp"

namespace helut {

namespace {

static_assert(std::endian::native == std::endian::little, "weights are stored little-endian");

int as_level(const ConfigNode& node) {
  const auto v = node.as_int();
  if (v < 0 || v > 4096) node.fail("level out of range");
  return static_cast<int>(v);
}

TableSpec parse_table(const ConfigNode& node, std::size_t index) {
  TableSpec t;
  t.id = node.has("id") ? node.at("id").as_string() : "T" + std::to_string(index);
  t.k = node.at("k").as_int();
  if (t.k < 1) node.at("k").fail("table needs at least one row");
  const auto d = node.at("d").as_int();
  if (d < 1 || d > (1 << 20)) node.at("d").fail("embedding width out of range");
  t.d = static_cast<int>(d);
  if (node.has("compress")) {
    ConfigNode c = node.at("compress");
    const auto p = c.at("p").as_int();
    if (p < 2 || p > (1 << 16)) c.at("p").fail("base must be in [2, 65536]");
    t.base = static_cast<int>(p);
    if (c.has("digits")) {
      const auto dg = c.at("digits").as_int();
      if (dg < 1 || dg > 64) c.at("digits").fail("digit count must be in [1, 64]");
      t.digits = static_cast<int>(dg);
    }
  }
  return t;
}

std::vector<int> parse_dims(const ConfigNode& node) {
  std::vector<int> out;
  for (auto v : node.as_ints()) {
    if (v < 1 || v > (1 << 20)) node.fail("layer width out of range");
    out.push_back(static_cast<int>(v));
  }
  if (out.size() < 2) node.fail("an MLP needs at least an input and an output width");
  return out;
}

const Tensor& find_tensor(const TensorMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw ParameterError("weights file has no tensor '" + name + "'");
  return it->second;
}

void load_layers(std::vector<DenseLayer>& layers, const std::vector<int>& dims,
                 const std::string& prefix, const TensorMap& m) {
  layers.clear();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    const Tensor& w = find_tensor(m, base + ".weight");
    const Tensor& b = find_tensor(m, base + ".bias");
    const std::vector<std::int64_t> ws{dims[i + 1], dims[i]};
    const std::vector<std::int64_t> bs{dims[i + 1]};
    if (w.shape != ws) throw ParameterError("tensor '" + base + ".weight' has the wrong shape");
    if (b.shape != bs) throw ParameterError("tensor '" + base + ".bias' has the wrong shape");
    DenseLayer l;
    l.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.values.data(), dims[i + 1], dims[i]);
    l.bias = Eigen::Map<const Eigen::VectorXd>(b.values.data(), dims[i + 1]);
    layers.push_back(std::move(l));
  }
}

void store_layers(TensorMap& m, const std::vector<DenseLayer>& layers, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    const auto& w = layers[i].weight;
    Tensor tw;
    tw.shape = {w.rows(), w.cols()};
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) tw.values.push_back(w(r, c));
    }
    Tensor tb;
    tb.shape = {layers[i].bias.size()};
    tb.values.assign(layers[i].bias.data(), layers[i].bias.data() + layers[i].bias.size());
    m[base + ".weight"] = std::move(tw);
    m[base + ".bias"] = std::move(tb);
  }
}

}  // namespace

VmParams parse_vm_params(const ConfigNode& node) {
  VmParams p;
  if (node.has("n")) p.n = node.at("n").as_int();
  if (node.has("L")) p.max_level = as_level(node.at("L"));
  if (node.has("L_boot")) p.boot_level = as_level(node.at("L_boot"));
  if (node.has("l_min")) p.min_level = as_level(node.at("l_min"));
  try {
    p.validate();
  } catch (const ParameterError& e) {
    node.fail(e.what());
  }
  return p;
}

json vm_params_to_json(const VmParams& p) {
  return json{{"n", p.n}, {"L", p.max_level}, {"L_boot", p.boot_level}, {"l_min", p.min_level}};
}

EmbeddingModelSpec parse_embedding_spec(const ConfigNode& node) {
  if (node.has("model") && node.at("model").is_string()) {
    const auto path = node.resolve_path(node.at("model").as_string());
    EmbeddingModelSpec spec = parse_embedding_spec(ConfigNode(load_json_file(path)));
    if (node.has("threshold")) spec.threshold = node.at("threshold").as_int();
    if (node.has("base")) {
      const auto b = node.at("base").as_int();
      if (b < 2 || b > (1 << 16)) node.at("base").fail("base must be in [2, 65536]");
      spec.base = static_cast<int>(b);
    }
    if (node.has("dense_count")) spec.dense_count = node.at("dense_count").as_int();
    return spec;
  }
  EmbeddingModelSpec spec;
  spec.threshold = node.get_int("threshold", -1);
  const auto base = node.get_int("base", 4);
  if (base < 2 || base > (1 << 16)) node.at("base").fail("base must be in [2, 65536]");
  spec.base = static_cast<int>(base);
  spec.dense_count = node.get_int("dense_count", 0);
  if (spec.dense_count < 0) node.at("dense_count").fail("dense feature count must be non-negative");
  if (node.has("tables")) {
    ConfigNode tables = node.at("tables");
    for (std::size_t i = 0; i < tables.size(); ++i) spec.tables.push_back(parse_table(tables.at(i), i));
  } else if (node.has("cardinalities")) {
    const auto ks = node.at("cardinalities").as_ints();
    const auto d = node.at("d").as_int();
    if (d < 1) node.at("d").fail("embedding width must be positive");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (ks[i] < 1) node.at("cardinalities").at(i).fail("table needs at least one row");
      spec.tables.push_back(TableSpec{"C" + std::to_string(i + 1), ks[i], static_cast<int>(d), {}, {}});
    }
  } else {
    node.fail("embedding model needs 'tables' or 'cardinalities'");
  }
  if (spec.tables.empty()) node.fail("embedding model has no tables");
  return spec;
}

NetworkConfig parse_network(const ConfigNode& node, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(node.get_int("seed", static_cast<std::int64_t>(seed)));
  NetworkSpec& spec = cfg.spec;
  spec.embedding = parse_embedding_spec(node.at("embedding"));
  spec.bottom_dims = parse_dims(node.at("bottom"));
  spec.top_dims = parse_dims(node.at("top"));
  if (node.has("activation")) {
    try {
      spec.activation = activation_from_string(node.at("activation").as_string());
    } catch (const ParameterError& e) {
      node.at("activation").fail(e.what());
    }
  }
  if (node.has("activation_bound") && node.at("activation_bound").is_string()) {
    if (node.at("activation_bound").as_string() != "auto") {
      node.at("activation_bound").fail("bound must be a number or \"auto\"");
    }
    cfg.auto_bound = true;
  } else {
    spec.activation_bound = node.get_double("activation_bound", 1.0);
    if (!(spec.activation_bound > 0)) node.at("activation_bound").fail("bound must be positive");
  }
  try {
    spec.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const ParameterError& e) {
    node.fail(e.what());
  }
  if (node.has("weights")) {
    cfg.weights_path = node.resolve_path(node.at("weights").as_string());
    apply_network_tensors(spec, load_weights(cfg.weights_path));
  } else {
    init_random_weights(spec, cfg.seed);
  }
  return cfg;
}

LlmScenario parse_llm_scenario(const ConfigNode& node) {
  LlmScenario s;
  s.vocab = node.get_int("V", s.vocab);
  if (s.vocab < 1) node.at("V").fail("vocabulary must be positive");
  const auto d = node.get_int("d", s.d);
  if (d < 1) node.at("d").fail("hidden width must be positive");
  s.d = static_cast<int>(d);
  s.m = node.get_int("m", s.m);
  if (s.m < 1) node.at("m").fail("sequence length must be positive");
  if (node.has("compression") && !node.at("compression").is_null()) {
    ConfigNode c = node.at("compression");
    CompressionSpec cs;
    cs.base = static_cast<int>(c.get_int("p", 16));
    if (cs.base < 2) c.at("p").fail("base must be at least 2");
    cs.digits = static_cast<int>(c.get_int("digits", 0));
    if (cs.digits < 0) c.at("digits").fail("digit count must be non-negative");
    s.compression = cs;
  }
  if (node.has("strategy")) {
    try {
      s.strategy = llm_strategy_from_string(node.at("strategy").as_string());
    } catch (const ParameterError& e) {
      node.at("strategy").fail(e.what());
    }
  }
  if (node.has("level")) s.level = as_level(node.at("level"));
  s.memory_budget_gib = node.get_double("memory_budget_gib", s.memory_budget_gib);
  if (node.has("layout")) {
    try {
      s.layout = diagonal_layout_from_string(node.at("layout").as_string());
    } catch (const ParameterError& e) {
      node.at("layout").fail(e.what());
    }
  }
  return s;
}

TensorMap load_weights(const std::filesystem::path& manifest) {
  if (!std::filesystem::exists(manifest)) {
    throw IoError("weights manifest not found: " + manifest.string());
  }
  ConfigNode root(load_json_file(manifest));
  const auto data_path = root.resolve_path(root.at("data").as_string());
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw IoError("weights data file not found: " + data_path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::int64_t>(in.tellg());
  TensorMap out;
  ConfigNode tensors = root.at("tensors");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    ConfigNode t = tensors.at(i);
    Tensor tensor;
    tensor.shape = t.at("shape").as_ints();
    std::int64_t count = 1;
    for (auto s : tensor.shape) {
      if (s < 0) t.at("shape").fail("negative dimension");
      count *= s;
    }
    const auto offset = t.at("offset").as_int();
    if (offset < 0 || offset % 8 != 0 || offset + count * 8 > size) {
      t.at("offset").fail("tensor lies outside " + data_path.string());
    }
    tensor.values.resize(static_cast<std::size_t>(count));
    in.seekg(offset);
    in.read(reinterpret_cast<char*>(tensor.values.data()), count * 8);
    if (!in) throw IoError("short read in " + data_path.string());
    out[t.at("name").as_string()] = std::move(tensor);
  }
  return out;
}

void save_weights(const TensorMap& tensors, const std::filesystem::path& manifest) {
  auto data_path = manifest;
  data_path.replace_extension(".bin");
  std::ofstream bin(data_path, std::ios::binary);
  if (!bin) throw IoError("cannot write " + data_path.string());
  json header;
  header["data"] = data_path.filename().string();
  header["tensors"] = json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"].push_back(json{{"name", name}, {"shape", t.shape}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * 8));
    offset += static_cast<std::int64_t>(t.values.size() * 8);
  }
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << header.dump(2) << "\n";
}

TensorMap network_tensors(const NetworkSpec& spec) {
  TensorMap m;
  store_layers(m, spec.bottom, "bottom");
  store_layers(m, spec.top, "top");
  return m;
}

void apply_network_tensors(NetworkSpec& spec, const TensorMap& tensors) {
  load_layers(spec.bottom, spec.bottom_dims, "bottom", tensors);
  load_layers(spec.top, spec.top_dims, "top", tensors);
}

}  // namespace helut
