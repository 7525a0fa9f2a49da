// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "helut/ckks_vm.hpp"
#include "helut/config.hpp"
#include "helut/dlrm.hpp"
#include "helut/embedding.hpp"
#include "helut/llm_embed.hpp"

namespace helut {

// Keys n, L, L_boot, l_min; absent keys keep the defaults.
VmParams parse_vm_params(const ConfigNode& node);
json vm_params_to_json(const VmParams& params);

// Either an inline object or {"model": "file.json"} naming one. Tables are
// listed under "tables" as {id, k, d, compress: {p}} or generated from
// "cardinalities" plus a shared "d". Next to "model", the keys threshold,
// base and dense_count override the referenced file.
EmbeddingModelSpec parse_embedding_spec(const ConfigNode& node);

struct NetworkConfig {
  NetworkSpec spec;
  std::uint64_t seed = 0;
  // "activation_bound": "auto" asks for a plaintext calibration pass.
  bool auto_bound = false;
  // Empty when the weights are seeded.
  std::filesystem::path weights_path;
};

// {"embedding": {...}, "bottom": [...], "top": [...], "activation", "activation_bound",
//  "weights": "manifest.json"}. Weights are loaded or drawn from `seed`.
NetworkConfig parse_network(const ConfigNode& node, std::uint64_t seed);

LlmScenario parse_llm_scenario(const ConfigNode& node);

// Header manifest {"data": "x.bin", "tensors": [{"name", "shape", "offset"}]}
// with offsets in bytes into a raw little-endian float64 file.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> values;  // row-major
};

using TensorMap = std::map<std::string, Tensor>;

TensorMap load_weights(const std::filesystem::path& manifest);
void save_weights(const TensorMap& tensors, const std::filesystem::path& manifest);

// Layer tensors are named bottom.<i>.weight / bottom.<i>.bias and likewise for top.
TensorMap network_tensors(const NetworkSpec& spec);
void apply_network_tensors(NetworkSpec& spec, const TensorMap& tensors);

}  // namespace helut
