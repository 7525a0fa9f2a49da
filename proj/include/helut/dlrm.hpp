// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "helut/activation.hpp"
#include "helut/ckks_vm.hpp"
#include "helut/embedding.hpp"
#include "helut/he_linalg.hpp"

namespace helut {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct NetworkSpec {
  EmbeddingModelSpec embedding;  // embedding.dense_count is the dense feature count
  std::vector<int> bottom_dims;  // dense_count, h1, ..., hb
  std::vector<int> top_dims;     // hb + sum(d), ..., 1
  ActivationKind activation = ActivationKind::square;
  double activation_bound = 1.0;
  std::vector<DenseLayer> bottom;
  std::vector<DenseLayer> top;

  std::int64_t dense_count() const { return embedding.dense_count; }
  int bottom_width() const { return bottom_dims.back(); }
  void validate() const;
};

// Fills bottom/top layers with seeded uniform weights in [-1/sqrt(in), 1/sqrt(in)].
void init_random_weights(NetworkSpec& spec, std::uint64_t seed);

struct LayerPlan {
  DiagonalizedMatrix<double> diag;
  BsgsPlan plan;
};

struct DlrmModel {
  NetworkSpec spec;
  std::vector<TableSource> tables;
  PackedEmbeddingSet packed;
  PolyActivation activation;
  std::vector<LayerPlan> bottom_plans;
  std::vector<LayerPlan> top_plans;
  // Dense and one-hot slots share one ciphertext.
  bool shared_input = true;

  const SlotLayout& layout() const { return packed.layout(); }
};

DlrmModel build_model(NetworkSpec spec, std::vector<TableSource> tables, const VmParams& params,
                      DiagonalLayout layout = DiagonalLayout::full_ring);

struct DlrmInput {
  Eigen::VectorXd dense;
  LookupRequest request;
};

DlrmInput random_input(const DlrmModel& model, std::uint64_t seed);

// Dense values first, then the concatenated one-hot region.
Eigen::VectorXd client_vector(const DlrmModel& model, const DlrmInput& input);

std::vector<CipherVec> encrypt_input(Vm& vm, const DlrmModel& model, const DlrmInput& input,
                                     int level);

// Plaintext reference. With `exact` the target activation replaces the
// polynomial.
double forward_plain(const DlrmModel& model, const DlrmInput& input, bool exact = false);

// Largest absolute pre-activation over sample inputs, times `margin`.
double calibrate_activation_bound(const DlrmModel& model, std::span<const DlrmInput> samples,
                                  double margin = 1.25);

std::pair<CipherVec, CipherVec> extract_features(Vm& vm, const CipherVec& x,
                                                 std::int64_t dense_count,
                                                 std::int64_t sparse_slots);

CipherVec linear_layer(Vm& vm, const LayerPlan& layer, const DenseLayer& weights,
                       const CipherVec& x);

CipherVec concat_interaction(Vm& vm, const CipherVec& dense_out, const CipherVec& emb_out,
                             std::int64_t bottom_width, std::int64_t emb_width);

struct InferenceResult {
  CipherVec logit;
  int bootstraps = 0;
};

InferenceResult infer(Vm& vm, Bootstrapper& boot, const DlrmModel& model,
                      std::span<const CipherVec> inputs);

}  // namespace helut
