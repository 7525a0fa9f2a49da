// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <optional>
#include <set>

#include "helut/dlrm.hpp"
#include "support/generators.hpp"

using namespace helut;
using helut::testing::Gen;
using helut::testing::max_abs_diff;

namespace {

VmParams params(std::int64_t n = 1024) { return VmParams{n, 24, 12, 1}; }

NetworkSpec random_spec(Gen& g, ActivationKind act = ActivationKind::square) {
  NetworkSpec s;
  s.activation = act;
  s.embedding.dense_count = g.integer(1, 8);
  const int tables = g.small(1, 8);
  int emb = 0;
  for (int i = 0; i < tables; ++i) {
    const int d = g.small(1, 3);
    emb += d;
    TableSpec t{"t" + std::to_string(i), g.integer(1, 32), d, {}, {}};
    if (g.coin(0.3)) t.base = 4;
    s.embedding.tables.push_back(t);
  }
  s.bottom_dims.push_back(static_cast<int>(s.embedding.dense_count));
  for (int i = g.small(1, 2); i > 0; --i) s.bottom_dims.push_back(g.small(1, 32 - emb));
  s.top_dims.push_back(s.bottom_dims.back() + emb);
  for (int i = g.small(0, 2); i > 0; --i) s.top_dims.push_back(g.small(1, 32));
  s.top_dims.push_back(1);
  init_random_weights(s, g.seed());
  return s;
}

DlrmModel uci_model(std::uint64_t seed) {
  NetworkSpec s;
  s.embedding.dense_count = 5;
  const std::vector<std::int64_t> ks{2, 4, 2, 3, 2, 3, 4, 3};
  for (std::size_t i = 0; i < ks.size(); ++i) s.embedding.tables.push_back({"f" + std::to_string(i), ks[i], 2, {}, {}});
  s.bottom_dims = {5, 4, 4};
  s.top_dims = {20, 4, 1};
  init_random_weights(s, seed);
  return build_model(s, build_tables(s.embedding, seed + 1), params(std::int64_t{1} << 15));
}

struct Inference {
  double logit = 0.0;
  int bootstraps = 0;
  OpLedger ledger;
  std::set<int> schedule;
};

Inference run(const DlrmModel& m, const DlrmInput& in, const VmParams& p, int level,
              std::optional<std::set<int>> schedule = std::nullopt) {
  Vm vm(p);
  Bootstrapper boot = schedule ? Bootstrapper(vm, *schedule) : Bootstrapper(vm);
  const auto cts = encrypt_input(vm, m, in, level);
  const InferenceResult r = infer(vm, boot, m, cts);
  return {vm.decrypt(r.logit)(0), r.bootstraps, vm.ledger(), boot.schedule()};
}

}  // namespace

TEST_CASE("spec validation") {
  Gen g(1);
  NetworkSpec s = random_spec(g);
  CHECK_NOTHROW(s.validate());
  NetworkSpec bad = s;
  bad.top_dims.front() += 1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = s;
  bad.top_dims.back() = 2;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("feature extraction splits the UCI layout") {
  Vm vm(params(64));
  Gen g(2);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(64);
  x.head(5) = g.vector(5);
  for (std::int64_t i = 5; i < 28; ++i) x(i) = g.coin() ? 1.0 : 0.0;
  auto [dense, sparse] = extract_features(vm, vm.encrypt(x, 4), 5, 23);
  Eigen::VectorXd want_dense = Eigen::VectorXd::Zero(64), want_sparse = Eigen::VectorXd::Zero(64);
  want_dense.head(5) = x.head(5);
  want_sparse.head(23) = x.segment(5, 23);
  CHECK(vm.decrypt(dense) == want_dense);
  CHECK(vm.decrypt(sparse) == want_sparse);
  CHECK(dense.level() == 3);
  CHECK(sparse.level() == 3);

  Vm vm2(params(64));
  Eigen::VectorXd only_dense = Eigen::VectorXd::Zero(64);
  only_dense.head(5) = g.vector(5);
  auto parts = extract_features(vm2, vm2.encrypt(only_dense, 4), 5, 23);
  CHECK(vm2.decrypt(parts.second) == Eigen::VectorXd::Zero(64));
}

TEST_CASE("extraction of the client vector recovers the separate encodings") {
  const DlrmModel m = uci_model(4);
  const DlrmInput in = random_input(m, 9);
  const Eigen::VectorXd v = client_vector(m, in);
  CHECK(v.size() == 28);
  Vm vm(params(std::int64_t{1} << 15));
  auto [dense, sparse] = extract_features(vm, vm.encrypt(v, 3), 5, 23);
  CHECK(vm.decrypt(dense).head(5) == in.dense);
  CHECK(vm.decrypt(sparse).head(23) == encode_client(in.request, m.layout()));
}

TEST_CASE("linear layer") {
  Gen g(3);
  Vm vm(params(64));
  const Eigen::VectorXd x = g.vector(10);
  Eigen::VectorXd xs = Eigen::VectorXd::Zero(64);
  xs.head(10) = x;
  const auto ct = vm.encrypt(xs, 4);

  DenseLayer id{Eigen::MatrixXd::Identity(10, 10), Eigen::VectorXd::Zero(10)};
  LayerPlan lp{diagonalize(id.weight, params(64)), {}};
  lp.plan = plan_bsgs(lp.diag);
  auto y = linear_layer(vm, lp, id, ct);
  CHECK(vm.decrypt(y).head(10) == x);
  CHECK(y.level() == 3);

  DenseLayer w{g.matrix(7, 10), g.vector(7)};
  LayerPlan wp{diagonalize(w.weight, params(64)), {}};
  wp.plan = plan_bsgs(wp.diag);
  const auto before = vm.ledger().count(OpKind::rotate);
  auto z = linear_layer(vm, wp, w, ct);
  CHECK(max_abs_diff(vm.decrypt(z).head(7), w.weight * x + w.bias) <= 1e-6);
  CHECK(vm.ledger().count(OpKind::rotate) - before <= static_cast<std::uint64_t>(wp.plan.bound()));
}

TEST_CASE("concatenation interaction") {
  Gen g(5);
  Vm vm(params(32));
  Eigen::VectorXd a = Eigen::VectorXd::Zero(32), b = Eigen::VectorXd::Zero(32);
  a.head(4) = g.vector(4);
  b.head(6) = g.vector(6);
  a(20) = 9.0;
  b(30) = 9.0;
  auto z = concat_interaction(vm, vm.encrypt(a, 3), vm.encrypt(b, 3), 4, 6);
  const Eigen::VectorXd s = vm.decrypt(z);
  Eigen::VectorXd want = Eigen::VectorXd::Zero(32);
  want.head(4) = a.head(4);
  want.segment(4, 6) = b.head(6);
  CHECK(s == want);
  CHECK(z.level() == 2);
  CHECK_THROWS_AS(concat_interaction(vm, vm.encrypt(a, 3), vm.encrypt(b, 3), 30, 6), LayoutError);
}

TEST_CASE("toy UCI-shaped network with square activation matches the plaintext pass") {
  const DlrmModel m = uci_model(17);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const DlrmInput in = random_input(m, 100 + s);
    const Inference r = run(m, in, params(std::int64_t{1} << 15), 1);
    CHECK(std::abs(r.logit - forward_plain(m, in)) <= 1e-6);
    CHECK(r.bootstraps == 1);
  }
}

TEST_CASE("property: 50 random square networks match the plaintext pass") {
  Gen g(20240614);
  for (int trial = 0; trial < 50; ++trial) {
    const NetworkSpec spec = random_spec(g);
    const auto tables = build_tables(spec.embedding, g.seed());
    const DlrmModel m = build_model(spec, tables, params(), g.coin() ? DiagonalLayout::full_ring : DiagonalLayout::compact);
    const DlrmInput in = random_input(m, g.seed());
    const Inference r = run(m, in, params(), g.small(1, 12));
    const double want = forward_plain(m, in);
    CAPTURE(trial);
    CHECK(std::abs(r.logit - want) <= 1e-6 * std::max(1.0, std::abs(want)));
    for (const auto& e : r.ledger.entries()) {
      if (e.kind == OpKind::pt_mul || e.kind == OpKind::ct_mul) CHECK(e.level >= 2);
      CHECK(e.level >= 1);
    }
  }
}

TEST_CASE("property: removing any placed bootstrap breaks the run") {
  Gen g(808);
  for (int trial = 0; trial < 8; ++trial) {
    const ActivationKind act = trial % 2 ? ActivationKind::silu_cheb : ActivationKind::square;
    NetworkSpec spec = random_spec(g, act);
    spec.activation_bound = 4.0;
    const DlrmModel m = build_model(spec, build_tables(spec.embedding, g.seed()), params());
    const DlrmInput in = random_input(m, g.seed());
    const Inference full = run(m, in, params(), 2);
    REQUIRE(full.bootstraps >= 1);
    REQUIRE(full.schedule.size() == static_cast<std::size_t>(full.bootstraps));
    const Inference replay = run(m, in, params(), 2, full.schedule);
    CHECK(replay.logit == full.logit);
    for (int call : full.schedule) {
      CAPTURE(call);
      std::set<int> fewer = full.schedule;
      fewer.erase(call);
      CHECK_THROWS_AS(run(m, in, params(), 2, fewer), LevelError);
    }
  }
}

TEST_CASE("relu network stays within the approximation bound of the exact network") {
  Gen g(99);
  NetworkSpec spec = random_spec(g, ActivationKind::relu_cheb);
  spec.activation = ActivationKind::relu_cheb;
  const auto tables = build_tables(spec.embedding, 5);
  DlrmModel probe = build_model(spec, tables, params());
  std::vector<DlrmInput> samples;
  for (std::uint64_t s = 0; s < 16; ++s) samples.push_back(random_input(probe, s));
  spec.activation_bound = calibrate_activation_bound(probe, samples);
  const DlrmModel m = build_model(spec, tables, params());
  const DlrmInput in = samples.front();
  const Inference r = run(m, in, params(), 2);
  CHECK(std::abs(r.logit - forward_plain(m, in)) <= 1e-6);
  CHECK(r.ledger.warnings().empty());
  CHECK(std::abs(r.logit - forward_plain(m, in, true)) <= 0.1);
}

TEST_CASE("deeper activations never need fewer bootstraps") {
  Gen g(1234);
  NetworkSpec base = random_spec(g);
  base.activation_bound = 4.0;
  const auto tables = build_tables(base.embedding, 3);
  int prev = -1;
  for (auto act : {ActivationKind::square, ActivationKind::silu_cheb, ActivationKind::relu_cheb}) {
    NetworkSpec s = base;
    s.activation = act;
    const DlrmModel m = build_model(s, tables, params());
    Vm vm(params(), ExecMode::accounting);
    Bootstrapper boot(vm);
    const auto cts = encrypt_input(vm, m, DlrmInput{}, 1);
    const int b = infer(vm, boot, m, cts).bootstraps;
    CHECK(b >= prev);
    prev = b;
  }
}
