// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "helut/he_linalg.hpp"
#include "support/generators.hpp"

using namespace helut;
using helut::testing::Gen;
using helut::testing::max_abs_diff;
using helut::testing::split_rotations;

namespace {

VmParams params(std::int64_t n) { return VmParams{n, 24, 12, 1}; }

Eigen::VectorXd embed(const Eigen::VectorXd& x, std::int64_t n) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v.head(x.size()) = x;
  return v;
}

struct Run {
  Eigen::VectorXd out;
  std::uint64_t rotations = 0;
  int level = 0;
};

Run run_hs(const DiagonalizedMatrix<double>& d, const Eigen::VectorXd& x, std::int64_t n) {
  Vm vm(params(n));
  auto ct = vm.encrypt(embed(x, n), 5);
  auto y = matvec_hs(vm, d, ct);
  return {vm.decrypt(y).head(d.rows()), vm.ledger().count(OpKind::rotate), y.level()};
}

Run run_bsgs(const DiagonalizedMatrix<double>& d, const BsgsPlan& plan, const Eigen::VectorXd& x,
             std::int64_t n) {
  Vm vm(params(n));
  auto ct = vm.encrypt(embed(x, n), 5);
  auto y = matvec_bsgs(vm, d, plan, ct);
  return {vm.decrypt(y).head(d.rows()), vm.ledger().count(OpKind::rotate), y.level()};
}

std::vector<std::int64_t> shifts_of(const DiagonalizedMatrix<double>& d) {
  std::vector<std::int64_t> s;
  for (Index t : d.offsets()) s.push_back(d.shift(t));
  return s;
}

}  // namespace

TEST_CASE("identity has one all-ones diagonal at offset 0") {
  const auto d = diagonalize(Eigen::MatrixXd::Identity(2, 2), params(8));
  REQUIRE(d.nonzero_count() == 1);
  REQUIRE(d.has_offset(0));
  const auto& g = d.diagonals().at(0);
  CHECK(g.length() == 2);
  CHECK(g.values == Eigen::VectorXd::Ones(2));
  const Run r = run_hs(d, Eigen::Vector2d(3, -4), 8);
  CHECK(r.out == Eigen::Vector2d(3, -4));
  CHECK(r.rotations == 0);
}

TEST_CASE("generalized diagonal convention") {
  Gen g(8);
  const Eigen::MatrixXd m = g.matrix(4, 4);
  const auto d = diagonalize(m, params(4));
  for (const auto& [t, diag] : d.diagonals()) {
    for (Index k = 0; k < diag.length(); ++k) {
      const Index j = diag.first_col + k;
      CHECK(diag.values(k) == m(pos_mod(j + t, 4), j));
    }
  }
}

TEST_CASE("matrices wider than the ring are rejected") {
  CHECK_THROWS_AS(diagonalize(Eigen::MatrixXd::Ones(4, 9), params(8)), CapacityError);
}

TEST_CASE("random 8x8 matvec matches the dense product") {
  Gen g(88);
  const Eigen::MatrixXd m = g.matrix(8, 8);
  const Eigen::VectorXd x = g.vector(8);
  const auto d = diagonalize(m, params(16));
  CHECK(max_abs_diff(run_hs(d, x, 16).out, m * x) <= 1e-9);
  CHECK(max_abs_diff(run_bsgs(d, plan_bsgs(d), x, 16).out, m * x) <= 1e-9);
}

TEST_CASE("property: HS, BSGS and the dense oracle agree on 200 random matrices") {
  Gen g(20240612);
  for (int trial = 0; trial < 200; ++trial) {
    const Index rows = g.small(1, 64), cols = g.small(1, 64);
    const std::int64_t n = std::int64_t{1} << g.small(6, 8);
    const auto layout = g.coin() ? DiagonalLayout::full_ring : DiagonalLayout::compact;
    const Eigen::MatrixXd m = g.coin(0.3) ? g.sparse_matrix(rows, cols, 0.2) : g.matrix(rows, cols);
    const Eigen::VectorXd x = g.vector(cols);
    CAPTURE(trial);
    CAPTURE(rows);
    CAPTURE(cols);
    CAPTURE(n);
    const auto d = diagonalize(m, params(n), layout);
    const auto plan = plan_bsgs(d);
    const Run hs = run_hs(d, x, n);
    const Run bs = run_bsgs(d, plan, x, n);
    const Eigen::VectorXd want = m * x;
    CHECK(max_abs_diff(hs.out, want) <= 1e-9);
    CHECK(max_abs_diff(bs.out, want) <= 1e-9);
    CHECK(max_abs_diff(d.apply(x), want) <= 1e-9);
    CHECK(hs.level == 4);
    CHECK(bs.level == 4);

    const std::uint64_t fold = static_cast<std::uint64_t>(d.fold_rotations());
    const std::uint64_t hs_expected =
        static_cast<std::uint64_t>(d.nonzero_count()) - (d.has_offset(0) ? 1 : 0) + fold;
    if (d.nonzero_count() > 0) {
      CHECK(hs.rotations == hs_expected);
      CHECK(bs.rotations == static_cast<std::uint64_t>(plan.rotations()) + fold);
      CHECK(plan.rotations() <= plan.bound());
      Index smin = std::numeric_limits<Index>::max(), smax = std::numeric_limits<Index>::min();
      for (const auto& [t, diag] : d.diagonals()) {
        smin = std::min(smin, d.shift(t));
        smax = std::max(smax, d.shift(t));
      }
      const Index span = smax - smin + 1;
      const auto root = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(span))));
      CHECK(plan.bound() <= 2 * root);
      if (span == static_cast<Index>(d.diagonals().size())) {
        const auto droot = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(d.nonzero_count()))));
        CHECK(plan.bound() <= 2 * droot);
      }
      CHECK(plan.rotations() <= d.nonzero_count() - (d.has_offset(0) ? 1 : 0));
      if (hs.rotations - fold > static_cast<std::uint64_t>(plan.bound())) {
        CHECK(bs.rotations < hs.rotations);
      }
    }
  }
}

TEST_CASE("512 diagonals: 511 HS rotations, at most 46 with BSGS") {
  Gen g(512);
  const Eigen::MatrixXd m = g.matrix(512, 512);
  const auto d = diagonalize(m, params(512));
  REQUIRE(d.nonzero_count() == 512);
  const auto plan = plan_bsgs(d);
  const Eigen::VectorXd x = g.vector(512);
  const Run hs = run_hs(d, x, 512);
  const Run bs = run_bsgs(d, plan, x, 512);
  CHECK(hs.rotations == 511);
  CHECK(bs.rotations <= 46);
  CHECK(max_abs_diff(hs.out, bs.out) <= 1e-9);
  CHECK(max_abs_diff(bs.out, m * x) <= 1e-9);
}

TEST_CASE("planner is no worse than any power-of-two split") {
  Gen g(33);
  for (int trial = 0; trial < 60; ++trial) {
    std::set<std::int64_t> uniq;
    const int count = g.small(1, 200);
    const std::int64_t span = g.integer(count, 2000);
    while (static_cast<int>(uniq.size()) < count) uniq.insert(g.integer(-span / 2, span / 2));
    const std::vector<std::int64_t> shifts(uniq.begin(), uniq.end());
    const BsgsPlan plan = plan_bsgs_shifts(shifts);
    CHECK(plan.rotations() == split_rotations(shifts, plan.n1));
    for (std::int64_t n1 = 1; n1 <= 2 * span; n1 *= 2) {
      CHECK(plan.rotations() <= split_rotations(shifts, n1));
    }
  }
}

TEST_CASE("span 512: the power-of-two rule gives 46 rotations and the sweep matches or beats it") {
  std::vector<std::int64_t> shifts(512);
  for (int i = 0; i < 512; ++i) shifts[static_cast<std::size_t>(i)] = i;
  CHECK(split_rotations(shifts, 32) == 31 + 15);
  const BsgsPlan plan = plan_bsgs_shifts(shifts);
  CHECK(plan.rotations() <= 46);
  CHECK(plan.rotations() == split_rotations(shifts, plan.n1));
}

TEST_CASE("span 1 and single diagonals need no rotations") {
  const std::vector<std::int64_t> one{0};
  const BsgsPlan p = plan_bsgs_shifts(one);
  CHECK(p.n1 == 1);
  CHECK(p.n2 == 1);
  CHECK(p.rotations() == 0);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 5; ++i) m(i + 1, i) = i + 1.0;
  const auto d = diagonalize(m, params(8));
  REQUIRE(d.nonzero_count() == 1);
  const auto plan = plan_bsgs(d);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(6, 1, 6);
  const Run r = run_bsgs(d, plan, x, 8);
  CHECK(max_abs_diff(r.out, m * x) == 0.0);
  CHECK(r.rotations == 1);
}

TEST_CASE("property: plans assign every diagonal exactly once") {
  Gen g(44);
  for (int trial = 0; trial < 100; ++trial) {
    const Index rows = g.small(1, 48), cols = g.small(1, 48);
    const auto d = diagonalize(g.sparse_matrix(rows, cols, 0.1), params(64));
    if (d.nonzero_count() == 0) continue;
    const auto plan = plan_bsgs(d);
    CHECK(plan.assignment.size() == static_cast<std::size_t>(d.nonzero_count()));
    for (const auto& [t, gb] : plan.assignment) {
      CHECK(d.has_offset(t));
      CHECK(gb.first * plan.n1 + gb.second == d.shift(t));
      CHECK(gb.second >= 0);
      CHECK(gb.second < plan.n1);
    }
    CHECK(plan.rotations() == split_rotations(shifts_of(d), plan.n1));
  }
}

TEST_CASE("plan mismatch raises a planning error") {
  Gen g(2);
  const auto a = diagonalize(g.matrix(4, 4), params(8));
  const auto b = diagonalize(Eigen::MatrixXd::Identity(4, 4), params(8));
  Vm vm(params(8));
  auto ct = vm.encrypt(Eigen::VectorXd::Ones(8), 3);
  CHECK_THROWS_AS(matvec_bsgs(vm, a, plan_bsgs(b), ct), PlanningError);
}

TEST_CASE("matvec needs a level above l_min") {
  Vm vm(params(8));
  const auto d = diagonalize(Eigen::MatrixXd::Identity(4, 4), params(8));
  auto ct = vm.encrypt(Eigen::VectorXd::Ones(8), 1);
  CHECK_THROWS_AS(matvec_hs(vm, d, ct), LevelError);
  CHECK_THROWS_AS(matvec_bsgs(vm, d, plan_bsgs(d), ct), LevelError);
}

TEST_CASE("rot_sum pads the width to a power of two") {
  Vm vm(params(16));
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(16, 1, 16);
  auto ct = vm.encrypt(x, 3);
  auto y = rot_sum(vm, ct, 6);
  CHECK(vm.ledger().count(OpKind::rotate) == 3);
  CHECK(y.level() == 3);
  const Eigen::VectorXd s = vm.decrypt(y);
  CHECK(s(0) == x.head(8).sum());
  CHECK(s(8) == x.tail(8).sum());
}

TEST_CASE("rot_sum of width 1 is the identity") {
  Vm vm(params(8));
  Gen g(1);
  const Eigen::VectorXd x = g.vector(8);
  auto y = rot_sum(vm, vm.encrypt(x, 2), 1);
  CHECK(vm.decrypt(y) == x);
  CHECK(vm.ledger().count(OpKind::rotate) == 0);
  CHECK_THROWS_AS(rot_sum(vm, vm.encrypt(x, 2), 9), CapacityError);
  CHECK_THROWS_AS(rot_sum(vm, vm.encrypt(x, 2), 0), ParameterError);
}

TEST_CASE("rot_sum waste: one valid slot per block") {
  Gen g(6);
  for (std::int64_t w : {2, 4, 8, 16}) {
    const std::int64_t n = 64;
    Vm vm(params(n));
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (std::int64_t b = 0; b < n; b += w) x.segment(b, w) = g.vector(w);
    auto y = rot_sum(vm, vm.encrypt(x, 3), w, true);
    const Eigen::VectorXd s = vm.decrypt(y);
    std::int64_t valid = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      if (i % w == 0) {
        CHECK(s(i) == doctest::Approx(x.segment(i, w).sum()));
        ++valid;
      } else {
        CHECK(s(i) == 0.0);
      }
    }
    CHECK(static_cast<double>(valid) / n == doctest::Approx(1.0 / w));
    CHECK(y.level() == 2);
  }
}

TEST_CASE("width-8 rot_sum leaves 7 invalid slots per block") {
  Vm vm(params(8));
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(8, 1, 8);
  const Eigen::VectorXd s = vm.decrypt(rot_sum(vm, vm.encrypt(x, 2), 8));
  int invalid = 0;
  for (int i = 1; i < 8; ++i) invalid += s(i) != 0.0 ? 1 : 0;
  CHECK(s(0) == 36.0);
  CHECK(invalid == 7);
}

TEST_CASE("property: tiled matvec spans several ciphertexts") {
  Gen g(71);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t n = 16;
    const Index rows = g.small(1, 50), cols = g.small(1, 50);
    const Eigen::MatrixXd m = g.sparse_matrix(rows, cols, 0.3);
    const auto map = make_tiled(BlockSparseMatrix<double>::from_dense(m), params(n),
                                g.coin() ? DiagonalLayout::full_ring : DiagonalLayout::compact);
    const Eigen::VectorXd x = g.vector(cols);
    Vm vm(params(n));
    std::vector<CipherVec> in;
    for (Index c = 0; c < map.col_chunks(); ++c) {
      Eigen::VectorXd chunk = Eigen::VectorXd::Zero(n);
      const Index len = std::min<Index>(n, cols - c * n);
      chunk.head(len) = x.segment(c * n, len);
      in.push_back(vm.encrypt(chunk, 4));
    }
    const auto out = tiled_matvec(vm, map, std::span<const CipherVec>(in));
    REQUIRE(static_cast<Index>(out.size()) == map.row_chunks());
    Eigen::VectorXd y(out.size() * n);
    for (std::size_t i = 0; i < out.size(); ++i) {
      y.segment(static_cast<Index>(i) * n, n) = vm.decrypt(out[i]);
      CHECK(out[i].level() == 3);
    }
    CHECK(max_abs_diff(y.head(rows), m * x) <= 1e-9);
  }
}

TEST_CASE("structural blocks diagonalize without values") {
  BlockSparseMatrix<double> m(8, 8);
  m.add_structural_block(0, 0, 3, 3);
  m.add_structural_block(3, 3, 5, 5);
  const auto d = diagonalize(m, params(16));
  CHECK_FALSE(d.has_values());
  CHECK(d.nonzero_count() == 9);
  Vm vm(params(16), ExecMode::accounting);
  auto y = matvec_bsgs(vm, d, plan_bsgs(d), vm.encrypt_placeholder(3));
  CHECK(y.level() == 2);
  CHECK(vm.ledger().count(OpKind::pt_mul) == 9);
}
