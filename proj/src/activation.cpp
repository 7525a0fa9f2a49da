// SPDX-License-Identifier: Apache-2.0
#include "helut/activation.hpp"

#include <cmath>
#include <numbers>
#include <optional>

#include "helut/errors.hpp"

namespace helut {

namespace {

// Sign approximation f_n(x) = sum_i C(2i, i) / 4^i * x (1 - x^2)^i.
double sign_poly(int n, double x) {
  double sum = 0.0;
  double coeff = 1.0;
  double pw = 1.0;
  for (int i = 0; i <= n; ++i) {
    if (i > 0) {
      coeff *= static_cast<double>(2 * i) * (2 * i - 1) / (static_cast<double>(i) * i * 4.0);
      pw *= 1.0 - x * x;
    }
    sum += coeff * x * pw;
  }
  return sum;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

bool is_pow2(int k) { return k > 0 && (k & (k - 1)) == 0; }

class StageEvaluator {
 public:
  StageEvaluator(Vm& vm, std::int64_t width) : vm_(vm), width_(width) {}

  CipherVec run(const ChebyshevStage& stage, const CipherVec& u) {
    const int deg = stage.degree();
    std::vector<std::optional<CipherVec>> t(static_cast<std::size_t>(deg + 1));
    if (deg >= 1) t[1] = u;
    for (int k = 2; k <= deg; ++k) {
      if (is_pow2(k)) {
        const auto& h = *t[static_cast<std::size_t>(k / 2)];
        CipherVec sq = vm_.mul(h, h);
        t[static_cast<std::size_t>(k)] = vm_.add(vm_.add(sq, sq), vm_.constant(-1.0, width_));
      } else {
        int hi = 1;
        while (hi * 2 < k) hi *= 2;
        CipherVec prod = vm_.mul(*t[static_cast<std::size_t>(hi)], *t[static_cast<std::size_t>(k - hi)]);
        CipherVec twice = vm_.add(prod, prod);
        const int low = 2 * hi - k;
        t[static_cast<std::size_t>(k)] =
            low == 0 ? vm_.add(twice, vm_.constant(-1.0, width_))
                     : vm_.sub(twice, *t[static_cast<std::size_t>(low)]);
      }
    }
    std::optional<CipherVec> acc;
    for (int k = 1; k <= deg; ++k) {
      const double c = stage.coeffs[static_cast<std::size_t>(k)];
      if (c == 0.0) continue;
      CipherVec term = vm_.mul(*t[static_cast<std::size_t>(k)], vm_.constant(c, width_));
      acc = acc ? vm_.add(*acc, term) : term;
    }
    if (!acc) acc = vm_.mul(u, vm_.constant(0.0, width_));
    if (stage.coeffs[0] != 0.0) acc = vm_.add(*acc, vm_.constant(stage.coeffs[0], width_));
    return *acc;
  }

 private:
  Vm& vm_;
  std::int64_t width_;
};

}  // namespace

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::square: return "square";
    case ActivationKind::relu_cheb: return "relu_cheb";
    case ActivationKind::silu_cheb: return "silu_cheb";
  }
  return "unknown";
}

ActivationKind activation_from_string(const std::string& name) {
  if (name == "square") return ActivationKind::square;
  if (name == "relu_cheb") return ActivationKind::relu_cheb;
  if (name == "silu_cheb") return ActivationKind::silu_cheb;
  throw ParameterError("unknown activation '" + name + "'");
}

std::vector<double> chebyshev_fit(const std::function<double(double)>& f, int degree) {
  if (degree < 0) throw ParameterError("negative Chebyshev degree");
  const int n = degree + 1;
  std::vector<double> fx(static_cast<std::size_t>(n));
  std::vector<double> theta(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    theta[static_cast<std::size_t>(k)] = std::numbers::pi * (k + 0.5) / n;
    fx[static_cast<std::size_t>(k)] = f(std::cos(theta[static_cast<std::size_t>(k)]));
  }
  std::vector<double> c(static_cast<std::size_t>(n));
  double largest = 0.0;
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
      s += fx[static_cast<std::size_t>(k)] * std::cos(j * theta[static_cast<std::size_t>(k)]);
    }
    c[static_cast<std::size_t>(j)] = (j == 0 ? 1.0 : 2.0) * s / n;
    largest = std::max(largest, std::abs(c[static_cast<std::size_t>(j)]));
  }
  for (auto& v : c) {
    if (std::abs(v) < 1e-14 * largest) v = 0.0;
  }
  return c;
}

double chebyshev_eval(std::span<const double> coeffs, double x) {
  double b1 = 0.0, b2 = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 1;) {
    const double b0 = 2.0 * x * b1 - b2 + coeffs[k];
    b2 = b1;
    b1 = b0;
  }
  return (coeffs.empty() ? 0.0 : coeffs[0]) + x * b1 - b2;
}

int chebyshev_basis_depth(int degree) {
  int d = 0;
  while ((1 << d) < degree) ++d;
  return d;
}

int PolyActivation::depth() const {
  if (kind == ActivationKind::square) return 1;
  int d = 1;  // input scaling
  for (const auto& s : stages) d += s.depth();
  return d + (multiply_input ? 1 : 0);
}

double PolyActivation::eval_plain(double x) const {
  if (kind == ActivationKind::square) return x * x;
  double u = x / bound;
  for (const auto& s : stages) u = chebyshev_eval(s.coeffs, u);
  return multiply_input ? x * u : u;
}

double PolyActivation::eval_exact(double x) const {
  switch (kind) {
    case ActivationKind::square: return x * x;
    case ActivationKind::relu_cheb: return x > 0 ? x : 0.0;
    case ActivationKind::silu_cheb: return silu(x);
  }
  return 0.0;
}

PolyActivation make_activation(ActivationKind kind, double bound, int silu_degree) {
  if (!(bound > 0)) throw ParameterError("activation bound must be positive");
  PolyActivation a;
  a.kind = kind;
  a.bound = bound;
  if (kind == ActivationKind::relu_cheb) {
    a.stages.push_back({chebyshev_fit([](double x) { return sign_poly(7, x); }, 15)});
    a.stages.push_back({chebyshev_fit([](double x) { return sign_poly(7, x); }, 15)});
    a.stages.push_back(
        {chebyshev_fit([](double x) { return 0.5 + 0.5 * sign_poly(13, x); }, 27)});
    a.multiply_input = true;
  } else if (kind == ActivationKind::silu_cheb) {
    a.stages.push_back({chebyshev_fit([bound](double u) { return silu(bound * u); }, silu_degree)});
  }
  return a;
}

double activation_max_error(const PolyActivation& a, int grid) {
  double err = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double x = -a.bound + 2.0 * a.bound * i / (grid - 1);
    err = std::max(err, std::abs(a.eval_plain(x) - a.eval_exact(x)));
  }
  return err;
}

CipherVec activation_eval(Vm& vm, const PolyActivation& a, const CipherVec& x, std::int64_t width,
                          Bootstrapper* boot) {
  const int lmin = vm.params().min_level;
  if (!boot && x.level() < lmin + a.depth()) {
    throw LevelError("activation of depth " + std::to_string(a.depth()) + " at level " +
                     std::to_string(x.level()) + " would go below l_min " + std::to_string(lmin));
  }
  if (vm.functional() && a.kind != ActivationKind::square && width > 0) {
    const double peak = x.slots().head(width).cwiseAbs().maxCoeff();
    if (peak > a.bound * (1.0 + 1e-9)) {
      vm.ledger().warn(to_string(a.kind) + " input exceeds domain bound " + std::to_string(a.bound));
    }
  }
  auto need = [&](const CipherVec& c, int levels) { return boot ? boot->ensure(c, levels) : c; };

  if (a.kind == ActivationKind::square) {
    CipherVec y = need(x, 1);
    return vm.mul(y, y);
  }
  StageEvaluator eval(vm, width);
  CipherVec u = need(x, 1 + a.stages.front().depth());
  u = vm.mul(u, vm.constant(1.0 / a.bound, width));
  for (const auto& stage : a.stages) {
    u = eval.run(stage, need(u, stage.depth()));
  }
  if (!a.multiply_input) return u;
  CipherVec xin = need(x, 1);
  u = need(u, 1);
  return vm.mul(xin, u);
}

}  // namespace helut
