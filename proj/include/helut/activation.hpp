// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "helut/ckks_vm.hpp"

namespace helut {

enum class ActivationKind { square, relu_cheb, silu_cheb };

std::string to_string(ActivationKind kind);
ActivationKind activation_from_string(const std::string& name);

// Coefficients in the Chebyshev basis on [-1, 1].
std::vector<double> chebyshev_fit(const std::function<double(double)>& f, int degree);
double chebyshev_eval(std::span<const double> coeffs, double x);

// Depth of T_degree built by doubling and product recurrences.
int chebyshev_basis_depth(int degree);

struct ChebyshevStage {
  std::vector<double> coeffs;
  int degree() const { return static_cast<int>(coeffs.size()) - 1; }
  int depth() const { return chebyshev_basis_depth(degree()) + 1; }
};

struct PolyActivation {
  ActivationKind kind = ActivationKind::square;
  double bound = 1.0;  // domain [-bound, bound]
  std::vector<ChebyshevStage> stages;
  bool multiply_input = false;

  int depth() const;
  double eval_plain(double x) const;
  double eval_exact(double x) const;
};

PolyActivation make_activation(ActivationKind kind, double bound, int silu_degree = 27);

// Largest deviation between the polynomial and the target on a uniform grid.
double activation_max_error(const PolyActivation& a, int grid = 4001);

// Evaluates on slots [0, width); slots beyond width stay zero if they start at
// zero. With a bootstrapper, stages get their levels greedily; without one the
// input must already carry depth() levels above l_min.
CipherVec activation_eval(Vm& vm, const PolyActivation& a, const CipherVec& x, std::int64_t width,
                          Bootstrapper* boot = nullptr);

}  // namespace helut
