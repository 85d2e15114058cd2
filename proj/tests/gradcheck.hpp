#pragma once

#include <functional>
#include <vector>

#include "fndet/autograd.hpp"
#include "oracles.hpp"

namespace gradcheck {

using Builder = std::function<fndet::Var(fndet::Tape&, const std::vector<fndet::Var>&)>;

/// Compares tape gradients of sum(coeffs * f(inputs)) against central
/// differences for every input element. Returns the worst relative error.
inline double check(const Builder& f, std::vector<fndet::Tensor4> inputs, std::mt19937_64& rng, double step = 1e-5) {
  using namespace fndet;
  Tensor4 coeffs;
  auto eval = [&](bool record, std::vector<std::vector<double>>* grads) {
    Tape t(record);
    std::vector<Var> leaves;
    for (const auto& x : inputs) leaves.push_back(record ? t.variable(x) : t.constant(x));
    const Var y = f(t, leaves);
    if (coeffs.numel() == 0) coeffs = oracle::random_tensor(t.shape(y), rng);
    const Var loss = ag::dot(t, y, coeffs);
    if (grads != nullptr) {
      t.backward(loss);
      for (const Var& l : leaves) grads->push_back(t.grad(l));
    }
    return t.value(loss)[0];
  };
  std::vector<std::vector<double>> analytic;
  eval(true, &analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double num = oracle::central_difference([&] { return eval(false, nullptr); }, inputs[i][j], step);
      worst = std::max(worst, oracle::rel_error(analytic[i][j], num));
    }
  }
  return worst;
}

}  // namespace gradcheck
