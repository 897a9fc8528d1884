#pragma once

#include <cmath>
#include <vector>

#include "han/diff/nn.hpp"

namespace han::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct OptimState {
  AdamConfig config;
  long step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

template <typename T>
OptimState<T> make_optim_state(const ParameterSet<T>& params, AdamConfig config = {}) {
  OptimState<T> state;
  state.config = config;
  for (const auto& p : params.items()) {
    state.first_moment.emplace_back(p.var.size(), T(0));
    state.second_moment.emplace_back(p.var.size(), T(0));
  }
  return state;
}

/// One bias-corrected Adam update. Every parameter must carry a gradient;
/// parameters untouched by the loss should have been given zeros explicitly.
template <typename T>
void adam_step(ParameterSet<T>& params, OptimState<T>& state) {
  auto& items = params.items();
  if (state.first_moment.size() != items.size()) throw UsageError("optimizer state does not match parameter set");
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!items[k].var.has_grad()) throw UsageError("adam_step: parameter '" + items[k].name + "' has no gradient");
    if (state.first_moment[k].size() != items[k].var.size())
      throw UsageError("adam_step: moment buffer shape mismatch for " + items[k].name);
  }
  ++state.step;
  const auto& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& value = items[k].var.mutable_value().data;
    const auto& grad = items[k].var.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = static_cast<T>(c.beta1 * m[i] + (1.0 - c.beta1) * g);
      v[i] = static_cast<T>(c.beta2 * v[i] + (1.0 - c.beta2) * g * g);
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] = static_cast<T>(value[i] - c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

/// Gives every parameter without a gradient an explicit zero gradient.
template <typename T>
void fill_missing_grads(ParameterSet<T>& params) {
  for (auto& p : params.items())
    if (!p.var.has_grad()) p.var.mutable_grad();
}

}  // namespace han::diff
