#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "han/diff/nn.hpp"

namespace han::diff {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t checked = 0;

  bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Upper bound on entries probed per tensor (0 = all).
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 7;
};

/// Compares analytic gradients of `loss_fn()` with central differences for
/// every leaf in `leaves`. `loss_fn` must rebuild the graph on each call.
template <typename LossFn>
GradCheckResult check_gradients(std::vector<Parameter<double>> leaves, LossFn&& loss_fn,
                                const GradCheckOptions& opt = {}) {
  for (auto& leaf : leaves) leaf.var.zero_grad();
  Var<double> loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    if (!leaf.var.has_grad()) leaf.var.mutable_grad();
    analytic.push_back(leaf.var.grad());
  }

  GradCheckResult result;
  std::mt19937_64 rng(opt.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& values = leaves[k].var.mutable_value().data;
    std::vector<std::size_t> entries(values.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (opt.max_entries_per_tensor && entries.size() > opt.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opt.max_entries_per_tensor);
    }
    for (std::size_t i : entries) {
      const double saved = values[i];
      values[i] = saved + opt.epsilon;
      const double up = loss_fn().item();
      values[i] = saved - opt.epsilon;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_entry = leaves[k].name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                             " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

template <typename LossFn>
GradCheckResult check_gradients(ParameterSet<double>& params, LossFn&& loss_fn, const GradCheckOptions& opt = {}) {
  return check_gradients(params.items(), std::forward<LossFn>(loss_fn), opt);
}

}  // namespace han::diff
