#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "han/diff/ops.hpp"

namespace han::diff {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
};

/// Ordered registry of a model's learnable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    if (!names_.insert(name).second) throw ConfigError("duplicate parameter name: " + name);
    Var<T> v(std::move(init), true);
    params_.push_back({name, v});
    return v;
  }

  std::vector<Parameter<T>>& items() { return params_; }
  const std::vector<Parameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.var.size();
    return total;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  Var<T> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.var;
    throw UsageError("no parameter named " + name);
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_set<std::string> names_;
};

enum class Activation { kLinear, kRelu };

namespace init {

// Kaiming-uniform bound for relu layers: sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> xavier_uniform(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace init

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1, padding = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& params, const std::string& name, int in_ch, int out_ch, int kernel, int stride_,
         int padding_, std::mt19937_64& rng)
      : stride(stride_), padding(padding_) {
    const int fan_in = in_ch * kernel * kernel;
    weight = params.add(name + ".weight", init::kaiming_uniform<T>({out_ch, in_ch, kernel, kernel}, fan_in, rng));
    bias = params.add(name + ".bias", Tensor<T>({out_ch}));
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParameterSet<T>& params, const std::string& name, int in, int out, bool relu_follows, std::mt19937_64& rng) {
    weight = params.add(name + ".weight", relu_follows ? init::kaiming_uniform<T>({out, in}, in, rng)
                                                       : init::xavier_uniform<T>({out, in}, in, out, rng));
    bias = params.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

/// A chain of affine layers; every layer but the last is followed by relu.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  std::vector<Activation> activations;

  Mlp() = default;
  Mlp(ParameterSet<T>& params, const std::string& name, const std::vector<int>& widths, std::mt19937_64& rng) {
    if (widths.size() < 2) throw ConfigError("mlp " + name + " needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool hidden = i + 2 < widths.size();
      layers.emplace_back(params, name + "." + std::to_string(i), widths[i], widths[i + 1], hidden, rng);
      activations.push_back(hidden ? Activation::kRelu : Activation::kLinear);
    }
  }

  Var<T> operator()(const Var<T>& x) const { return mlp(x, layers, activations); }

  int in_width() const { return layers.front().weight.dim(1); }
  int out_width() const { return layers.back().weight.dim(0); }
};

/// Affine+activation composition over rows of a [B,D] input.
template <typename T>
Var<T> mlp(const Var<T>& input, const std::vector<Linear<T>>& layers, const std::vector<Activation>& activations) {
  if (layers.size() != activations.size()) throw ConfigError("mlp: layer/activation count mismatch");
  Var<T> h = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (h.shape().size() != 2 || h.dim(1) != layers[i].weight.dim(1))
      throw ConfigError("mlp layer " + std::to_string(i) + ": input " + shape_str(h.shape()) +
                        " incompatible with weight " + shape_str(layers[i].weight.shape()));
    h = layers[i](h);
    if (activations[i] == Activation::kRelu) h = relu(h);
  }
  return h;
}

}  // namespace han::diff
