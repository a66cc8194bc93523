#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>

#include "dnfn/ops.hpp"

namespace dnfn {

inline constexpr double kLeakySlope = 0.2;

/// Optional batch normalization followed by a leaky rectifier. A slope of 1
/// makes the activation the identity. A frozen normalization keeps gamma and
/// beta at their initial values and does not expose them as parameters.
template <typename T>
struct NormAct {
  std::string name;
  std::size_t width = 0;
  bool normalize = false;
  bool frozen = false;
  T slope = T{1};
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  NormAct() = default;
  NormAct(const std::string& prefix, std::size_t w, bool norm, T s)
      : name(prefix), width(w), normalize(norm), slope(s) {
    if (normalize) {
      gamma = Parameter<T>(name + ".bn.gamma", Tensor<T>({w}, T{1}));
      beta = Parameter<T>(name + ".bn.beta", Tensor<T>({w}, T{}));
      running_mean = Tensor<T>({w}, T{});
      running_var = Tensor<T>({w}, T{1});
    }
  }

  /// Batch normalization with a fixed output scale and no learned affine part.
  static NormAct fixed_scale(const std::string& prefix, std::size_t w, T scale) {
    NormAct n(prefix, w, true, T{1});
    n.frozen = true;
    n.gamma.value.values.assign(w, scale);
    return n;
  }

  Var<T> forward(Var<T> x) {
    if (x.cols() != width) {
      throw DimensionError("norm/activation: input shape " + shape_str(x.shape()) +
                           " for width " + std::to_string(width));
    }
    if (!normalize) return slope != T{1} ? ops::leaky_relu(x, slope) : x;
    auto& tape = *x.tape;
    Var<T> g = frozen ? tape.constant(gamma.value) : tape.parameter(gamma);
    Var<T> b = frozen ? tape.constant(beta.value) : tape.parameter(beta);
    return ops::batch_norm_leaky(x, g, b, running_mean, running_var, slope);
  }

  template <typename F>
  void visit_parameters(F&& f) {
    if (normalize && !frozen) {
      f(gamma);
      f(beta);
    }
  }
  template <typename F>
  void visit_buffers(F&& f) {
    if (normalize) {
      f(name + ".bn.running_mean", running_mean);
      f(name + ".bn.running_var", running_var);
    }
  }
};

/// Affine map (weight out x in, bias out) followed by NormAct. This is one
/// layer of a shared per-point MLP.
template <typename T>
struct AffineLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Parameter<T> weight;
  Parameter<T> bias;
  NormAct<T> act;

  AffineLayer() = default;
  AffineLayer(const std::string& name, std::size_t in_width, std::size_t out_width,
              bool normalize, T slope, std::mt19937_64& rng, double gain = 1.0)
      : in(in_width),
        out(out_width),
        weight(name + ".weight", Tensor<T>({out_width, in_width})),
        bias(name + ".bias", Tensor<T>({out_width})),
        act(name, out_width, normalize, slope) {
    const double s = static_cast<double>(slope);
    const double bound =
        gain * std::sqrt(6.0 / ((1.0 + s * s) * static_cast<double>(std::max<std::size_t>(in, 1))));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : weight.value.values) w = static_cast<T>(u(rng));
  }

  /// Builds a layer from explicit weights; used for hand-constructed cases.
  static AffineLayer from_values(const std::string& name, Tensor<T> w, Tensor<T> b,
                                 bool normalize, T slope) {
    AffineLayer layer;
    if (w.rank() != 2 || b.size() != w.shape[0]) {
      throw DimensionError("affine layer: weight " + shape_str(w.shape) + " with bias " +
                           shape_str(b.shape));
    }
    layer.out = w.shape[0];
    layer.in = w.shape[1];
    layer.weight = Parameter<T>(name + ".weight", std::move(w));
    layer.bias = Parameter<T>(name + ".bias", std::move(b));
    layer.act = NormAct<T>(name, layer.out, normalize, slope);
    return layer;
  }

  /// Affine map, normalization (running statistics in eval mode), activation.
  Var<T> forward(Var<T> x) {
    check_input(x);
    auto& tape = *x.tape;
    return act.forward(ops::linear<T>(x, tape.parameter(weight), tape.parameter(bias)));
  }

  /// x * W^T without bias or activation.
  Var<T> project(Var<T> x) {
    check_input(x);
    return ops::linear<T>(x, x.tape->parameter(weight), std::nullopt);
  }

  void check_input(Var<T> x) const {
    if (x.cols() != in) {
      throw DimensionError("affine layer " + weight.name + ": input shape " +
                           shape_str(x.shape()) + " vs weight shape " +
                           shape_str(weight.value.shape));
    }
  }

  template <typename F>
  void visit_parameters(F&& f) {
    f(weight);
    f(bias);
    act.visit_parameters(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    act.visit_buffers(f);
  }
};

template <typename T>
Var<T> mlp_forward(AffineLayer<T>& layer, Var<T> input) {
  return layer.forward(input);
}

}  // namespace dnfn
