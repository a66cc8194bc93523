#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dnfn/gradcheck.hpp"
#include "dnfn/ops.hpp"

namespace dnfn::test {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values) v = u(rng);
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values) v = static_cast<float>(u(rng));
  return t;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

// Per-column batch normalization (biased variance) followed by a leaky rectifier.
inline std::vector<double> norm_act(std::vector<double> x, std::size_t cols, double slope) {
  const std::size_t rows = x.size() / cols;
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < rows; ++r) mean += x[r * cols + c];
    mean /= rows;
    for (std::size_t r = 0; r < rows; ++r) var += std::pow(x[r * cols + c] - mean, 2);
    var /= rows;
    for (std::size_t r = 0; r < rows; ++r) {
      double v = (x[r * cols + c] - mean) / std::sqrt(var + 1e-5);
      x[r * cols + c] = v < 0 ? slope * v : v;
    }
  }
  return x;
}

// Finite-difference check of a recorded expression over parameters that
// live elsewhere (e.g. inside a layer). `build` records onto a fresh tape;
// the loss is the output's inner product with a fixed random probe.
template <typename Build>
GradCheckReport check_params(const std::vector<Parameter<double>*>& params, Build build,
                             Mode mode = Mode::train, std::uint64_t seed = 7) {
  Tensor<double> probe;
  std::mt19937_64 rng(seed);
  auto run = [&](bool backward) {
    Tape<double> tape(mode);
    tape.set_track_regime(true);
    Var<double> out = build(tape);
    if (probe.size() != out.value().size()) probe = random_tensor(out.shape(), rng);
    Var<double> loss = ops::weighted_sum(out, probe);
    if (backward) {
      for (auto* p : params) p->zero_grad();
      tape.backward(loss);
    }
    return LossSample{loss.value()[0], tape.regime()};
  };
  run(true);
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  std::vector<CheckedParam> checked;
  for (std::size_t i = 0; i < params.size(); ++i) {
    checked.push_back({params[i]->name, params[i]->value.values, analytic[i]});
  }
  return finite_diff_check([&] { return run(false); }, checked);
}

// Same, for free-standing parameters handed to `build` as one Var each.
template <typename Build>
GradCheckReport check_expression(std::vector<Parameter<double>>& params, Build build,
                                 Mode mode = Mode::train, std::uint64_t seed = 7) {
  std::vector<Parameter<double>*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  return check_params(
      ptrs,
      [&](Tape<double>& tape) {
        std::vector<Var<double>> vars;
        for (auto& p : params) vars.push_back(tape.parameter(p));
        return build(tape, vars);
      },
      mode, seed);
}

inline std::size_t total_checked(const GradCheckReport& r) {
  std::size_t n = 0;
  for (const auto& e : r.params) n += e.checked;
  return n;
}

}  // namespace dnfn::test
