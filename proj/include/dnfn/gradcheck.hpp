#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dnfn {

/// One loss evaluation. `regime` fingerprints the discrete decisions taken
/// (rectifier signs, max winners, top-k picks); probes whose regime differs
/// from the baseline straddle a kink and are skipped.
struct LossSample {
  double value = 0.0;
  std::uint64_t regime = 0;
};

/// A parameter tensor under test: values are perturbed in place and compared
/// against the analytic gradient.
struct CheckedParam {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double worst = 0.0;
  std::string worst_param;
  bool passed = true;
};

struct GradCheckOptions {
  double epsilon = 3e-4;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a| + |n|, abs_floor); the floor keeps
  // vanishing gradients from turning rounding noise into large ratios.
  double abs_floor = 1e-6;
};

/// Fourth-order central differences
///   (f(p - 2h) - 8 f(p - h) + 8 f(p + h) - f(p + 2h)) / 12h,  h = epsilon,
/// against analytic gradients. Throws CheckFailure if the loss is ever
/// non-finite.
GradCheckReport finite_diff_check(const std::function<LossSample()>& loss_fn,
                                  std::span<const CheckedParam> params,
                                  const GradCheckOptions& options = {});

}  // namespace dnfn
