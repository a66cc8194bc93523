#include "dnfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dnfn/error.hpp"

namespace dnfn {

namespace {

LossSample checked_eval(const std::function<LossSample()>& loss_fn, const std::string& where) {
  LossSample s = loss_fn();
  if (!std::isfinite(s.value)) {
    throw CheckFailure("gradient check aborted: non-finite loss " + where);
  }
  return s;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<LossSample()>& loss_fn,
                                  std::span<const CheckedParam> params,
                                  const GradCheckOptions& options) {
  const LossSample base = checked_eval(loss_fn, "at the unperturbed point");
  GradCheckReport report;
  for (const auto& p : params) {
    if (p.values.size() != p.analytic.size()) {
      throw DimensionError("gradient check: " + p.name + " has " +
                           std::to_string(p.values.size()) + " values but " +
                           std::to_string(p.analytic.size()) + " gradients");
    }
    GradCheckEntry entry{p.name, 0.0, 0, 0};
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double saved = p.values[i];
      const std::string where = "while probing " + p.name + "[" + std::to_string(i) + "]";
      const double h = options.epsilon;
      std::uint64_t regime_mismatch = 0;
      double f[4];
      const double offsets[4] = {-2.0 * h, -h, h, 2.0 * h};
      for (int s = 0; s < 4; ++s) {
        p.values[i] = saved + offsets[s];
        const LossSample probe = checked_eval(loss_fn, where);
        f[s] = probe.value;
        regime_mismatch |= probe.regime ^ base.regime;
      }
      p.values[i] = saved;
      if (regime_mismatch != 0) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h);
      const double analytic = p.analytic[i];
      const double denom = std::max(std::abs(analytic) + std::abs(numeric), options.abs_floor);
      const double rel = std::abs(analytic - numeric) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      ++entry.checked;
    }
    if (report.worst_param.empty() || entry.max_rel_error > report.worst) {
      report.worst = entry.max_rel_error;
      report.worst_param = entry.name;
    }
    report.params.push_back(entry);
  }
  report.passed = report.worst < options.tolerance;
  return report;
}

}  // namespace dnfn
