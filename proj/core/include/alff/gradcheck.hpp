#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace alff {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;  // central-difference step
  /// Test hook: perturbs the analytic gradient of the named unit so the
  /// checker can be shown to catch it. Empty for a normal run.
  std::string corrupt_unit;
};

struct GradUnitResult {
  std::string unit;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::string worst_at;  // parameter name and flat index of the worst coordinate

  bool passed() const { return worst_rel_error <= tolerance; }
};

/// Per-coordinate relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kRelErrorFloor = 1e-6;
inline constexpr double kUnitTolerance = 1e-4;
inline constexpr double kPipelineTolerance = 1e-3;

/// Unit names, in run order.
std::vector<std::string> gradcheck_units();

/// Analytic gradients against central finite differences, in double
/// precision, for every unit in `gradcheck_units()`.
std::vector<GradUnitResult> run_gradcheck(const GradcheckOptions& opts);
GradUnitResult run_gradcheck_unit(const std::string& unit, const GradcheckOptions& opts);

}  // namespace alff
