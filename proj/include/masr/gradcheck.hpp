#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "masr/model.hpp"

namespace masr {

struct GradCheckOptions {
  std::size_t n_configs = 100;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;  // per-coordinate |analytic - fd| / max(1, |a|, |fd|)
  double step = 1e-5;       // central-difference step
};

struct GradCheckGroup {
  std::size_t checked = 0;      // coordinates compared
  double worst = 0.0;           // worst relative error seen
  std::string worst_at;         // config / layer / branch of the worst case
  std::size_t failures = 0;
};

struct GradCheckResult {
  bool pass = false;
  std::size_t n_configs = 0;
  std::map<std::string, GradCheckGroup> groups;
};

// Random model configurations (d <= 32, m <= 16, K <= 5, depth 1-3), whole-model
// finite differences against the analytic gradients, both loss-option variants
// and both forward modes exercised. Draws landing within 100 steps of a ReLU
// kink or a probability clamp are redrawn, since the loss is not differentiable
// there.
GradCheckResult run_gradcheck(const GradCheckOptions& options);

std::string render_gradcheck(const GradCheckResult& result, const GradCheckOptions& options);

}  // namespace masr
