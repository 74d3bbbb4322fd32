#pragma once

// Finite-difference verification of the full training objective.

#include <cstdint>
#include <string>
#include <vector>

#include "fprl/config.hpp"

namespace fprl {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double eps = 1e-4;  // stencil step
  double tol = 1e-4;
  std::size_t batch = 2;
  std::size_t coordinates = 2;  // largest-gradient entries checked per tensor
  std::size_t max_resamples = 4;  // probe redraws after the step has shrunk
};

struct GradCheckCase {
  std::string tensor;
  std::string probe;  // "direction" or "coord <index>"
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  std::size_t resamples = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  std::size_t tensors = 0;
  double worst_rel_error = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

// Desk configuration for the check: all loss weights and the auxiliary mask
// term active so every trainable tensor receives gradient.
RunConfig gradcheck_config();

// |a - n| / max(|a|, |n|, floor). The checker sets the floor to the stencil's
// round-off resolution divided by the tolerance, so derivatives too small to
// resolve are judged by absolute agreement.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Checks every trainable tensor: one random unit direction plus the
// largest-gradient coordinates. Perturbations that flip a ReLU sign or a
// mask selection are redrawn.
GradCheckReport gradcheck_objective(const RunConfig& config, const GradCheckOptions& options);

}  // namespace fprl
