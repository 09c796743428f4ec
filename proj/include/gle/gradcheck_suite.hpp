// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gle/gradcheck.hpp"

namespace gle {

struct GradSuiteOptions {
  double eps = 1e-5;
  std::uint64_t seed = 1;
  /// Adds a ReLU case whose backward has its sign flipped.
  bool inject_sign_error = false;
  /// Also check the non-local block, GLE module, stack and toy network.
  bool include_composites = true;
  /// Run only the case with this name when non-empty.
  std::string only;
};

struct GradSuiteEntry {
  std::string name;
  GradCheckResult result;
};

/// Gradient check of every differentiable op, the non-local block, one GLE
/// module, a k = 2 stack and a 16x16 toy network. Op objectives are fixed
/// random projections of the output; the composites use the plain sum.
/// Zero-initialized weights (non-local w, head) are randomized first.
std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& options);

}  // namespace gle
