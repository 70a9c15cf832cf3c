#pragma once

#include <string>
#include <vector>

#include "tcgpn/params.hpp"

namespace tcgpn {

struct PathCheck {
  std::string path;
  double max_rel_error = 0;
  bool flagged = false;      // max_rel_error > tol
  bool unprobeable = false;  // loss was not finite at some probe point
};

struct GradCheckReport {
  std::vector<PathCheck> paths;
  bool passed() const;
  double worst() const;
};

/// Compares supplied analytic gradients against central differences,
/// entry by entry:  |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckReport compare_gradients(const LossFn<double>& loss_fn, const ParamStore<double>& params,
                                  const Grads<double>& analytic, double eps, double tol);

/// Back-propagates `loss_fn` and checks every trainable path it reaches.
GradCheckReport grad_check(const LossFn<double>& loss_fn, const ParamStore<double>& params, double eps,
                           double tol, const PathFilter& trainable = all_paths);

}  // namespace tcgpn
