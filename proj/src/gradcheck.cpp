#include "tcgpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tcgpn {

bool GradCheckReport::passed() const {
  return std::none_of(paths.begin(), paths.end(), [](const PathCheck& p) { return p.flagged || p.unprobeable; });
}

double GradCheckReport::worst() const {
  double w = 0;
  for (const auto& p : paths) w = std::max(w, p.max_rel_error);
  return w;
}

GradCheckReport compare_gradients(const LossFn<double>& loss_fn, const ParamStore<double>& params,
                                  const Grads<double>& analytic, double eps, double tol) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckReport report;
  ParamStore<double> probe = params;
  for (const auto& [path, grad] : analytic) {
    PathCheck check{path};
    Tensor<double>& p = probe.get_mut(path);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double original = p[i];
      p[i] = original + eps;
      const double up = evaluate_loss(loss_fn, probe);
      p[i] = original - eps;
      const double down = evaluate_loss(loss_fn, probe);
      p[i] = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        check.unprobeable = true;
        continue;
      }
      const double numeric = (up - down) / (2 * eps);
      const double a = grad[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      check.max_rel_error = std::max(check.max_rel_error, rel);
    }
    check.flagged = check.max_rel_error > tol;
    report.paths.push_back(check);
  }
  return report;
}

GradCheckReport grad_check(const LossFn<double>& loss_fn, const ParamStore<double>& params, double eps,
                           double tol, const PathFilter& trainable) {
  const auto fb = forward_backward(loss_fn, params, trainable);
  return compare_gradients(loss_fn, params, fb.grads, eps, tol);
}

}  // namespace tcgpn
