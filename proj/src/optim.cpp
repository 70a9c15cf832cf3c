#include "tcgpn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace tcgpn {

template <std::floating_point T>
AdamReport adam_step(ParamStore<T>& params, const Grads<T>& grads, OptimState<T>& state) {
  for (const auto& [path, g] : grads) {
    if (!params.contains(path)) throw std::invalid_argument("gradient for unknown parameter: " + path);
    if (g.shape() != params.get(path).shape()) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match parameter " + path);
    }
  }
  AdamReport report;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [path, g] : grads) {
    const bool finite = std::all_of(g.storage().begin(), g.storage().end(), [](T v) { return std::isfinite(v); });
    if (!finite) {
      report.rejected.push_back(path);
      continue;
    }
    Tensor<T>& p = params.get_mut(path);
    auto it = state.moments.find(path);
    if (it == state.moments.end()) {
      it = state.moments.emplace(path, std::make_pair(Tensor<T>(p.shape()), Tensor<T>(p.shape()))).first;
    }
    Tensor<T>& m = it->second.first;
    Tensor<T>& v = it->second.second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = state.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + state.epsilon);
      p[i] = static_cast<T>(p[i] - step);
    }
    ++report.updated;
  }
  return report;
}

template AdamReport adam_step(ParamStore<float>&, const Grads<float>&, OptimState<float>&);
template AdamReport adam_step(ParamStore<double>&, const Grads<double>&, OptimState<double>&);

}  // namespace tcgpn
