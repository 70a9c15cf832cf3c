#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tcgpn/params.hpp"

namespace tcgpn {

template <std::floating_point T>
struct OptimState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  /// First and second moment accumulators, keyed like the parameters.
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments;
};

struct AdamReport {
  std::size_t updated = 0;
  /// Parameters whose gradient held a NaN/Inf; left untouched this step.
  std::vector<std::string> rejected;
};

/// One bias-corrected Adam update. Parameters absent from `grads` are unchanged.
template <std::floating_point T>
AdamReport adam_step(ParamStore<T>& params, const Grads<T>& grads, OptimState<T>& state);

}  // namespace tcgpn
