#pragma once

#include <cstdint>
#include <string>

#include "tcgpn/augment.hpp"
#include "tcgpn/gradcheck.hpp"
#include "tcgpn/model.hpp"

namespace tcgpn {

/// Small model shapes for gradient checking: "tiny" (T=8, F=3) or "small".
ModelConfig gradcheck_model_config(const std::string& size);

/// Random window (standard normal values) over `n_nodes` with a random sparse
/// graph, for checks that need a realistic but small input.
struct RandomProblem {
  WindowSample window;
  CorrelationGraph graph;
};
RandomProblem random_problem(std::size_t n_nodes, std::size_t steps, std::size_t features, std::uint64_t seed);

struct ModelGradCheck {
  GradCheckReport pretrain;  // L_t + L_g on an augmented sample, every non-head path
  GradCheckReport finetune;  // lambda_m L_mse + L_pearson on the complete sample, encoder and head paths
  bool passed() const { return pretrain.passed() && finetune.passed(); }
};

/// Central-difference check of both training objectives in double precision.
ModelGradCheck check_model_gradients(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed,
                                     double eps = 1e-5, double tol = 1e-4);

}  // namespace tcgpn
