#include "tcgpn/checks.hpp"

#include <random>
#include <stdexcept>

#include "tcgpn/rng.hpp"
#include "tcgpn/train.hpp"

namespace tcgpn {

ModelConfig gradcheck_model_config(const std::string& size) {
  ModelConfig c;
  c.window = 8;
  c.n_features = 3;
  if (size == "tiny") {
    c.d_model = 8;
    c.gat_heads = 2;
    c.gat_dim = 4;
    c.tgm_blocks = 1;
    c.tgm_heads = 2;
    c.adj_dim = 4;
    c.ffn_dim = 8;
    c.head_hidden = 8;
  } else if (size == "small") {
    c.d_model = 16;
    c.gat_heads = 4;
    c.gat_dim = 4;
    c.tgm_blocks = 2;
    c.tgm_heads = 4;
    c.adj_dim = 8;
    c.ffn_dim = 16;
    c.head_hidden = 16;
  } else {
    throw std::invalid_argument("unknown gradcheck size '" + size + "' (expected tiny or small)");
  }
  return c;
}

RandomProblem random_problem(std::size_t n_nodes, std::size_t steps, std::size_t features, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> weight(0.5, 2.0);
  std::bernoulli_distribution edge(0.6);
  RandomProblem p;
  p.window.x = Tensor<double>({n_nodes, steps, features});
  for (double& v : p.window.x.storage()) v = normal(rng);
  p.window.target.resize(n_nodes);
  p.window.last_target.resize(n_nodes);
  for (double& v : p.window.target) v = normal(rng);
  for (double& v : p.window.last_target) v = normal(rng);
  p.window.end_index = steps - 1;
  p.window.end_date = Date(2020, 1, 1).plus_days(static_cast<int>(steps) - 1);
  p.window.target_date = p.window.end_date.plus_days(1);
  p.graph.directed = true;
  p.graph.weights = Matrix::Zero(static_cast<Eigen::Index>(n_nodes), static_cast<Eigen::Index>(n_nodes));
  for (std::size_t i = 0; i < n_nodes; ++i) {
    p.graph.node_ids.push_back("N" + std::to_string(i));
    for (std::size_t j = 0; j < n_nodes; ++j) {
      if (i != j && edge(rng)) p.graph.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = weight(rng);
    }
  }
  return p;
}

ModelGradCheck check_model_gradients(const ModelConfig& cfg, std::size_t n_nodes, std::uint64_t seed, double eps,
                                     double tol) {
  const RandomProblem prob = random_problem(n_nodes, cfg.window, cfg.n_features, seed);
  const ParamStore<double> params = init_params<double>(cfg, mix_seed({seed, 1}));
  const MaskedSample masked = make_pretrain_sample(prob.window, prob.graph, AugmentConfig{}, mix_seed({seed, 2}));
  const MaskedSample full = make_full_sample(prob.window, prob.graph);

  ModelGradCheck out;
  const LossFn<double> pre = [&](ParamBinding<double>& p) { return pretrain_terms(p, masked, cfg, 1.0).total; };
  out.pretrain = grad_check(pre, params, eps, tol, [](const std::string& path) { return !is_head_path(path); });
  const LossFn<double> fine = [&](ParamBinding<double>& p) { return finetune_terms(p, full, cfg, 0.3).total; };
  out.finetune = grad_check(fine, params, eps, tol, [](const std::string& path) {
    return is_head_path(path) || is_encoder_path(path);
  });
  return out;
}

}  // namespace tcgpn
