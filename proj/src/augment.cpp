#include "tcgpn/augment.hpp"

#include <cmath>
#include <stdexcept>

#include "tcgpn/rng.hpp"

namespace tcgpn {

NodeSample sample_nodes(const WindowSample& window, const CorrelationGraph& graph, std::size_t n_sub,
                        std::uint64_t seed) {
  const std::size_t n = graph.n_nodes();
  if (window.x.dim(0) != n) throw std::invalid_argument("sample_nodes: window and graph node counts differ");
  if (n_sub > n) {
    throw std::invalid_argument("sample_nodes: n_sub=" + std::to_string(n_sub) + " exceeds N=" + std::to_string(n));
  }
  if (n_sub < 2) throw std::invalid_argument("sample_nodes: n_sub must be at least 2");
  Rng rng(seed);
  NodeSample out;
  out.nodes = sample_without_replacement(n, n_sub, rng);
  out.graph = graph.subgraph(out.nodes);

  const std::size_t t = window.x.dim(1), f = window.x.dim(2);
  out.window.x = Tensor<double>({n_sub, t, f});
  for (std::size_t r = 0; r < n_sub; ++r) {
    const std::size_t src = out.nodes[r];
    std::copy_n(window.x.data() + src * t * f, t * f, out.window.x.data() + r * t * f);
    out.window.target.push_back(window.target.at(src));
    if (!window.last_target.empty()) out.window.last_target.push_back(window.last_target.at(src));
  }
  out.window.end_index = window.end_index;
  out.window.end_date = window.end_date;
  out.window.target_date = window.target_date;
  return out;
}

MaskedPanel mask_temporal(const Tensor<double>& window_values, double r_t, std::uint64_t seed, SpanMode mode) {
  if (!(r_t >= 0.0 && r_t < 1.0)) throw std::invalid_argument("temporal mask rate must be in [0, 1)");
  if (window_values.rank() != 3) throw ShapeError("mask_temporal expects [N, T, F]");
  const std::size_t n = window_values.dim(0), t = window_values.dim(1), f = window_values.dim(2);
  MaskedPanel out;
  out.mask_rate = r_t;
  out.span_length = static_cast<std::size_t>(std::floor(r_t * static_cast<double>(t)));
  out.values = window_values;
  out.mask_positions = BoolMatrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t), false);
  out.span_starts.assign(n, 0);
  if (out.span_length == 0) return out;

  Rng rng(seed);
  const std::size_t choices = t - out.span_length + 1;
  const std::size_t shared = uniform_index(rng, choices);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = mode == SpanMode::Shared ? shared : uniform_index(rng, choices);
    out.span_starts[i] = s;
    for (std::size_t k = s; k < s + out.span_length; ++k) {
      out.mask_positions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = true;
      std::fill_n(out.values.data() + (i * t + k) * f, f, 0.0);
    }
  }
  return out;
}

MaskedSample make_pretrain_sample(const WindowSample& window, const CorrelationGraph& graph,
                                  const AugmentConfig& cfg, std::uint64_t seed) {
  const std::size_t n_sub = cfg.n_sub == 0 ? graph.n_nodes() : cfg.n_sub;
  NodeSample sub = sample_nodes(window, graph, n_sub, mix_seed({seed, 1}));
  MaskedSample out;
  out.panel = mask_temporal(sub.window.x, cfg.r_t, mix_seed({seed, 2}), cfg.span_mode);
  out.graph = mask_and_normalize(sub.graph, cfg.r_g, mix_seed({seed, 3}), cfg.mask_mode);
  out.original = std::move(sub.window.x);
  out.node_ids = sub.graph.node_ids;
  out.target = std::move(sub.window.target);
  return out;
}

MaskedSample make_full_sample(const WindowSample& window, const CorrelationGraph& graph) {
  if (window.x.dim(0) != graph.n_nodes()) {
    throw std::invalid_argument("node set mismatch: window has " + std::to_string(window.x.dim(0)) +
                                " nodes, graph has " + std::to_string(graph.n_nodes()));
  }
  MaskedSample out;
  out.panel = mask_temporal(window.x, 0.0, 0);
  out.graph = unmasked(graph);
  out.original = window.x;
  out.node_ids = graph.node_ids;
  out.target = window.target;
  return out;
}

}  // namespace tcgpn
