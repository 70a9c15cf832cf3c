#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcgpn/data.hpp"
#include "tcgpn/graphs.hpp"

namespace tcgpn {

enum class SpanMode { PerNode, Shared };

/// Window values with one contiguous masked span per node, zeroed across all features.
struct MaskedPanel {
  Tensor<double> values;          // [N, T, F]
  BoolMatrix mask_positions;      // [N, T], true where masked
  std::vector<std::size_t> span_starts;
  std::size_t span_length = 0;
  double mask_rate = 0;
};

/// Window restricted (and reordered) to a node subset, with the matching subgraph.
struct NodeSample {
  WindowSample window;
  CorrelationGraph graph;
  std::vector<std::size_t> nodes;  // source row of each sampled node
};

struct MaskedSample {
  MaskedPanel panel;
  MaskedGraph graph;
  Tensor<double> original;  // unmasked X for supervision
  std::vector<std::string> node_ids;
  std::vector<double> target;
};

/// Uniform subset of `n_sub` nodes without replacement, in random order.
NodeSample sample_nodes(const WindowSample& window, const CorrelationGraph& graph, std::size_t n_sub,
                        std::uint64_t seed);

/// Masks floor(r_t * T) consecutive steps per node starting uniformly in [0, T - L].
MaskedPanel mask_temporal(const Tensor<double>& window_values, double r_t, std::uint64_t seed,
                          SpanMode mode = SpanMode::PerNode);

struct AugmentConfig {
  std::size_t n_sub = 0;  // 0 keeps every node (still shuffled)
  double r_t = 0.3;
  double r_g = 0.3;
  SpanMode span_mode = SpanMode::PerNode;
  MaskMode mask_mode = MaskMode::Edge;
};

/// Node sampling, temporal masking and graph masking, each from its own child seed.
MaskedSample make_pretrain_sample(const WindowSample& window, const CorrelationGraph& graph,
                                  const AugmentConfig& cfg, std::uint64_t seed);

/// Complete inputs for fine-tuning and prediction: nothing masked, original node order.
MaskedSample make_full_sample(const WindowSample& window, const CorrelationGraph& graph);

}  // namespace tcgpn
