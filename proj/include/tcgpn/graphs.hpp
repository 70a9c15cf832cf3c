#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "tcgpn/panel.hpp"

namespace tcgpn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Weighted adjacency over series. a_ij != 0 iff node i lists j as a neighbor;
/// the diagonal is always stored as 0 (self-loops are added inside GAT).
struct CorrelationGraph {
  std::vector<std::string> node_ids;
  Matrix weights;
  bool directed = false;

  std::size_t n_nodes() const { return node_ids.size(); }
  std::size_t edge_count() const;
  void validate() const;
  /// Restriction to `nodes` (in that order) along both axes.
  CorrelationGraph subgraph(const std::vector<std::size_t>& nodes) const;
};

enum class MaskMode { Edge, Node };

/// Graph after random masking: `input_weights` feeds the encoder, `base`
/// stays the supervision target, `mask_kept` is false exactly on masked edges.
struct MaskedGraph {
  CorrelationGraph base;
  Matrix input_weights;
  BoolMatrix mask_kept;
  double mask_rate = 0;
  std::size_t masked_count = 0;

  std::size_t n_nodes() const { return base.n_nodes(); }
};

struct IndustryNode {
  std::string id;
  std::string industry;
  double registered_capital = 0;
  double turnover = 0;
};

/// a_ij = R_j/R_i + Tv_j/Tv_i within an industry, 0 across industries. Directed.
CorrelationGraph build_industry_graph(const std::vector<IndustryNode>& nodes);

/// Euclidean distance between every pair of node histories (all D x F entries).
Matrix pairwise_distances(const TimePanel& panel);

/// Distance graph kept to each node's k nearest neighbors (union over both
/// endpoints, so the result is symmetric). Stored weights are the raw distances.
CorrelationGraph build_distance_graph(const TimePanel& panel, std::size_t k_neighbors);

/// Row-wise sum-to-one over nonzero entries; all-zero rows stay zero.
Matrix row_normalize(const Matrix& weights);

/// Masks floor(r_g * nnz) edges (Edge mode) or the rows of floor(r_g * N)
/// nodes (Node mode), chosen uniformly by `seed`, then row-normalizes.
MaskedGraph mask_and_normalize(const CorrelationGraph& graph, double r_g, std::uint64_t seed,
                               MaskMode mode = MaskMode::Edge);

/// Deterministic core of mask_and_normalize: `kept(i, j)` false removes edge (i, j).
MaskedGraph apply_graph_mask(const CorrelationGraph& graph, const BoolMatrix& kept, double r_g);

/// Unmasked, normalized graph as used for fine-tuning and prediction.
MaskedGraph unmasked(const CorrelationGraph& graph);

// Graph file:
//   tcgpn-graph v1 directed={0|1} n={N}
//   src_id,dst_id,weight
void save_graph(const CorrelationGraph& graph, const std::string& path);
std::string format_graph(const CorrelationGraph& graph);
/// Node order follows `node_ids` (normally the panel's); unknown ids are rejected.
CorrelationGraph parse_graph(const std::string& text, const std::vector<std::string>& node_ids);
CorrelationGraph load_graph(const std::string& path, const std::vector<std::string>& node_ids);

/// CSV with header `symbol,industry,registered_capital,turnover`.
std::vector<IndustryNode> load_industry_csv(const std::string& path);

}  // namespace tcgpn
