#include "tcgpn/graphs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tcgpn/csv.hpp"
#include "tcgpn/rng.hpp"

namespace tcgpn {

std::size_t CorrelationGraph::edge_count() const {
  return static_cast<std::size_t>((weights.array() != 0.0).count());
}

void CorrelationGraph::validate() const {
  const auto n = static_cast<Eigen::Index>(n_nodes());
  if (weights.rows() != n || weights.cols() != n) {
    throw std::invalid_argument("graph weight matrix does not match node count");
  }
  std::set<std::string> seen(node_ids.begin(), node_ids.end());
  if (seen.size() != node_ids.size()) throw std::invalid_argument("graph has duplicate node ids");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights(i, i) != 0.0) throw std::invalid_argument("graph diagonal must be zero");
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(weights(i, j)) || weights(i, j) < 0) {
        throw std::invalid_argument("graph weights must be finite and non-negative");
      }
    }
  }
  if (!directed && weights != weights.transpose()) {
    throw std::invalid_argument("undirected graph must have a symmetric weight matrix");
  }
}

CorrelationGraph CorrelationGraph::subgraph(const std::vector<std::size_t>& nodes) const {
  CorrelationGraph out;
  out.directed = directed;
  const auto k = static_cast<Eigen::Index>(nodes.size());
  out.weights = Matrix::Zero(k, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    const std::size_t src = nodes[static_cast<std::size_t>(r)];
    if (src >= n_nodes()) throw std::out_of_range("subgraph: node index out of range");
    out.node_ids.push_back(node_ids[src]);
    for (Eigen::Index c = 0; c < k; ++c) {
      out.weights(r, c) = weights(static_cast<Eigen::Index>(src), static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(c)]));
    }
  }
  return out;
}

CorrelationGraph build_industry_graph(const std::vector<IndustryNode>& nodes) {
  std::set<std::string> ids;
  for (const auto& n : nodes) {
    if (!(n.registered_capital > 0) || !(n.turnover > 0)) {
      throw std::invalid_argument("industry graph: registered capital and turnover must be positive for " + n.id);
    }
    if (!ids.insert(n.id).second) throw std::invalid_argument("industry graph: duplicate node id " + n.id);
  }
  CorrelationGraph g;
  g.directed = true;
  const auto n = static_cast<Eigen::Index>(nodes.size());
  g.weights = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = nodes[static_cast<std::size_t>(i)];
    g.node_ids.push_back(a.id);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& b = nodes[static_cast<std::size_t>(j)];
      if (i == j || a.industry != b.industry) continue;
      g.weights(i, j) = b.registered_capital / a.registered_capital + b.turnover / a.turnover;
    }
  }
  return g;
}

Matrix pairwise_distances(const TimePanel& panel) {
  const std::size_t n = panel.n_nodes();
  const std::size_t len = panel.n_dates() * panel.n_features();
  Matrix dist = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double* x = panel.features.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const double d = x[i * len + k] - x[j * len + k];
        s += d * d;
      }
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::sqrt(s);
      dist(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = std::sqrt(s);
    }
  }
  return dist;
}

CorrelationGraph build_distance_graph(const TimePanel& panel, std::size_t k_neighbors) {
  const std::size_t n = panel.n_nodes();
  if (n < 2) throw std::invalid_argument("distance graph needs at least 2 nodes");
  if (k_neighbors == 0 || k_neighbors >= n) {
    throw std::invalid_argument("distance graph: k_neighbors must be in [1, N)");
  }
  const Matrix dist = pairwise_distances(panel);
  BoolMatrix keep = BoolMatrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), false);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    // Nearest first; index breaks ties.
    std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
      return dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) <
             dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
    });
    for (std::size_t r = 0; r < k_neighbors; ++r) {
      keep(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(others[r])) = true;
      keep(static_cast<Eigen::Index>(others[r]), static_cast<Eigen::Index>(i)) = true;
    }
  }
  CorrelationGraph g;
  g.node_ids = panel.node_ids;
  g.directed = false;
  g.weights = keep.select(dist, Matrix::Zero(dist.rows(), dist.cols()));
  return g;
}

Matrix row_normalize(const Matrix& weights) {
  Matrix out = weights;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s != 0.0) out.row(i) /= s;
  }
  return out;
}

MaskedGraph apply_graph_mask(const CorrelationGraph& graph, const BoolMatrix& kept, double r_g) {
  const auto n = static_cast<Eigen::Index>(graph.n_nodes());
  if (kept.rows() != n || kept.cols() != n) throw std::invalid_argument("graph mask shape mismatch");
  MaskedGraph out;
  out.base = graph;
  out.mask_rate = r_g;
  out.mask_kept = kept;
  Matrix masked = graph.weights;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!kept(i, j)) {
        if (graph.weights(i, j) != 0.0) ++out.masked_count;
        masked(i, j) = 0.0;
      }
    }
  }
  out.input_weights = row_normalize(masked);
  return out;
}

MaskedGraph mask_and_normalize(const CorrelationGraph& graph, double r_g, std::uint64_t seed, MaskMode mode) {
  if (!(r_g >= 0.0 && r_g < 1.0)) throw std::invalid_argument("graph mask rate must be in [0, 1)");
  const auto n = static_cast<Eigen::Index>(graph.n_nodes());
  BoolMatrix kept = BoolMatrix::Constant(n, n, true);
  Rng rng(seed);
  if (mode == MaskMode::Edge) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (graph.weights(i, j) != 0.0) edges.emplace_back(i, j);
      }
    }
    const auto count = static_cast<std::size_t>(std::floor(r_g * static_cast<double>(edges.size())));
    for (std::size_t e : sample_without_replacement(edges.size(), count, rng)) {
      kept(edges[e].first, edges[e].second) = false;
    }
  } else {
    const auto count = static_cast<std::size_t>(std::floor(r_g * static_cast<double>(n)));
    for (std::size_t r : sample_without_replacement(static_cast<std::size_t>(n), count, rng)) {
      const auto i = static_cast<Eigen::Index>(r);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (graph.weights(i, j) != 0.0) kept(i, j) = false;
      }
    }
  }
  return apply_graph_mask(graph, kept, r_g);
}

MaskedGraph unmasked(const CorrelationGraph& graph) {
  const auto n = static_cast<Eigen::Index>(graph.n_nodes());
  return apply_graph_mask(graph, BoolMatrix::Constant(n, n, true), 0.0);
}

std::string format_graph(const CorrelationGraph& graph) {
  std::ostringstream out;
  out.precision(17);
  out << "tcgpn-graph v1 directed=" << (graph.directed ? 1 : 0) << " n=" << graph.n_nodes() << "\n";
  const auto n = static_cast<Eigen::Index>(graph.n_nodes());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = graph.weights(i, j);
      if (w != 0.0) {
        out << graph.node_ids[static_cast<std::size_t>(i)] << "," << graph.node_ids[static_cast<std::size_t>(j)]
            << "," << w << "\n";
      }
    }
  }
  return out.str();
}

void save_graph(const CorrelationGraph& graph, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << format_graph(graph);
}

CorrelationGraph parse_graph(const std::string& text, const std::vector<std::string>& node_ids) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw std::invalid_argument("graph file is empty");
  int directed = -1;
  std::size_t n = 0;
  char dummy = 0;
  {
    std::istringstream hs(header);
    std::string magic, version, dir_tok, n_tok;
    hs >> magic >> version >> dir_tok >> n_tok;
    if (magic != "tcgpn-graph" || version != "v1" || dir_tok.rfind("directed=", 0) != 0 || n_tok.rfind("n=", 0) != 0 ||
        (hs >> dummy)) {
      throw std::invalid_argument("graph file line 1: bad header '" + header + "'");
    }
    const std::string dv = dir_tok.substr(9);
    if (dv != "0" && dv != "1") throw std::invalid_argument("graph file line 1: directed must be 0 or 1");
    directed = dv == "1";
    n = parse_size(n_tok.substr(2), 1);
  }
  if (n != node_ids.size()) {
    throw std::invalid_argument("graph file declares n=" + std::to_string(n) + " but panel has " +
                                std::to_string(node_ids.size()) + " nodes");
  }
  std::map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < node_ids.size(); ++i) index[node_ids[i]] = static_cast<Eigen::Index>(i);

  CorrelationGraph g;
  g.node_ids = node_ids;
  g.directed = directed == 1;
  const auto nn = static_cast<Eigen::Index>(n);
  g.weights = Matrix::Zero(nn, nn);
  BoolMatrix given = BoolMatrix::Constant(nn, nn, false);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) throw std::invalid_argument("graph file line " + std::to_string(line_no) + ": expected src,dst,weight");
    auto src = index.find(fields[0]);
    auto dst = index.find(fields[1]);
    if (src == index.end() || dst == index.end()) {
      throw std::invalid_argument("graph file line " + std::to_string(line_no) + ": unknown node id");
    }
    const double w = parse_double(fields[2], line_no);
    if (!(w >= 0) || src->second == dst->second) {
      throw std::invalid_argument("graph file line " + std::to_string(line_no) + ": invalid edge");
    }
    g.weights(src->second, dst->second) = w;
    given(src->second, dst->second) = true;
  }
  if (!g.directed) {
    for (Eigen::Index i = 0; i < nn; ++i) {
      for (Eigen::Index j = 0; j < nn; ++j) {
        if (given(i, j) && given(j, i) && g.weights(i, j) != g.weights(j, i)) {
          throw std::invalid_argument("undirected graph file has conflicting weights for " +
                                      node_ids[static_cast<std::size_t>(i)] + "," + node_ids[static_cast<std::size_t>(j)]);
        }
        if (given(i, j) && !given(j, i)) g.weights(j, i) = g.weights(i, j);
      }
    }
  }
  g.validate();
  return g;
}

CorrelationGraph load_graph(const std::string& path, const std::vector<std::string>& node_ids) {
  return parse_graph(read_text_file(path), node_ids);
}

std::vector<IndustryNode> load_industry_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"symbol", "industry", "registered_capital", "turnover"}) {
    throw std::invalid_argument(path + " line 1: expected header symbol,industry,registered_capital,turnover");
  }
  std::vector<IndustryNode> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw std::invalid_argument(path + " line " + std::to_string(line_no) + ": expected 4 fields");
    out.push_back({f[0], f[1], parse_double(f[2], line_no), parse_double(f[3], line_no)});
  }
  return out;
}

}  // namespace tcgpn
