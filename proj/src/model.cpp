#include "tcgpn/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "tcgpn/rng.hpp"

namespace tcgpn {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

double ModelConfig::resolved_sigma() const {
  return sigma_h > 0 ? sigma_h : static_cast<double>(window) / 4.0;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("model config: " + msg);
  };
  need(d_model > 0 && tgm_heads > 0, "d_model and tgm_heads must be positive");
  need(d_model % tgm_heads == 0, "d_model (" + std::to_string(d_model) + ") must be divisible by tgm_heads (" +
                                     std::to_string(tgm_heads) + ")");
  need(gat_heads > 0 && gat_dim > 0, "gat_heads and gat_dim must be positive");
  need(tgm_blocks > 0, "tgm_blocks must be positive");
  need(window > 0, "window must be positive");
  need(n_features > 0, "n_features must be positive");
  need(adj_dim > 0 && ffn_dim > 0 && head_hidden > 0, "adj_dim, ffn_dim and head_hidden must be positive");
  need(decoder_blocks == 1, "decoder_blocks must be 1");
  need(sigma_h >= 0 && !std::isnan(sigma_h), "sigma_h must be positive (0 selects window/4)");
  need(leaky_slope >= 0 && leaky_slope < 1, "leaky_slope must be in [0, 1)");
}

KeyValues ModelConfig::to_kv() const {
  return {
      {"d_model", std::to_string(d_model)},
      {"gat_heads", std::to_string(gat_heads)},
      {"gat_dim", std::to_string(gat_dim)},
      {"tgm_blocks", std::to_string(tgm_blocks)},
      {"tgm_heads", std::to_string(tgm_heads)},
      {"sigma_h", format_real(sigma_h)},
      {"window", std::to_string(window)},
      {"n_features", std::to_string(n_features)},
      {"leaky_slope", format_real(leaky_slope)},
      {"adj_dim", std::to_string(adj_dim)},
      {"ffn_dim", std::to_string(ffn_dim)},
      {"head_hidden", std::to_string(head_hidden)},
      {"decoder_blocks", std::to_string(decoder_blocks)},
      {"use_gat", use_gat ? "true" : "false"},
  };
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "d_model") c.d_model = parse_count(k, v);
    else if (k == "gat_heads") c.gat_heads = parse_count(k, v);
    else if (k == "gat_dim") c.gat_dim = parse_count(k, v);
    else if (k == "tgm_blocks") c.tgm_blocks = parse_count(k, v);
    else if (k == "tgm_heads") c.tgm_heads = parse_count(k, v);
    else if (k == "sigma_h") c.sigma_h = parse_real(k, v);
    else if (k == "window") c.window = parse_count(k, v);
    else if (k == "n_features") c.n_features = parse_count(k, v);
    else if (k == "leaky_slope") c.leaky_slope = parse_real(k, v);
    else if (k == "adj_dim") c.adj_dim = parse_count(k, v);
    else if (k == "ffn_dim") c.ffn_dim = parse_count(k, v);
    else if (k == "head_hidden") c.head_hidden = parse_count(k, v);
    else if (k == "decoder_blocks") c.decoder_blocks = parse_count(k, v);
    else if (k == "use_gat") c.use_gat = parse_bool(k, v);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

void add_block_shapes(std::map<std::string, Shape>& s, const std::string& prefix, std::size_t d, std::size_t ffn) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) s[prefix + w] = {d, d};
  s[prefix + "bo"] = {d};
  s[prefix + "ln1_g"] = {d};
  s[prefix + "ln1_b"] = {d};
  s[prefix + "ff1_w"] = {d, ffn};
  s[prefix + "ff1_b"] = {ffn};
  s[prefix + "ff2_w"] = {ffn, d};
  s[prefix + "ff2_b"] = {d};
  s[prefix + "ln2_g"] = {d};
  s[prefix + "ln2_b"] = {d};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  std::map<std::string, Shape> s;
  s["fuse/w"] = {cfg.n_features, d};
  s["fuse/b"] = {d};
  if (cfg.use_gat) {
    s["gat/w"] = {d, cfg.gat_heads * cfg.gat_dim};
    s["gat/a_src"] = {cfg.gat_heads, cfg.gat_dim};
    s["gat/a_dst"] = {cfg.gat_heads, cfg.gat_dim};
  }
  s["proj/w"] = {cfg.use_gat ? cfg.gat_dim : d, d};
  s["proj/b"] = {d};
  for (std::size_t i = 0; i < cfg.tgm_blocks; ++i) add_block_shapes(s, "enc/block" + std::to_string(i) + "/", d, cfg.ffn_dim);
  add_block_shapes(s, "dec/block0/", d, cfg.ffn_dim);
  s["dec/fc_w"] = {d, cfg.n_features};
  s["dec/fc_b"] = {cfg.n_features};
  s["adj/wl"] = {d, cfg.adj_dim};
  s["adj/bl"] = {cfg.adj_dim};
  s["adj/wr"] = {d, cfg.adj_dim};
  s["adj/br"] = {cfg.adj_dim};
  s["head/fc1_w"] = {d, cfg.head_hidden};
  s["head/fc1_b"] = {cfg.head_hidden};
  s["head/fc2_w"] = {cfg.head_hidden, d};
  s["head/fc2_b"] = {d};
  s["head/pred_w"] = {cfg.window * d, 1};
  s["head/pred_b"] = {1};
  return s;
}

bool is_head_path(const std::string& path) { return path.starts_with("head/"); }

template <std::floating_point T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<T> store(seed);
  for (const auto& [path, shape] : parameter_shapes(cfg)) {
    Rng rng(mix_seed({seed, fnv1a(path)}));
    if (ends_with(path, "_g")) {
      store.add(path, Tensor<T>(shape, T(1)));
    } else if (shape.size() == 1) {
      store.add(path, Tensor<T>(shape, T(0)));
    } else if (path.starts_with("gat/a_")) {
      // Attention vectors act on gat_dim features per head.
      Shape fan{shape[1], shape[0]};
      Tensor<T> t = init_weight<T>(fan, rng);
      store.add(path, t.reshaped(shape));
    } else {
      store.add(path, init_weight<T>(shape, rng));
    }
  }
  return store;
}

void validate_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg) {
  const ModelConfig stored = ModelConfig::from_kv(parse_key_values(ckpt.config_text));
  const KeyValues a = stored.to_kv(), b = cfg.to_kv();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second != b[i].second) {
      throw CheckpointError("checkpoint config mismatch: " + a[i].first + " is " + a[i].second +
                            " in the checkpoint but " + b[i].second + " in the current config");
    }
  }
  const auto shapes = parameter_shapes(cfg);
  if (shapes.size() != ckpt.manifest.size()) {
    throw CheckpointError("checkpoint manifest has " + std::to_string(ckpt.manifest.size()) + " entries, model expects " +
                          std::to_string(shapes.size()));
  }
  for (const auto& e : ckpt.manifest) {
    auto it = shapes.find(e.path);
    if (it == shapes.end()) throw CheckpointError("checkpoint has unexpected parameter " + e.path);
    if (it->second != e.shape) {
      throw CheckpointError("checkpoint parameter " + e.path + " has shape " + shape_str(e.shape) + ", expected " +
                            shape_str(it->second));
    }
  }
}

// ---------------------------------------------------------------------------
// Inputs and fixed tables
// ---------------------------------------------------------------------------

template <std::floating_point T>
ModelInput<T> make_model_input(const MaskedSample& sample) {
  const std::size_t n = sample.graph.base.n_nodes();
  if (sample.panel.values.dim(0) != n) {
    throw std::invalid_argument("node set mismatch: panel has " + std::to_string(sample.panel.values.dim(0)) +
                                " nodes, graph has " + std::to_string(n));
  }
  ModelInput<T> in;
  in.x = sample.panel.values.cast<T>();
  in.non_neighbor = Tensor<T>({n, n}, T(0));
  const Matrix& w = sample.graph.input_weights;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == 0.0) in.non_neighbor[i * n + j] = T(1);
    }
  }
  return in;
}

template <std::floating_point T>
Tensor<T> positional_encoding(std::size_t steps, std::size_t channels) {
  Tensor<T> pe({steps, channels});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(channels));
      const double angle = static_cast<double>(t) * freq;
      pe[t * channels + c] = static_cast<T>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

Tensor<double> gaussian_mask(std::size_t steps, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_mask: sigma must be positive");
  Tensor<double> m({steps, steps}, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double gap = static_cast<double>(i - j);
      m[i * steps + j] = std::exp(-gap * gap / (2.0 * sigma * sigma));
    }
  }
  return m;
}

template <std::floating_point T>
Tensor<T> gaussian_log_bias(std::size_t steps, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_log_bias: sigma must be positive");
  Tensor<T> b({steps, steps}, -std::numeric_limits<T>::infinity());
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double gap = static_cast<double>(i - j);
      b[i * steps + j] = std::isinf(sigma) ? T(0) : static_cast<T>(-gap * gap / (2.0 * sigma * sigma));
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace {

template <std::floating_point T>
Var<T> linear(ParamBinding<T>& p, const Var<T>& x, const std::string& w, const std::string& b) {
  return ops::matmul(x, p(w)) + p(b);
}

}  // namespace

template <std::floating_point T>
Var<T> fuse_and_position(ParamBinding<T>& p, const Var<T>& x, const ModelConfig& cfg) {
  typename Tape<T>::Scope scope(p.tape(), "fuse");
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError(p.tape().path("fuse_and_position") + ": expected [N, T, F], got " + shape_str(s));
  const Tensor<T>& w = p.store().get("fuse/w");
  if (s[2] != w.dim(0)) {
    throw ShapeError(p.tape().path("fuse_and_position") + ": input has F=" + std::to_string(s[2]) +
                     " features but fuse/w expects " + std::to_string(w.dim(0)));
  }
  Var<T> pe = p.tape().constant(positional_encoding<T>(s[1], cfg.d_model));
  return linear(p, x, "fuse/w", "fuse/b") + pe;
}

template <std::floating_point T>
Var<T> gat_forward(ParamBinding<T>& p, const Var<T>& xhat, const Tensor<T>& non_neighbor, const ModelConfig& cfg,
                   Tensor<T>* attention) {
  typename Tape<T>::Scope scope(p.tape(), "gat");
  const std::size_t n = xhat.shape()[0], steps = xhat.shape()[1];
  const std::size_t k = cfg.gat_heads, g = cfg.gat_dim;
  if (non_neighbor.shape() != Shape{n, n}) {
    throw ShapeError(p.tape().path("gat_forward") + ": adjacency is " + shape_str(non_neighbor.shape()) +
                     " but there are " + std::to_string(n) + " nodes");
  }
  const T slope = static_cast<T>(cfg.leaky_slope);
  // [N,T,d] -> [T,N,d] -> [T,N,K*g] -> [T,K,N,g]
  Var<T> h = ops::matmul(ops::permute(xhat, {1, 0, 2}), p("gat/w"));
  h = ops::permute(ops::reshape(h, {steps, n, k, g}), {0, 2, 1, 3});
  Var<T> a_src = ops::reshape(p("gat/a_src"), {1, k, 1, g});
  Var<T> a_dst = ops::reshape(p("gat/a_dst"), {1, k, 1, g});
  Var<T> s_src = ops::sum(h * a_src, 3, true);                   // [T,K,N,1]
  Var<T> s_dst = ops::transpose(ops::sum(h * a_dst, 3, true));   // [T,K,1,N]
  Var<T> e = ops::leaky_relu(s_src + s_dst, slope);              // [T,K,N,N]
  Tensor<T> exclude({n, n}, T(0));
  for (std::size_t i = 0; i < n * n; ++i) {
    if (non_neighbor[i] != T(0)) exclude[i] = -std::numeric_limits<T>::infinity();
  }
  Var<T> alpha = ops::softmax_bias(e, exclude);
  if (attention) *attention = alpha.value();
  Var<T> agg = ops::mean(ops::matmul(alpha, h), 1, false);       // [T,N,g]
  return ops::permute(ops::leaky_relu(agg, slope), {1, 0, 2});   // [N,T,g]
}

template <std::floating_point T>
Var<T> tgm_block(ParamBinding<T>& p, const std::string& prefix, const Var<T>& z, const Tensor<T>& log_bias,
                 std::size_t n_heads) {
  typename Tape<T>::Scope scope(p.tape(), prefix);
  const Shape& s = z.shape();
  if (s.size() != 3) throw ShapeError(p.tape().path("tgm_block") + ": expected [N, T, d], got " + shape_str(s));
  const std::size_t n = s[0], steps = s[1], d = s[2];
  if (d % n_heads != 0) throw ShapeError(p.tape().path("tgm_block") + ": d not divisible by heads");
  if (log_bias.shape() != Shape{steps, steps}) {
    throw ShapeError(p.tape().path("tgm_block") + ": mask is " + shape_str(log_bias.shape()) + " for T=" +
                     std::to_string(steps));
  }
  const std::size_t dk = d / n_heads;
  auto split = [&](const Var<T>& v) { return ops::permute(ops::reshape(v, {n, steps, n_heads, dk}), {0, 2, 1, 3}); };
  Var<T> q = split(ops::matmul(z, p(prefix + "wq")));
  Var<T> k = split(ops::matmul(z, p(prefix + "wk")));
  Var<T> v = split(ops::matmul(z, p(prefix + "wv")));
  Var<T> scores = ops::scale(ops::matmul(q, ops::transpose(k)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
  Var<T> att = ops::softmax_bias(scores, log_bias);
  Var<T> heads = ops::reshape(ops::permute(ops::matmul(att, v), {0, 2, 1, 3}), {n, steps, d});
  Var<T> y = ops::layer_norm(z + linear(p, heads, prefix + "wo", prefix + "bo"), p(prefix + "ln1_g"), p(prefix + "ln1_b"));
  Var<T> ff = linear(p, ops::relu(linear(p, y, prefix + "ff1_w", prefix + "ff1_b")), prefix + "ff2_w", prefix + "ff2_b");
  return ops::layer_norm(y + ff, p(prefix + "ln2_g"), p(prefix + "ln2_b"));
}

template <std::floating_point T>
EncoderOutput<T> encoder_forward(ParamBinding<T>& p, const ModelInput<T>& input, const ModelConfig& cfg,
                                 bool record_attention) {
  typename Tape<T>::Scope scope(p.tape(), "encoder");
  if (input.x.rank() != 3 || input.x.dim(1) != cfg.window) {
    throw ShapeError(p.tape().path("encoder_forward") + ": input " + shape_str(input.x.shape()) + " does not match window " +
                     std::to_string(cfg.window));
  }
  EncoderOutput<T> out;
  Var<T> h = fuse_and_position(p, p.tape().constant(input.x), cfg);
  if (cfg.use_gat) {
    Tensor<T> att;
    h = gat_forward(p, h, input.non_neighbor, cfg, record_attention ? &att : nullptr);
    if (record_attention) out.gat_attention = std::move(att);
  }
  h = linear(p, h, "proj/w", "proj/b");
  const Tensor<T> bias = gaussian_log_bias<T>(cfg.window, cfg.resolved_sigma());
  for (std::size_t i = 0; i < cfg.tgm_blocks; ++i) {
    h = tgm_block(p, "enc/block" + std::to_string(i) + "/", h, bias, cfg.tgm_heads);
  }
  out.o_l = h;
  return out;
}

template <std::floating_point T>
Var<T> temporal_decoder(ParamBinding<T>& p, const Var<T>& o_l, const ModelConfig& cfg) {
  typename Tape<T>::Scope scope(p.tape(), "temporal_decoder");
  const Tensor<T> bias = gaussian_log_bias<T>(o_l.shape()[1], cfg.resolved_sigma());
  Var<T> h = tgm_block(p, "dec/block0/", o_l, bias, cfg.tgm_heads);
  return linear(p, h, "dec/fc_w", "dec/fc_b");
}

template <std::floating_point T>
Var<T> adjacency_decoder(ParamBinding<T>& p, const Var<T>& o_l) {
  typename Tape<T>::Scope scope(p.tape(), "adjacency_decoder");
  Var<T> summary = ops::mean(o_l, 1, false);  // [N, d]
  Var<T> l = linear(p, summary, "adj/wl", "adj/bl");
  Var<T> r = linear(p, summary, "adj/wr", "adj/br");
  return ops::matmul(l, ops::transpose(r));
}

template <std::floating_point T>
Var<T> finetune_head(ParamBinding<T>& p, const Var<T>& o_l) {
  typename Tape<T>::Scope scope(p.tape(), "head");
  const std::size_t n = o_l.shape()[0], steps = o_l.shape()[1], d = o_l.shape()[2];
  const std::size_t expected = p.store().get("head/pred_w").dim(0);
  if (steps * d != expected) {
    throw ShapeError(p.tape().path("finetune_head") + ": flattened width " + std::to_string(steps * d) +
                     " does not match head/pred_w rows " + std::to_string(expected));
  }
  Var<T> hidden = ops::relu(linear(p, o_l, "head/fc1_w", "head/fc1_b"));
  Var<T> o1 = linear(p, hidden, "head/fc2_w", "head/fc2_b") + o_l;
  Var<T> y = linear(p, ops::reshape(o1, {n, steps * d}), "head/pred_w", "head/pred_b");
  return ops::reshape(y, {n});
}

#define TCGPN_INSTANTIATE_MODEL(T)                                                                            \
  template ParamStore<T> init_params<T>(const ModelConfig&, std::uint64_t);                                   \
  template ModelInput<T> make_model_input<T>(const MaskedSample&);                                            \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);                                        \
  template Tensor<T> gaussian_log_bias<T>(std::size_t, double);                                               \
  template Var<T> fuse_and_position(ParamBinding<T>&, const Var<T>&, const ModelConfig&);                     \
  template Var<T> gat_forward(ParamBinding<T>&, const Var<T>&, const Tensor<T>&, const ModelConfig&, Tensor<T>*); \
  template Var<T> tgm_block(ParamBinding<T>&, const std::string&, const Var<T>&, const Tensor<T>&, std::size_t); \
  template EncoderOutput<T> encoder_forward(ParamBinding<T>&, const ModelInput<T>&, const ModelConfig&, bool);  \
  template Var<T> temporal_decoder(ParamBinding<T>&, const Var<T>&, const ModelConfig&);                      \
  template Var<T> adjacency_decoder(ParamBinding<T>&, const Var<T>&);                                         \
  template Var<T> finetune_head(ParamBinding<T>&, const Var<T>&);

TCGPN_INSTANTIATE_MODEL(float)
TCGPN_INSTANTIATE_MODEL(double)

}  // namespace tcgpn
