#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcgpn/augment.hpp"
#include "tcgpn/autograd.hpp"
#include "tcgpn/kv.hpp"
#include "tcgpn/params.hpp"

namespace tcgpn {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t gat_heads = 4;
  std::size_t gat_dim = 32;
  std::size_t tgm_blocks = 3;
  std::size_t tgm_heads = 8;
  double sigma_h = 0;  // 0 selects window / 4
  std::size_t window = 30;
  std::size_t n_features = 3;
  double leaky_slope = 0.2;
  std::size_t adj_dim = 32;
  std::size_t ffn_dim = 256;
  std::size_t head_hidden = 256;
  std::size_t decoder_blocks = 1;
  bool use_gat = true;

  double resolved_sigma() const;
  void validate() const;
  KeyValues to_kv() const;
  /// Reads the model keys of `kv`; other keys are ignored, missing ones keep defaults.
  static ModelConfig from_kv(const KeyValues& kv);
  bool operator==(const ModelConfig&) const = default;
};

/// Every learnable tensor of the model, by path.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

bool is_head_path(const std::string& path);
inline bool is_encoder_path(const std::string& path) {
  return path.starts_with("fuse/") || path.starts_with("gat/") || path.starts_with("proj/") ||
         path.starts_with("enc/");
}

template <std::floating_point T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws CheckpointError when the checkpoint's config or manifest disagree with `cfg`.
void validate_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg);

/// Tensor inputs for one forward pass.
template <std::floating_point T>
struct ModelInput {
  Tensor<T> x;             // [N, T, F], masked positions already zeroed
  Tensor<T> non_neighbor;  // [N, N], 1 where j is outside N_i and j != i
};

/// GAT neighbourhoods come from the connectivity of the (masked) graph only.
template <std::floating_point T>
ModelInput<T> make_model_input(const MaskedSample& sample);

template <std::floating_point T>
struct EncoderOutput {
  Var<T> o_l;                             // [N, T, d_model]
  std::optional<Tensor<T>> gat_attention; // [T, K, N, N] when requested
};

/// Sinusoidal table [steps, channels]: sin on even channels, cos on odd.
template <std::floating_point T>
Tensor<T> positional_encoding(std::size_t steps, std::size_t channels);

/// m_ij = exp(-(j-i)^2 / (2 sigma^2)) for j <= i, 0 for j > i.
Tensor<double> gaussian_mask(std::size_t steps, double sigma);

/// log of gaussian_mask, added to attention scores so that softmax(s + log m)
/// = exp(s) m / sum exp(s) m. Future positions are -inf; sigma = inf gives a
/// plain causal mask.
template <std::floating_point T>
Tensor<T> gaussian_log_bias(std::size_t steps, double sigma);

template <std::floating_point T>
Var<T> fuse_and_position(ParamBinding<T>& p, const Var<T>& x, const ModelConfig& cfg);

template <std::floating_point T>
Var<T> gat_forward(ParamBinding<T>& p, const Var<T>& xhat, const Tensor<T>& non_neighbor, const ModelConfig& cfg,
                   Tensor<T>* attention = nullptr);

template <std::floating_point T>
Var<T> tgm_block(ParamBinding<T>& p, const std::string& prefix, const Var<T>& z, const Tensor<T>& log_bias,
                 std::size_t n_heads);

template <std::floating_point T>
EncoderOutput<T> encoder_forward(ParamBinding<T>& p, const ModelInput<T>& input, const ModelConfig& cfg,
                                 bool record_attention = false);

template <std::floating_point T>
Var<T> temporal_decoder(ParamBinding<T>& p, const Var<T>& o_l, const ModelConfig& cfg);

template <std::floating_point T>
Var<T> adjacency_decoder(ParamBinding<T>& p, const Var<T>& o_l);

template <std::floating_point T>
Var<T> finetune_head(ParamBinding<T>& p, const Var<T>& o_l);

}  // namespace tcgpn
