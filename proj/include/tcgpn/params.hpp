#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tcgpn/autograd.hpp"
#include "tcgpn/tensor.hpp"

namespace tcgpn {

template <std::floating_point T>
using Grads = std::map<std::string, Tensor<T>>;

/// Learnable parameters keyed by hierarchical path ("enc/block0/wq").
/// Enumeration is lexicographic by path.
template <std::floating_point T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : rng_seed(seed) {}

  void add(const std::string& path, Tensor<T> value);
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  const Tensor<T>& get(const std::string& path) const;
  Tensor<T>& get_mut(const std::string& path);

  const std::map<std::string, Tensor<T>>& entries() const { return entries_; }
  std::vector<std::string> paths() const;
  std::size_t parameter_count() const;

  template <std::floating_point U>
  ParamStore<U> cast() const {
    ParamStore<U> out(rng_seed);
    for (const auto& [path, t] : entries_) out.add(path, t.template cast<U>());
    return out;
  }

  std::uint64_t rng_seed = 0;

 private:
  std::map<std::string, Tensor<T>> entries_;
};

using PathFilter = std::function<bool(const std::string&)>;

inline bool all_paths(const std::string&) { return true; }

/// Lazily places parameters onto a tape. Paths accepted by `trainable`
/// become differentiable leaves; the rest enter as constants.
template <std::floating_point T>
class ParamBinding {
 public:
  ParamBinding(Tape<T>& tape, const ParamStore<T>& store, PathFilter trainable = all_paths)
      : tape_(tape), store_(store), trainable_(std::move(trainable)) {}

  Var<T> operator()(const std::string& path);
  Tape<T>& tape() { return tape_; }
  const ParamStore<T>& store() const { return store_; }

  /// Gradients of bound, trainable parameters after `tape().backward(...)`.
  Grads<T> gradients() const;

 private:
  Tape<T>& tape_;
  const ParamStore<T>& store_;
  PathFilter trainable_;
  std::map<std::string, Var<T>> bound_;
};

template <std::floating_point T>
using LossFn = std::function<Var<T>(ParamBinding<T>&)>;

template <std::floating_point T>
struct ForwardBackward {
  T loss = 0;
  Grads<T> grads;
};

/// Evaluates `loss_fn` on a fresh tape and back-propagates.
template <std::floating_point T>
ForwardBackward<T> forward_backward(const LossFn<T>& loss_fn, const ParamStore<T>& params,
                                    const PathFilter& trainable = all_paths);

/// Evaluates the loss without recording gradients.
template <std::floating_point T>
T evaluate_loss(const LossFn<T>& loss_fn, const ParamStore<T>& params);

// Fan-in scaled uniform: U(-1/sqrt(rows), 1/sqrt(rows)) for a [rows, cols] weight.
template <std::floating_point T>
Tensor<T> init_weight(Shape shape, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "TCGPN001"
//   u64 config length, config text (UTF-8 key = value lines)
//   u64 entry count
//   per entry: u32 path length, path, u32 rank, u64 dims[rank],
//              u8 dtype (1 = f32, 2 = f64), u64 byte offset into the data block
//   data block: raw little-endian values
// ---------------------------------------------------------------------------

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct ManifestEntry {
  std::string path;
  Shape shape;
  DType dtype = DType::F32;
  std::uint64_t offset = 0;
};

struct Checkpoint {
  std::string config_text;
  std::vector<ManifestEntry> manifest;
  ParamStore<float> params;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params, const std::string& config_text);

Checkpoint load_checkpoint(const std::string& path);

/// Byte-level encoding used by save_checkpoint; exposed for hashing and tests.
template <std::floating_point T>
std::string encode_checkpoint(const ParamStore<T>& params, const std::string& config_text);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace tcgpn
