#include "tcgpn/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tcgpn {

template <std::floating_point T>
void ParamStore<T>::add(const std::string& path, Tensor<T> value) {
  if (path.empty()) throw std::invalid_argument("parameter path must be non-empty");
  value.requires_grad = true;
  if (!entries_.emplace(path, std::move(value)).second) {
    throw std::invalid_argument("duplicate parameter path: " + path);
  }
}

template <std::floating_point T>
const Tensor<T>& ParamStore<T>::get(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

template <std::floating_point T>
Tensor<T>& ParamStore<T>::get_mut(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return it->second;
}

template <std::floating_point T>
std::vector<std::string> ParamStore<T>::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& kv : entries_) out.push_back(kv.first);
  return out;
}

template <std::floating_point T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& kv : entries_) n += kv.second.size();
  return n;
}

template <std::floating_point T>
Var<T> ParamBinding<T>::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  const Tensor<T>& value = store_.get(path);
  Var<T> v = trainable_(path) ? tape_.variable(value) : tape_.constant(value);
  bound_.emplace(path, v);
  return v;
}

template <std::floating_point T>
Grads<T> ParamBinding<T>::gradients() const {
  Grads<T> out;
  for (const auto& [path, v] : bound_) {
    if (!v.requires_grad()) continue;
    const Tensor<T>* g = tape_.grad(v);
    out.emplace(path, g ? *g : Tensor<T>(v.shape()));
  }
  return out;
}

template <std::floating_point T>
ForwardBackward<T> forward_backward(const LossFn<T>& loss_fn, const ParamStore<T>& params,
                                    const PathFilter& trainable) {
  Tape<T> tape;
  ParamBinding<T> bind(tape, params, trainable);
  Var<T> loss = loss_fn(bind);
  if (loss.value().size() != 1) {
    throw ShapeError("loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  tape.backward(loss);
  return {loss.value()[0], bind.gradients()};
}

template <std::floating_point T>
T evaluate_loss(const LossFn<T>& loss_fn, const ParamStore<T>& params) {
  Tape<T> tape;
  ParamBinding<T> bind(tape, params, [](const std::string&) { return false; });
  Var<T> loss = loss_fn(bind);
  if (loss.value().size() != 1) {
    throw ShapeError("loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  return loss.value()[0];
}

template <std::floating_point T>
Tensor<T> init_weight(Shape shape, std::mt19937_64& rng) {
  if (shape.empty()) throw ShapeError("init_weight needs at least one axis");
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.front()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> out(std::move(shape));
  for (T& v : out.storage()) v = static_cast<T>(dist(rng));
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBinding<float>;
template class ParamBinding<double>;
template ForwardBackward<float> forward_backward(const LossFn<float>&, const ParamStore<float>&, const PathFilter&);
template ForwardBackward<double> forward_backward(const LossFn<double>&, const ParamStore<double>&, const PathFilter&);
template float evaluate_loss(const LossFn<float>&, const ParamStore<float>&);
template double evaluate_loss(const LossFn<double>&, const ParamStore<double>&);
template Tensor<float> init_weight(Shape, std::mt19937_64&);
template Tensor<double> init_weight(Shape, std::mt19937_64&);

// ---------------------------------------------------------------------------
// Checkpoint encoding
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[] = "TCGPN001";
constexpr std::size_t kMagicLen = 8;

template <std::unsigned_integral U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <std::unsigned_integral U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <std::floating_point T>
std::string encode_checkpoint(const ParamStore<T>& params, const std::string& config_text) {
  constexpr DType dtype = sizeof(T) == 4 ? DType::F32 : DType::F64;
  std::string out(kMagic, kMagicLen);
  put_le<std::uint64_t>(out, config_text.size());
  out += config_text;
  put_le<std::uint64_t>(out, params.entries().size());
  std::uint64_t offset = 0;
  for (const auto& [path, t] : params.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(path.size()));
    out += path;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    out.push_back(static_cast<char>(dtype));
    put_le<std::uint64_t>(out, offset);
    offset += t.size() * sizeof(T);
  }
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (const auto& [path, t] : params.entries()) {
    for (T v : t.storage()) put_le<Bits>(out, std::bit_cast<Bits>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw CheckpointError("not a checkpoint: bad magic bytes");
  }
  Reader r(bytes);
  r.get_string(kMagicLen);
  Checkpoint ck;
  ck.config_text = r.get_string(r.get<std::uint64_t>());
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < count; ++e) {
    ManifestEntry m;
    m.path = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) m.shape.push_back(r.get<std::uint64_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt != 1 && dt != 2) throw CheckpointError("unknown dtype for " + m.path);
    m.dtype = static_cast<DType>(dt);
    m.offset = r.get<std::uint64_t>();
    ck.manifest.push_back(std::move(m));
  }
  const std::size_t data_start = r.pos();
  for (const auto& m : ck.manifest) {
    const std::size_t n = numel(m.shape);
    const std::size_t width = m.dtype == DType::F32 ? 4 : 8;
    if (data_start + m.offset + n * width > bytes.size()) {
      throw CheckpointError("checkpoint data truncated for " + m.path);
    }
    Tensor<float> t(m.shape);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data() + data_start + m.offset);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < width; ++b) bits |= static_cast<std::uint64_t>(p[i * width + b]) << (8 * b);
      t[i] = width == 4 ? std::bit_cast<float>(static_cast<std::uint32_t>(bits))
                        : static_cast<float>(std::bit_cast<double>(bits));
    }
    ck.params.add(m.path, std::move(t));
  }
  return ck;
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params, const std::string& config_text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  const std::string bytes = encode_checkpoint(params, config_text);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

template std::string encode_checkpoint(const ParamStore<float>&, const std::string&);
template std::string encode_checkpoint(const ParamStore<double>&, const std::string&);
template void save_checkpoint(const std::string&, const ParamStore<float>&, const std::string&);
template void save_checkpoint(const std::string&, const ParamStore<double>&, const std::string&);

}  // namespace tcgpn
