#pragma once

// Binary checkpoint. All integers and floats little-endian.
//
//   offset  size  field
//   0       8     magic "CIRCUSCK"
//   8       4     u32 schema version (1)
//   12      4     u32 scalar width in bytes (4 or 8)
//   16      8     u64 training iteration
//   24      8     u64 config digest
//   32      4     u32 config text length L
//   36      L     config JSON text (UTF-8)
//   then, for head in (policy, value):
//           4     u32 layer-size count K
//           4*K   u32 layer sizes, input first
//   then    4     u32 log-std length
//   then    payload: for each head and layer, weight row-major (out x in)
//           followed by bias; then log std; each scalar at the stated width
//   last    8     u64 FNV-1a 64 checksum of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "circus/errors.hpp"
#include "circus/nn.hpp"

namespace circus::nn {

inline constexpr char kCheckpointMagic[8] = {'C', 'I', 'R', 'C', 'U', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct CheckpointMeta {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t scalar_width = 4;
  std::uint64_t iteration = 0;
  std::uint64_t config_digest = 0;
  std::string config_text;
  std::vector<int> policy_sizes;
  std::vector<int> value_sizes;
  int log_std_size = 0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename Scalar>
  void scalar(Scalar s) {
    if constexpr (sizeof(Scalar) == 4) {
      put_le(std::bit_cast<std::uint32_t>(s));
    } else {
      put_le(std::bit_cast<std::uint64_t>(s));
    }
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  template <typename U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : buf_(b) {}
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  double scalar(std::uint32_t width) {
    if (width == 4) return static_cast<double>(std::bit_cast<float>(u32()));
    return std::bit_cast<double>(u64());
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw CheckpointError("checkpoint: truncated file");
  }
  template <typename U>
  U get_le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

inline std::vector<int> read_sizes(ByteReader& r) {
  const std::uint32_t k = r.u32();
  if (k < 2 || k > 64) throw CheckpointError("checkpoint: corrupt header (layer count)");
  std::vector<int> s(k);
  for (auto& v : s) {
    const std::uint32_t x = r.u32();
    if (x == 0 || x > (1u << 20)) throw CheckpointError("checkpoint: corrupt header (layer size)");
    v = static_cast<int>(x);
  }
  return s;
}

}  // namespace detail

template <typename Scalar>
std::vector<char> serialize_checkpoint(const ActorCritic<Scalar>& p, std::uint64_t iteration,
                                       std::uint64_t config_digest,
                                       const std::string& config_text) {
  static_assert(sizeof(Scalar) == 4 || sizeof(Scalar) == 8);
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(Scalar));
  w.u64(iteration);
  w.u64(config_digest);
  w.u32(static_cast<std::uint32_t>(config_text.size()));
  w.raw(config_text.data(), config_text.size());
  for (const Mlp<Scalar>* m : {&p.policy, &p.value}) {
    const auto s = m->sizes();
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (int v : s) w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(p.log_std.size()));
  for (const Mlp<Scalar>* m : {&p.policy, &p.value}) {
    for (const auto& l : m->layers()) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.scalar(l.weight(r, c));
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.scalar(l.bias(r));
    }
  }
  for (Eigen::Index i = 0; i < p.log_std.size(); ++i) w.scalar(p.log_std(i));
  std::vector<char> out = w.bytes();
  const std::uint64_t sum = fnv1a64(out.data(), out.size());
  detail::ByteWriter tail;
  tail.u64(sum);
  out.insert(out.end(), tail.bytes().begin(), tail.bytes().end());
  return out;
}

/// Parses and validates a checkpoint. Parameters are converted to `Scalar`
/// when the stored width differs.
template <typename Scalar>
ActorCritic<Scalar> deserialize_checkpoint(const std::vector<char>& bytes,
                                           CheckpointMeta* meta_out = nullptr) {
  if (bytes.size() < 8 + 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError("checkpoint: corrupt header (bad magic)");
  }
  detail::ByteReader r(bytes);
  r.str(8);
  CheckpointMeta meta;
  meta.version = r.u32();
  if (meta.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported schema version " + std::to_string(meta.version));
  }
  meta.scalar_width = r.u32();
  if (meta.scalar_width != 4 && meta.scalar_width != 8) {
    throw CheckpointError("checkpoint: corrupt header (scalar width)");
  }
  meta.iteration = r.u64();
  meta.config_digest = r.u64();
  const std::uint32_t len = r.u32();
  meta.config_text = r.str(len);
  meta.policy_sizes = detail::read_sizes(r);
  meta.value_sizes = detail::read_sizes(r);
  meta.log_std_size = static_cast<int>(r.u32());
  if (meta.value_sizes.back() != 1 || meta.log_std_size != meta.policy_sizes.back() ||
      meta.value_sizes.front() != meta.policy_sizes.front()) {
    throw CheckpointError("checkpoint: inconsistent head shapes");
  }

  ActorCritic<Scalar> p;
  p.policy = Mlp<Scalar>(meta.policy_sizes);
  p.value = Mlp<Scalar>(meta.value_sizes);
  p.log_std = Vector<Scalar>::Zero(meta.log_std_size);
  const std::size_t payload = (p.num_params()) * meta.scalar_width;
  if (r.remaining() != payload + 8) {
    throw CheckpointError("checkpoint: payload size does not match the header shapes");
  }
  for (Mlp<Scalar>* m : {&p.policy, &p.value}) {
    for (auto& l : m->layers()) {
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
          l.weight(i, j) = static_cast<Scalar>(r.scalar(meta.scalar_width));
      for (Eigen::Index i = 0; i < l.bias.size(); ++i)
        l.bias(i) = static_cast<Scalar>(r.scalar(meta.scalar_width));
    }
  }
  for (Eigen::Index i = 0; i < p.log_std.size(); ++i) {
    p.log_std(i) = static_cast<Scalar>(r.scalar(meta.scalar_width));
  }
  const std::size_t body = r.pos();
  const std::uint64_t stored = r.u64();
  if (stored != fnv1a64(bytes.data(), body)) {
    throw CheckpointError("checkpoint: checksum mismatch");
  }
  if (!p.all_finite()) throw CheckpointError("checkpoint: non-finite parameters");
  if (meta_out) *meta_out = std::move(meta);
  return p;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const ActorCritic<Scalar>& p,
                     std::uint64_t iteration, std::uint64_t config_digest,
                     const std::string& config_text) {
  const std::vector<char> bytes = serialize_checkpoint(p, iteration, config_digest, config_text);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::ios_base::failure("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::ios_base::failure("write failed: " + path);
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

template <typename Scalar>
ActorCritic<Scalar> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  return deserialize_checkpoint<Scalar>(read_file_bytes(path), meta);
}

}  // namespace circus::nn
