#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dsml/common.hpp"
#include "dsml/tensor.hpp"
#include "dsml/trainer.hpp"

namespace dsml {

// Distinct checkpoint failure kinds.
class CheckpointFormatError : public DataError {
 public:
  explicit CheckpointFormatError(const std::string& m) : DataError(m) {}
};
class CheckpointVersionError : public DataError {
 public:
  explicit CheckpointVersionError(const std::string& m) : DataError(m) {}
};
class CheckpointTruncatedError : public DataError {
 public:
  explicit CheckpointTruncatedError(const std::string& m) : DataError(m) {}
};
class CheckpointChecksumError : public DataError {
 public:
  explicit CheckpointChecksumError(const std::string& m) : DataError(m) {}
};

namespace detail {

inline constexpr char kMagic[4] = {'D', 'S', 'M', 'M'};
inline constexpr std::uint32_t kSupportedVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }

  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) {
    if (pos_ + n > buf_.size())
      throw CheckpointTruncatedError("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using namespace detail;
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, ck.version);
  put_u64(out, ck.epoch);
  put_u64(out, ck.config_json.size());
  out += ck.config_json;
  put_u64(out, ck.rng_state.size());
  out += ck.rng_state;
  put_u64(out, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.ndim());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.flat()) put_f64(out, v);
  }
  put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  using namespace detail;
  if (buf.size() < 8)
    throw CheckpointTruncatedError("checkpoint: file too short");
  const std::uint64_t stored =
      Reader(buf.substr(buf.size() - 8)).u64();
  if (fnv1a(buf.data(), buf.size() - 8) != stored)
    throw CheckpointChecksumError("checkpoint: checksum mismatch");

  Reader r(buf);
  const std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw CheckpointFormatError("checkpoint: bad magic bytes");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kSupportedVersion)
    throw CheckpointVersionError("checkpoint: unsupported format version " +
                                 std::to_string(ck.version));
  ck.epoch = r.u64();
  ck.config_json = r.bytes(r.u64());
  ck.rng_state = r.bytes(r.u64());
  const std::uint64_t n_tensors = r.u64();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.bytes(r.u64());
    const std::uint64_t ndim = r.u64();
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < ndim; ++d) {
      shape[d] = r.u64();
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    for (std::size_t k = 0; k < numel; ++k) data[k] = r.f64();
    ck.tensors.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("save_checkpoint: cannot open " + path);
  const std::string buf = serialize_checkpoint(ck);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

}  // namespace dsml
