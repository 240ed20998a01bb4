#pragma once

#include <spun/geometry/io.hpp>
#include <spun/nn/layers.hpp>

#include <zlib.h>

#include <bit>
#include <cstring>

namespace spun::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr std::string_view kCkptMagic = "SPUN-CK v1";

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw Error(ErrorCode::ChecksumMismatch, "checkpoint truncated");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::ChecksumMismatch, "checkpoint truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace detail

// Magic, tensor count, then per tensor: name length + bytes, rank, dims,
// row-major f64 payload. A CRC32 of everything before it closes the file.
inline std::string ckpt_bytes(const ParamStore& store) {
  std::string out(kCkptMagic);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, e] : store.entries()) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Mat& v = e.tensor.value();
    detail::put<std::uint32_t>(out, 2);
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(v.rows()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(v.cols()));
    out.append(reinterpret_cast<const char*>(v.data()), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  detail::put<std::uint32_t>(out, detail::crc32_of(out));
  return out;
}

// Fills an empty store, or overwrites a populated one whose names and shapes match.
inline void load_ckpt_bytes(ParamStore& store, std::string_view data) {
  const auto magic_len = kCkptMagic.size();
  const std::string_view prefix = kCkptMagic.substr(0, magic_len - 1);  // "SPUN-CK v"
  if (data.substr(0, std::min(data.size(), prefix.size())) != prefix.substr(0, std::min(data.size(), prefix.size())))
    throw Error(ErrorCode::VersionMismatch, "not a SPUN-CK checkpoint");
  if (data.size() >= magic_len && data.substr(0, magic_len) != kCkptMagic)
    throw Error(ErrorCode::VersionMismatch, "unsupported checkpoint version '" + std::string(data.substr(0, magic_len)) + "'");
  if (data.size() < magic_len + 8) throw Error(ErrorCode::ChecksumMismatch, "checkpoint truncated");
  const std::string_view body = data.substr(0, data.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, data.data() + body.size(), 4);
  if (detail::crc32_of(body) != stored) throw Error(ErrorCode::ChecksumMismatch, "checkpoint CRC32 mismatch");

  detail::Reader in(body.substr(magic_len));
  const auto count = in.get<std::uint32_t>();
  std::vector<std::pair<std::string, Mat>> loaded;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name(in.bytes(in.get<std::uint32_t>()));
    const auto rank = in.get<std::uint32_t>();
    if (rank < 1 || rank > 2) throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[r] = in.get<std::uint64_t>();
    if (rank == 1) std::swap(dims[0], dims[1]);
    Mat m(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
    auto payload = in.bytes(sizeof(double) * static_cast<std::size_t>(m.size()));
    std::memcpy(m.data(), payload.data(), payload.size());
    loaded.emplace_back(std::move(name), std::move(m));
  }
  if (!in.done()) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after the last tensor");

  if (store.empty()) {
    for (auto& [name, m] : loaded) store.add(name, std::move(m));
    return;
  }
  if (loaded.size() != store.size()) throw Error(ErrorCode::ShapeMismatch, "checkpoint has a different parameter set");
  for (auto& [name, m] : loaded) {
    if (!store.contains(name)) throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor '" + name + "' is not in the model");
    Tensor t = store.get(name);
    if (t.rows() != m.rows() || t.cols() != m.cols()) throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' has a different shape");
    t.value() = m;
  }
}

inline void save_ckpt(const ParamStore& store, const std::filesystem::path& path) { write_file(path, ckpt_bytes(store)); }

inline void load_ckpt(ParamStore& store, const std::filesystem::path& path) { load_ckpt_bytes(store, read_file(path)); }

}  // namespace spun::nn
