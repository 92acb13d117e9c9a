#include "pathscan/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "pathscan/error.hpp"

namespace pathscan {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 0;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > b_.size()) fail(ErrorKind::kFormat, "checkpoint truncated");
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const std::uint8_t* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, b.data(), static_cast<uInt>(b.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const NamedArray& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedArray& Checkpoint::at(const std::string& name) const {
  const NamedArray* t = find(name);
  if (t == nullptr) fail(ErrorKind::kFormat, "checkpoint has no tensor '" + name + "'");
  return *t;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.metadata.size()));
  w.bytes(ck.metadata.data(), ck.metadata.size());
  std::uint64_t offset = 0;
  for (const NamedArray& t : ck.tensors) {
    if (t.data.size() != ad::numel(t.shape)) {
      fail(ErrorKind::kShape, "checkpoint tensor '" + t.name + "' size does not match its shape");
    }
    w.le<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint8_t>(kFloat32);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.le<std::uint64_t>(offset);
    offset += 4 * t.data.size();
  }
  w.le<std::uint64_t>(offset);
  for (const NamedArray& t : ck.tensors) {
    for (float f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      w.le<std::uint32_t>(bits);
    }
  }
  w.le<std::uint32_t>(crc_of(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::kFormat, "not a PSCK checkpoint");
  }
  const std::size_t body = bytes.size() - 4;
  Reader crc_reader(bytes.subspan(body));
  if (crc_reader.le<std::uint32_t>() != crc_of(bytes.first(body))) {
    fail(ErrorKind::kFormat, "checkpoint CRC mismatch");
  }
  Reader r(bytes.first(body));
  r.take(4);
  if (r.le<std::uint16_t>() != kVersion) fail(ErrorKind::kFormat, "unsupported PSCK version");
  const std::uint32_t count = r.le<std::uint32_t>();
  const std::uint32_t meta_len = r.le<std::uint32_t>();
  Checkpoint ck;
  const std::uint8_t* meta = r.take(meta_len);
  ck.metadata.assign(reinterpret_cast<const char*>(meta), meta_len);
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray t;
    const std::uint16_t name_len = r.le<std::uint16_t>();
    const std::uint8_t* name = r.take(name_len);
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    if (r.le<std::uint8_t>() != kFloat32) fail(ErrorKind::kFormat, "unsupported dtype in checkpoint");
    const std::uint8_t rank = r.le<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.le<std::uint32_t>());
    offsets.push_back(r.le<std::uint64_t>());
    ck.tensors.push_back(std::move(t));
  }
  const std::uint64_t payload_len = r.le<std::uint64_t>();
  const std::size_t payload_start = r.pos();
  if (payload_start + payload_len != body) fail(ErrorKind::kFormat, "checkpoint payload length mismatch");
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    NamedArray& t = ck.tensors[i];
    const std::size_t n = ad::numel(t.shape);
    if (offsets[i] + 4 * n > payload_len) fail(ErrorKind::kFormat, "checkpoint tensor out of payload");
    const std::uint8_t* p = bytes.data() + payload_start + offsets[i];
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits = static_cast<std::uint32_t>(p[4 * k]) |
                           (static_cast<std::uint32_t>(p[4 * k + 1]) << 8) |
                           (static_cast<std::uint32_t>(p[4 * k + 2]) << 16) |
                           (static_cast<std::uint32_t>(p[4 * k + 3]) << 24);
      std::memcpy(&t.data[k], &bits, 4);
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kInvalidInput, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kInvalidInput, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

namespace {

NamedArray to_array(const std::string& name, const ad::Shape& shape, std::span<const double> v) {
  NamedArray a{name, shape, {}};
  a.data.reserve(v.size());
  for (double x : v) a.data.push_back(static_cast<float>(x));
  return a;
}

void copy_into(const NamedArray& a, std::span<double> dst, const ad::Shape& expect) {
  if (a.shape != expect) {
    fail(ErrorKind::kShape, "checkpoint tensor '" + a.name + "' has shape " + ad::shape_str(a.shape) +
                                ", expected " + ad::shape_str(expect));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a.data[i];
}

}  // namespace

void store_params(Checkpoint& ck, const nn::ParamStore& params, const nn::AdamState* adam) {
  for (const auto& [name, t] : params.entries()) ck.tensors.push_back(to_array(name, t.shape(), t.values()));
  if (adam == nullptr) return;
  ck.tensors.push_back({"adam.step", {1}, {static_cast<float>(adam->step)}});
  for (const auto& [name, t] : params.entries()) {
    auto it = adam->moments.find(name);
    std::vector<double> zeros(t.numel(), 0.0);
    const auto& m = it != adam->moments.end() && !it->second.m.empty() ? it->second.m : zeros;
    const auto& v = it != adam->moments.end() && !it->second.v.empty() ? it->second.v : zeros;
    ck.tensors.push_back(to_array("adam.m/" + name, t.shape(), m));
    ck.tensors.push_back(to_array("adam.v/" + name, t.shape(), v));
  }
}

void restore_params(const Checkpoint& ck, nn::ParamStore& params, nn::AdamState* adam) {
  for (auto& [name, t] : params.entries()) copy_into(ck.at(name), t.mutable_values(), t.shape());
  if (adam == nullptr || ck.find("adam.step") == nullptr) return;
  adam->step = static_cast<std::int64_t>(ck.at("adam.step").data.at(0));
  adam->moments.clear();
  for (auto& [name, t] : params.entries()) {
    nn::AdamMoments mom;
    mom.m.resize(t.numel());
    mom.v.resize(t.numel());
    copy_into(ck.at("adam.m/" + name), mom.m, t.shape());
    copy_into(ck.at("adam.v/" + name), mom.v, t.shape());
    adam->moments[name] = std::move(mom);
  }
}

}  // namespace pathscan
