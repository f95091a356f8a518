#include "falb/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace falb {

namespace {

constexpr char kMagic[5] = {'F', 'A', 'L', 'B', '1'};
constexpr uint32_t kVersion = 1;

struct Writer {
  std::vector<uint8_t> bytes;

  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void str(const std::string& s) {
    if (s.size() > UINT16_MAX) throw std::invalid_argument("checkpoint: name too long");
    u16(static_cast<uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor_values(const Tensor<float>& t) {
    for (int64_t i = 0; i < t.numel(); ++i) f32(t[i]);
  }
};

struct Reader {
  std::vector<uint8_t> bytes;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("checkpoint: " + why + " at offset " + std::to_string(pos));
  }
  void need(size_t n) const {
    if (pos + n > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated (need " + std::to_string(n) +
                               " bytes at offset " + std::to_string(pos) + ")");
    }
  }
  void raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  uint16_t u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(bytes[pos + i]) << (8 * i);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

uint64_t fnv1a(const uint8_t* p, size_t n) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& manifest_json,
                     const ParameterStore<float>& store, const train::TrainState<float>& state) {
  Writer w;
  w.raw(kMagic, 5);
  w.u32(kVersion);
  w.u64(manifest_json.size());
  w.raw(manifest_json.data(), manifest_json.size());

  w.u32(static_cast<uint32_t>(store.tensors.size()));
  for (const auto& [name, tensor] : store.tensors) {
    w.str(name);
    w.bytes.push_back(store.is_frozen(name) ? 1 : 0);
    w.bytes.push_back(static_cast<uint8_t>(tensor.ndim()));
    for (int64_t d = 0; d < tensor.ndim(); ++d) w.u64(static_cast<uint64_t>(tensor.extent(d)));
    w.tensor_values(tensor);
  }
  w.u32(static_cast<uint32_t>(state.m.size()));
  for (const auto& [name, m] : state.m) {
    w.str(name);
    w.tensor_values(m);
    w.tensor_values(state.v.at(name));
  }
  w.u64(static_cast<uint64_t>(state.step));
  w.u64(fnv1a(w.bytes.data(), w.bytes.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  Reader r;
  r.bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (r.bytes.size() < 5 + 4 + 8 + 8) r.fail("file too small");
  // checksum covers everything before the trailing u64
  uint64_t stored_sum = 0;
  {
    size_t tail = r.bytes.size() - 8;
    for (int i = 0; i < 8; ++i) stored_sum |= static_cast<uint64_t>(r.bytes[tail + i]) << (8 * i);
    if (fnv1a(r.bytes.data(), tail) != stored_sum) {
      r.pos = tail;
      r.fail("checksum mismatch (corrupted file)");
    }
  }

  char magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, kMagic, 5) != 0) {
    r.pos = 0;
    r.fail("bad magic");
  }
  uint32_t version = r.u32();
  if (version != kVersion)
    r.fail("unsupported format version " + std::to_string(version));

  CheckpointData out;
  uint64_t manifest_len = r.u64();
  r.need(manifest_len);
  out.manifest_json.assign(reinterpret_cast<const char*>(r.bytes.data() + r.pos), manifest_len);
  r.pos += manifest_len;

  uint32_t tensor_count = r.u32();
  for (uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = r.str();
    r.need(2);
    bool frozen = r.bytes[r.pos++] != 0;
    uint8_t ndim = r.bytes[r.pos++];
    Shape shape(ndim);
    for (uint8_t d = 0; d < ndim; ++d) shape[d] = static_cast<int64_t>(r.u64());
    Tensor<float> t(shape);
    for (int64_t k = 0; k < t.numel(); ++k) t[k] = r.f32();
    out.store.tensors.emplace(name, std::move(t));
    if (frozen) out.store.frozen.insert(name);
  }
  uint32_t moment_count = r.u32();
  for (uint32_t i = 0; i < moment_count; ++i) {
    std::string name = r.str();
    auto it = out.store.tensors.find(name);
    if (it == out.store.tensors.end()) r.fail("moment for unknown tensor " + name);
    Tensor<float> m(it->second.shape()), v(it->second.shape());
    for (int64_t k = 0; k < m.numel(); ++k) m[k] = r.f32();
    for (int64_t k = 0; k < v.numel(); ++k) v[k] = r.f32();
    out.state.m.emplace(name, std::move(m));
    out.state.v.emplace(name, std::move(v));
  }
  out.state.step = static_cast<int64_t>(r.u64());
  return out;
}

}  // namespace falb
