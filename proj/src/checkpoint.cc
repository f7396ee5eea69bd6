#include "avsa/checkpoint.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "avsa/error.h"

namespace avsa {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const std::vector<ConstNamedTensor>& entries) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, tensor] : entries) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(tensor->shape.size()));
    for (size_t d : tensor->shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : tensor->data) {
      const float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

TensorMap deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw DataError("not an AVSA checkpoint");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  TensorMap map;
  while (!r.done()) {
    const std::string name = r.str(r.u32());
    const uint32_t rank = r.u32();
    std::vector<size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    for (double& v : t.data) {
      const uint32_t bits = r.u32();
      float f;
      std::memcpy(&f, &bits, 4);
      v = f;
    }
    if (!map.emplace(name, std::move(t)).second) throw DataError("duplicate checkpoint entry " + name);
  }
  return map;
}

void save_checkpoint(const std::string& path, const std::vector<ConstNamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(entries);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for " + path);
}

TensorMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void take_tensor(const TensorMap& map, const std::string& name, Tensor& dst) {
  auto it = map.find(name);
  if (it == map.end()) throw DataError("checkpoint lacks entry " + name);
  if (it->second.shape != dst.shape)
    throw DataError("checkpoint entry " + name + " has shape " + it->second.shape_string() +
                    ", expected " + dst.shape_string());
  dst.data = it->second.data;
}

}  // namespace avsa
