#include "uniclin/ad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "uniclin/error.hpp"

namespace uniclin::ad {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    need(n * 4);
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::kSchema, "checkpoint: truncated archive");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Archive::put(const std::string& prefix, const ParamStore& store) {
  for (const auto& [name, t] : store) {
    tensors.insert_or_assign(prefix + "/" + name, Tensor(t.shape(), {t.values().begin(), t.values().end()}));
  }
}

void Archive::get(const std::string& prefix, ParamStore& store) const {
  for (auto& [name, t] : store) {
    auto it = tensors.find(prefix + "/" + name);
    if (it == tensors.end()) fail(ErrorKind::kSchema, "checkpoint: missing tensor " + prefix + "/" + name);
    if (it->second.shape() != t.shape()) {
      fail(ErrorKind::kSchema, "checkpoint: shape mismatch for " + prefix + "/" + name + ": " +
                                   shape_str(it->second.shape()) + " vs " + shape_str(t.shape()));
    }
    std::copy(it->second.values().begin(), it->second.values().end(), t.values().begin());
  }
}

bool Archive::has_prefix(const std::string& prefix) const {
  auto it = tensors.lower_bound(prefix + "/");
  return it != tensors.end() && it->first.rfind(prefix + "/", 0) == 0;
}

std::string Archive::serialize() const {
  std::string out = "UCKP";
  put_u32(out, kVersion);
  const std::string m = manifest.dump();
  put_u32(out, static_cast<std::uint32_t>(m.size()));
  out += m;
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
  }
  return out;
}

Archive Archive::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4) != "UCKP") fail(ErrorKind::kSchema, "checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kVersion) {
    fail(ErrorKind::kSchema, "checkpoint: schema version " + std::to_string(version) +
                                 ", expected " + std::to_string(kVersion));
  }
  Archive a;
  a.manifest = nlohmann::json::parse(r.str(r.u32()));
  const auto count = r.u32();
  for (std::uint32_t n = 0; n < count; ++n) {
    std::string name = r.str(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    r.floats(t.data(), t.numel());
    a.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) fail(ErrorKind::kSchema, "checkpoint: trailing bytes");
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::kIo, "short write to " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace uniclin::ad
