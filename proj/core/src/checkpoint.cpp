#include "pcs/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pcs/errors.hpp"

namespace pcs {

namespace {

constexpr const char* kMagic = "PCSCKPT";

void put_le32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_le32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string next_line(const std::string& bytes, std::size_t& pos) {
  const auto end = bytes.find('\n', pos);
  if (end == std::string::npos) throw ConfigError("checkpoint: truncated header");
  std::string line = bytes.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ConfigError("checkpoint: no tensor named '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void Checkpoint::add(std::string name, const Tensor& tensor) {
  if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos) {
    throw ConfigError("checkpoint: invalid tensor name '" + name + "'");
  }
  if (contains(name)) throw ConfigError("checkpoint: duplicate tensor name '" + name + "'");
  tensors.emplace_back(std::move(name), tensor);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream header;
  header << kMagic << ' ' << Checkpoint::kFormatVersion << '\n';
  header << "meta " << ckpt.meta.size() << '\n' << ckpt.meta << '\n';
  header << "tensors " << ckpt.tensors.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    header << name << ' ' << offset << ' ' << t.ndim();
    for (auto d : t.shape()) header << ' ' << d;
    header << '\n';
    offset += t.numel() * 4;
  }
  header << "end\n";
  std::string out = header.str();
  out.reserve(out.size() + offset);
  for (const auto& entry : ckpt.tensors) {
    for (float v : entry.second.data()) put_le32(out, v);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  Checkpoint ckpt;
  {
    std::istringstream first(next_line(bytes, pos));
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kMagic) throw ConfigError("checkpoint: bad magic");
    if (version != Checkpoint::kFormatVersion) {
      throw ConfigError("checkpoint: unsupported format version " + std::to_string(version));
    }
  }
  {
    std::istringstream meta_line(next_line(bytes, pos));
    std::string tag;
    std::size_t size = 0;
    meta_line >> tag >> size;
    if (tag != "meta" || pos + size + 1 > bytes.size()) throw ConfigError("checkpoint: bad meta section");
    ckpt.meta = bytes.substr(pos, size);
    pos += size + 1;
  }
  std::size_t count = 0;
  {
    std::istringstream tl(next_line(bytes, pos));
    std::string tag;
    tl >> tag >> count;
    if (tag != "tensors") throw ConfigError("checkpoint: missing tensor table");
  }
  struct Entry {
    std::string name;
    std::size_t offset;
    Shape shape;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream el(next_line(bytes, pos));
    Entry e;
    std::size_t ndim = 0;
    if (!(el >> e.name >> e.offset >> ndim)) throw ConfigError("checkpoint: malformed tensor entry");
    e.shape.resize(ndim);
    for (auto& d : e.shape) {
      if (!(el >> d) || d == 0) throw ConfigError("checkpoint: malformed shape for '" + e.name + "'");
    }
    entries.push_back(std::move(e));
  }
  if (next_line(bytes, pos) != "end") throw ConfigError("checkpoint: missing end marker");
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  const std::size_t payload_size = bytes.size() - pos;
  for (auto& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    if (e.offset + n * 4 > payload_size) {
      throw ConfigError("checkpoint: payload truncated for '" + e.name + "'");
    }
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_le32(payload + e.offset + 4 * i);
    ckpt.add(e.name, Tensor(e.shape, std::move(values)));
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace pcs
