#include "salcar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "salcar/errors.hpp"

namespace salcar {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'J', 'S', 'C', 'R'};
constexpr char kMetaMagic[4] = {'J', 'S', 'C', 'M'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> dst) {
    need(dst.size() * sizeof(float));
    std::memcpy(dst.data(), bytes_.data() + pos_, dst.size() * sizeof(float));
    pos_ += dst.size() * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    if (name.size() > 0xFFFF) throw IoError("checkpoint entry name too long: " + name);
    if (t.rank() > 0xFF) throw IoError("checkpoint entry rank too large: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
  }
  if (!ckpt.meta.empty()) {
    std::string text;
    for (const auto& [k, v] : ckpt.meta) {
      if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
        throw IoError("checkpoint metadata key/value contains a reserved character: " + k);
      }
      text += k + "=" + v + "\n";
    }
    out.insert(out.end(), kMetaMagic, kMetaMagic + 4);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw IoError("not a checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.str(len);
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint32_t>());
    Tensor t;
    try {
      t = Tensor(shape);
    } catch (const ShapeError& e) {
      throw IoError("checkpoint entry '" + name + "': " + e.what());
    }
    r.floats(t.data());
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) {
    if (r.str(4) != std::string(kMetaMagic, 4)) throw IoError("checkpoint has trailing bytes");
    const auto len = r.get<std::uint32_t>();
    std::istringstream in(r.str(len));
    std::string line;
    while (std::getline(in, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("malformed checkpoint metadata line: " + line);
      ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!r.done()) throw IoError("checkpoint has trailing bytes after metadata");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace salcar
