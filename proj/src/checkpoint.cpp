#include "ragmarl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ragmarl/error.hpp"

namespace ragmarl {
namespace {

constexpr char kMagic[8] = {'R', 'M', 'A', 'R', 'L', 'C', 'K', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit)
      : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void read_raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > limit_ || pos_ + n < pos_) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what,
                        pos_);
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& e : entries) {
    if (e.name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.step);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (Tensor::element_count(e.tensor.shape) != e.tensor.size()) {
      throw Error("tensor " + e.name + " has inconsistent shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.shape.size()));
    for (auto d : e.tensor.shape) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.tensor.data.data());
    out.insert(out.end(), p, p + e.tensor.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 4 + 8) {
    throw FormatError("checkpoint too short", bytes.size());
  }
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  char magic[8];
  r.read_raw(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError("bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version),
                      8);
  }
  Checkpoint ckpt;
  ckpt.step = r.get<std::uint64_t>("step");
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const auto name_len = r.get<std::uint32_t>("name length");
    e.name.resize(name_len);
    r.read_raw(e.name.data(), name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible rank for " + e.name, r.pos());
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.tensor.shape.push_back(r.get<std::uint64_t>("dimension"));
    }
    const std::size_t n = Tensor::element_count(e.tensor.shape);
    if (n > (body - r.pos()) / sizeof(double)) {
      throw FormatError("truncated checkpoint while reading values of " + e.name,
                        r.pos());
    }
    e.tensor.data.resize(n);
    r.read_raw(e.tensor.data.data(), n * sizeof(double), "values");
    ckpt.entries.push_back(std::move(e));
  }
  if (r.pos() != body) throw FormatError("trailing bytes in checkpoint", r.pos());
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(bytes.data(), body)) {
    throw FormatError("checkpoint checksum mismatch", body);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void append_store(Checkpoint& ckpt, const ParamStore& store,
                  const std::string& prefix, bool with_moments) {
  for (const auto& p : store.params()) {
    ckpt.entries.push_back({prefix + p.name, p.value});
    if (with_moments) {
      ckpt.entries.push_back({prefix + p.name + "@m", p.m});
      ckpt.entries.push_back({prefix + p.name + "@v", p.v});
    }
  }
  if (with_moments) {
    Tensor t({1});
    t[0] = static_cast<double>(store.step());
    ckpt.entries.push_back({prefix + "@adam_step", t});
  }
}

void restore_store(const Checkpoint& ckpt, ParamStore& store,
                   const std::string& prefix) {
  // Validate everything first so a mismatch leaves the store untouched.
  for (const auto& p : store.params()) {
    const Tensor* t = ckpt.find(prefix + p.name);
    if (!t) throw Error("checkpoint lacks parameter " + prefix + p.name);
    if (t->shape != p.value.shape) {
      throw Error("shape mismatch for " + prefix + p.name + ": expected " +
                  shape_string(p.value.shape) + ", found " +
                  shape_string(t->shape));
    }
  }
  for (auto& p : store.params()) {
    p.value = *ckpt.find(prefix + p.name);
    const Tensor* m = ckpt.find(prefix + p.name + "@m");
    const Tensor* v = ckpt.find(prefix + p.name + "@v");
    if (m && v && m->shape == p.value.shape && v->shape == p.value.shape) {
      p.m = *m;
      p.v = *v;
    } else {
      std::fill(p.m.data.begin(), p.m.data.end(), 0.0);
      std::fill(p.v.data.begin(), p.v.data.end(), 0.0);
    }
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }
  const Tensor* step = ckpt.find(prefix + "@adam_step");
  store.set_step(step ? static_cast<std::uint64_t>((*step)[0]) : 0);
}

}  // namespace ragmarl
