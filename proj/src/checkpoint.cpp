#include "fewshot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}
  template <class T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) throw DataError("truncated checkpoint " + path_.string());
    return v;
  }
  std::string bytes() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw DataError("truncated checkpoint " + path_.string());
    return s;
  }

 private:
  std::ifstream& in_;
  const std::filesystem::path& path_;
};

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const StoredTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::add(const std::string& name, const Tensor& t) {
  StoredTensor s;
  s.name = name;
  s.shape = t.shape();
  s.values.assign(t.data().begin(), t.data().end());
  tensors.push_back(std::move(s));
}

void Checkpoint::restore(const std::string& name, Tensor& t) const {
  const StoredTensor* s = find(name);
  if (s == nullptr) throw DataError("checkpoint has no tensor '" + name + "'");
  if (s->shape != t.shape()) {
    throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(s->shape) + ", model expects " +
                    shape_str(t.shape()));
  }
  auto dst = t.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(s->values[i]);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    Writer w(out);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod(ckpt.version);
    w.pod(ckpt.fingerprint);
    w.bytes(ckpt.config_text);
    w.pod(ckpt.iteration);
    w.pod(ckpt.best_val_accuracy);
    w.bytes(ckpt.rng_state);
    w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const StoredTensor& t : ckpt.tensors) {
      w.bytes(t.name);
      w.pod(static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) w.pod(static_cast<std::uint64_t>(d));
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    if (!out) throw DataError("error writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not a checkpoint (bad magic)");
  }
  Reader r(in, path);
  Checkpoint ckpt;
  ckpt.version = r.pod<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw DataError("checkpoint format version " + std::to_string(ckpt.version) + " is not supported");
  }
  ckpt.fingerprint = r.pod<std::uint64_t>();
  ckpt.config_text = r.bytes();
  ckpt.iteration = r.pod<std::uint64_t>();
  ckpt.best_val_accuracy = r.pod<double>();
  ckpt.rng_state = r.bytes();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.bytes();
    const auto rank = r.pod<std::uint32_t>();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
      n *= t.shape.back();
    }
    if (n > (std::size_t{1} << 32)) throw DataError("implausible tensor size in checkpoint " + path.string());
    t.values.resize(n);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint " + path.string());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace fewshot
