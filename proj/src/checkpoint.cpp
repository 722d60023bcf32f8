#include "vilaco/checkpoint.hpp"

#include "vilaco/errors.hpp"
#include "vilaco/params.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace vilaco {

namespace {

constexpr char kMagic[8] = {'V', 'I', 'L', 'A', 'C', 'O', 'C', 'K'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  void raw(void* p, std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError("checkpoint truncated");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v{};
    raw(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > end_ - pos_) throw CheckpointError("checkpoint truncated");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

const ag::Matrix* BlobFile::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return &m;
  }
  return nullptr;
}

const std::string* BlobFile::blob(const std::string& name) const {
  for (const auto& [n, b] : bytes) {
    if (n == name) return &b;
  }
  return nullptr;
}

const std::string& BlobFile::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint metadata missing key: " + key);
  return it->second;
}

void write_blob_file(const std::filesystem::path& path, const BlobFile& file) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(file.version);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(file.meta.size()));
  for (const auto& [k, v] : file.meta) {
    w.str(k);
    w.str(v);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, m] : file.tensors) {
    w.str(name);
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    w.raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(file.bytes.size()));
  for (const auto& [name, b] : file.bytes) {
    w.str(name);
    w.pod<std::uint64_t>(b.size());
    w.raw(b.data(), b.size());
  }
  const std::uint64_t sum = fnv1a(w.buffer().data(), w.buffer().size());
  w.pod<std::uint64_t>(sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

BlobFile read_blob_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw CheckpointError("checkpoint too short: " + path.string());
  }
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));
  if (fnv1a(buf.data(), body) != stored) throw CheckpointError("checkpoint checksum mismatch: " + path.string());

  Reader r(buf, body);
  char magic[sizeof(kMagic)];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file: " + path.string());
  BlobFile file;
  file.version = r.pod<std::uint32_t>();
  if (file.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(file.version));
  }
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    file.meta[k] = r.str();
  }
  const auto n_tensor = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensor; ++i) {
    auto name = r.str();
    const auto rows = r.pod<std::uint64_t>();
    const auto cols = r.pod<std::uint64_t>();
    if (rows != 0 && cols > r.remaining() / sizeof(double) / rows) throw CheckpointError("checkpoint truncated");
    ag::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    file.tensors.emplace_back(std::move(name), std::move(m));
  }
  const auto n_bytes = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_bytes; ++i) {
    auto name = r.str();
    const auto size = r.pod<std::uint64_t>();
    if (size > r.remaining()) throw CheckpointError("checkpoint truncated");
    std::string b(size, '\0');
    r.raw(b.data(), size);
    file.bytes.emplace_back(std::move(name), std::move(b));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
  return file;
}

}  // namespace vilaco
