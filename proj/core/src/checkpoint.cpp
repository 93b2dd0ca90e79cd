#include "alff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace alff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'L', 'F', 'F'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void put_record(const TensorRecord& r) {
    put_string(r.name);
    put(static_cast<std::uint32_t>(r.shape.size()));
    for (int d : r.shape) put(static_cast<std::uint32_t>(d));
    const auto* bytes = reinterpret_cast<const char*>(r.data.data());
    out_.append(bytes, r.data.size() * sizeof(float));
  }
  void put_records(const std::vector<TensorRecord>& rs) {
    put(static_cast<std::uint32_t>(rs.size()));
    for (const auto& r : rs) put_record(r);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw std::runtime_error(std::string("checkpoint truncated in ") + what);
  }
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  TensorRecord get_record() {
    TensorRecord r;
    r.name = get_string("tensor name");
    const auto rank = get<std::uint32_t>("tensor rank");
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + r.name);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get<std::uint32_t>("tensor shape");
      if (d == 0 || d > (1u << 24)) throw std::runtime_error("checkpoint: bad dimension in " + r.name);
      r.shape.push_back(static_cast<int>(d));
      count *= d;
    }
    need(count * sizeof(float), "tensor data");
    r.data.resize(count);
    std::memcpy(r.data.data(), in_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
    return r;
  }
  std::vector<TensorRecord> get_records() {
    const auto n = get<std::uint32_t>("record count");
    std::vector<TensorRecord> rs;
    for (std::uint32_t i = 0; i < n; ++i) rs.push_back(get_record());
    return rs;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kMagic, 4);
  w.put(ck.version);
  w.put(ck.seed);
  w.put(ck.epoch);
  w.put(ck.step);
  w.put_string(ck.config_text);
  w.put_records(ck.params);
  w.put_records(ck.momentum);
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.get<std::uint32_t>("magic");
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    std::ostringstream msg;
    msg << "checkpoint format version " << ck.version << " is not supported (expected " << kCheckpointVersion << ")";
    throw CheckpointVersionError(msg.str());
  }
  ck.seed = r.get<std::uint64_t>("seed");
  ck.epoch = r.get<std::uint32_t>("epoch");
  ck.step = r.get<std::uint64_t>("step");
  ck.config_text = r.get_string("config");
  ck.params = r.get_records();
  ck.momentum = r.get_records();
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  // Write beside the target and rename so a crash never leaves half a file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace alff
