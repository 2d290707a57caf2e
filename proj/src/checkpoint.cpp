#include "hfan/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace hfan {

namespace {

constexpr char kMagic[8] = {'H', 'F', 'A', 'N', 'C', 'K', 'P', 'T'};
const std::string kEg2Prefix = "adadelta.eg2/";
const std::string kEdx2Prefix = "adadelta.edx2/";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw CheckpointError("checkpoint ends unexpectedly");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

using Meta = std::map<std::string, std::string>;

const std::string& field(const Meta& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

double meta_double(const Meta& meta, const std::string& key) {
  const std::string& s = field(meta, key);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw CheckpointError("bad number for '" + key + "'");
  }
  return v;
}

long long meta_int(const Meta& meta, const std::string& key) {
  const std::string& s = field(meta, key);
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw CheckpointError("bad integer for '" + key + "'");
  }
  return v;
}

std::uint64_t meta_u64(const Meta& meta, const std::string& key) {
  const std::string& s = field(meta, key);
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw CheckpointError("bad integer for '" + key + "'");
  }
  return v;
}

void write_tensor(Writer& w, const std::string& name, const Matrix& m) {
  w.str(name);
  w.u32(2);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Index k = 0; k < m.size(); ++k) w.f64(m.data()[k]);
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  const HyperParams& hp = ck.config.hp;
  const TrainerState& st = ck.state;
  std::ostringstream rng;
  rng << st.rng;

  Meta meta;
  meta["d"] = std::to_string(hp.d);
  meta["m"] = std::to_string(hp.m);
  meta["r"] = std::to_string(hp.r);
  meta["beta"] = format_double(hp.beta);
  meta["L"] = std::to_string(hp.L);
  meta["T"] = std::to_string(hp.T);
  meta["max_total"] = std::to_string(hp.max_total);
  meta["n_neg"] = std::to_string(hp.n_neg);
  meta["freeze_word_emb"] = hp.freeze_word_emb ? "1" : "0";
  meta["ablate_entities"] = hp.ablate_entities ? "1" : "0";
  meta["batch_size"] = std::to_string(ck.config.batch_size);
  meta["seed"] = std::to_string(ck.config.seed);
  meta["lr_decay"] = format_double(ck.config.lr_decay);
  meta["patience"] = std::to_string(ck.config.patience);
  meta["min_count"] = std::to_string(ck.config.min_count);
  meta["rho"] = format_double(st.optimizer.rho);
  meta["eps"] = format_double(st.optimizer.eps);
  meta["lr0"] = format_double(st.optimizer.lr0);
  meta["lr"] = format_double(st.optimizer.lr);
  meta["vocab_size"] = std::to_string(ck.vocab_size);
  meta["users"] = std::to_string(ck.users);
  meta["products"] = std::to_string(ck.products);
  meta["epoch"] = std::to_string(st.epoch);
  meta["best_f1"] = format_double(st.best_f1);
  meta["stale_epochs"] = std::to_string(st.stale_epochs);
  meta["rng"] = rng.str();
  meta["tensors"] =
      std::to_string(st.params.tensors.size() + st.optimizer.eg2.size() + st.optimizer.edx2.size());

  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(ck.version);
  w.str(meta_text);
  for (const auto& [name, m] : st.params.tensors) write_tensor(w, name, m);
  for (const auto& [name, m] : st.optimizer.eg2) write_tensor(w, kEg2Prefix + name, m);
  for (const auto& [name, m] : st.optimizer.edx2) write_tensor(w, kEdx2Prefix + name, m);
  auto& buf = w.buffer();
  const std::uint32_t crc = crc_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < sizeof kMagic + 4 + 4 + 4) throw ChecksumError("checkpoint truncated");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc_of(bytes.data(), body)) {
    throw ChecksumError("checkpoint CRC mismatch (corrupt or truncated file)");
  }

  Reader in(bytes.data(), body);
  in.str(sizeof kMagic);
  Checkpoint ck;
  ck.version = in.u32();
  if (ck.version != kCheckpointVersion) {
    throw IncompatibleVersionError("checkpoint version " + std::to_string(ck.version) +
                                   " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
  }
  Meta meta;
  {
    std::istringstream lines(in.str(in.u32()));
    std::string line;
    while (std::getline(lines, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("bad metadata line: " + line);
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  HyperParams& hp = ck.config.hp;
  hp.d = static_cast<int>(meta_int(meta, "d"));
  hp.m = static_cast<int>(meta_int(meta, "m"));
  hp.r = static_cast<int>(meta_int(meta, "r"));
  hp.beta = meta_double(meta, "beta");
  hp.L = static_cast<int>(meta_int(meta, "L"));
  hp.T = static_cast<int>(meta_int(meta, "T"));
  hp.max_total = static_cast<int>(meta_int(meta, "max_total"));
  hp.n_neg = static_cast<int>(meta_int(meta, "n_neg"));
  hp.freeze_word_emb = meta_int(meta, "freeze_word_emb") != 0;
  hp.ablate_entities = meta_int(meta, "ablate_entities") != 0;
  ck.config.batch_size = static_cast<int>(meta_int(meta, "batch_size"));
  ck.config.seed = meta_u64(meta, "seed");
  ck.config.lr_decay = meta_double(meta, "lr_decay");
  ck.config.patience = static_cast<int>(meta_int(meta, "patience"));
  ck.config.min_count = static_cast<int>(meta_int(meta, "min_count"));

  TrainerState& st = ck.state;
  st.optimizer.rho = meta_double(meta, "rho");
  st.optimizer.eps = meta_double(meta, "eps");
  st.optimizer.lr0 = meta_double(meta, "lr0");
  st.optimizer.lr = meta_double(meta, "lr");
  ck.config.rho = st.optimizer.rho;
  ck.config.eps = st.optimizer.eps;
  ck.config.lr = st.optimizer.lr0;
  ck.vocab_size = meta_u64(meta, "vocab_size");
  ck.users = meta_u64(meta, "users");
  ck.products = meta_u64(meta, "products");
  st.epoch = static_cast<int>(meta_int(meta, "epoch"));
  st.best_f1 = meta_double(meta, "best_f1");
  st.stale_epochs = static_cast<int>(meta_int(meta, "stale_epochs"));
  {
    std::istringstream rng(field(meta, "rng"));
    rng >> st.rng;
    if (!rng) throw CheckpointError("bad RNG state in checkpoint");
  }

  const auto count = meta_u64(meta, "tensors");
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank != 2) throw CheckpointError("tensor " + name + " has unsupported rank");
    const auto rows = static_cast<Index>(in.u64());
    const auto cols = static_cast<Index>(in.u64());
    in.need(static_cast<std::size_t>(rows * cols) * 8);
    Matrix m(rows, cols);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = in.f64();
    if (name.starts_with(kEg2Prefix)) {
      st.optimizer.eg2.emplace(name.substr(kEg2Prefix.size()), std::move(m));
    } else if (name.starts_with(kEdx2Prefix)) {
      st.optimizer.edx2.emplace(name.substr(kEdx2Prefix.size()), std::move(m));
    } else {
      st.params.tensors.emplace(std::move(name), std::move(m));
    }
  }
  if (!in.done()) throw CheckpointError("trailing bytes after tensor records");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace hfan
