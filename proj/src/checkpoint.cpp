#include "vconv/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "vconv/errors.hpp"

namespace vconv {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'C', 'K'};
constexpr uint8_t kDtypeF64 = 1;

// Fixed little-endian scalar IO. The in-memory representation on every
// supported platform is already little-endian; memcpy keeps it alias-safe.
template <typename T>
void put(std::string* out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out->append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size())
      throw CheckpointError("checkpoint " + path_ + ": truncated at byte " +
                            std::to_string(pos_));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(size_t len) {
    if (pos_ + len > bytes_.size())
      throw CheckpointError("checkpoint " + path_ + ": truncated at byte " +
                            std::to_string(pos_));
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  size_t pos() const { return pos_; }
  size_t size() const { return bytes_.size(); }
  const std::string& bytes() const { return bytes_; }

 private:
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

struct DirEntry {
  std::string name;
  uint32_t rows = 0, cols = 0;
  uint8_t trainable = 0, dtype = 0;
  uint64_t offset = 0;
};

struct Parsed {
  CheckpointMeta meta;
  std::vector<DirEntry> dir;
  size_t data_begin = 0;
};

Parsed parse_header(Reader* r, const std::string& path) {
  Parsed p;
  std::string magic = r->get_string(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw CheckpointError("checkpoint " + path + ": bad magic bytes");
  p.meta.version = r->get<uint32_t>();
  if (p.meta.version != kCheckpointVersion)
    throw CheckpointError("checkpoint " + path + ": format version " +
                          std::to_string(p.meta.version) + " (reader supports " +
                          std::to_string(kCheckpointVersion) + ", no migration)");
  p.meta.fingerprint = r->get<uint64_t>();
  p.meta.step = r->get<int64_t>();
  uint32_t rng_len = r->get<uint32_t>();
  p.meta.rng_state = r->get_string(rng_len);
  uint32_t count = r->get<uint32_t>();
  p.meta.tensor_count = static_cast<int>(count);
  p.dir.resize(count);
  for (auto& e : p.dir) {
    uint16_t name_len = r->get<uint16_t>();
    e.name = r->get_string(name_len);
    e.rows = r->get<uint32_t>();
    e.cols = r->get<uint32_t>();
    e.trainable = r->get<uint8_t>();
    e.dtype = r->get<uint8_t>();
    e.offset = r->get<uint64_t>();
  }
  p.data_begin = r->pos();
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const Rng& rng) {
  std::string header;
  header.append(kMagic, 4);
  put<uint32_t>(&header, kCheckpointVersion);
  put<uint64_t>(&header, config_fingerprint(model.cfg));
  put<int64_t>(&header, model.step);
  std::string rng_state = rng.serialize();
  put<uint32_t>(&header, static_cast<uint32_t>(rng_state.size()));
  header += rng_state;

  auto tensors = model.params.all();
  put<uint32_t>(&header, static_cast<uint32_t>(tensors.size()));
  std::string data;
  for (const ad::ParamTensor* t : tensors) {
    put<uint16_t>(&header, static_cast<uint16_t>(t->name.size()));
    header += t->name;
    put<uint32_t>(&header, static_cast<uint32_t>(t->rows));
    put<uint32_t>(&header, static_cast<uint32_t>(t->cols));
    put<uint8_t>(&header, t->trainable ? 1 : 0);
    put<uint8_t>(&header, kDtypeF64);
    put<uint64_t>(&header, data.size());
    data.append(reinterpret_cast<const char*>(t->value.data()),
                t->value.size() * sizeof(double));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f.good()) throw CheckpointError("checkpoint write failed: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, Model* model, Rng* rng,
                               bool force) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  Reader r(bytes, path);
  Parsed p = parse_header(&r, path);

  uint64_t expect = config_fingerprint(model->cfg);
  if (!force && p.meta.fingerprint != expect)
    throw CheckpointError("checkpoint " + path + ": config fingerprint " +
                          std::to_string(p.meta.fingerprint) +
                          " does not match the active config " + std::to_string(expect) +
                          " (pass force to override)");

  if (p.dir.size() != model->params.count())
    throw CheckpointError("checkpoint " + path + ": holds " +
                          std::to_string(p.dir.size()) + " tensors, model has " +
                          std::to_string(model->params.count()));

  for (const DirEntry& e : p.dir) {
    ad::ParamTensor* t = model->params.find(e.name);
    if (!t)
      throw CheckpointError("checkpoint " + path + ": tensor '" + e.name +
                            "' does not exist in the model");
    if (static_cast<int>(e.rows) != t->rows || static_cast<int>(e.cols) != t->cols)
      throw CheckpointError("checkpoint " + path + ": tensor '" + e.name + "' is " +
                            std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                            ", model expects " + std::to_string(t->rows) + "x" +
                            std::to_string(t->cols));
    if (e.dtype != kDtypeF64)
      throw CheckpointError("checkpoint " + path + ": tensor '" + e.name +
                            "' has unknown dtype " + std::to_string(e.dtype));
    size_t need = static_cast<size_t>(e.rows) * e.cols * sizeof(double);
    size_t begin = p.data_begin + e.offset;
    if (begin + need > r.size())
      throw CheckpointError("checkpoint " + path + ": tensor '" + e.name +
                            "' data runs past end of file (truncated?)");
    std::memcpy(t->value.data(), r.bytes().data() + begin, need);
  }

  model->step = p.meta.step;
  if (rng) rng->deserialize(p.meta.rng_state);
  return p.meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), {});
  Reader r(bytes, path);
  return parse_header(&r, path).meta;
}

}  // namespace vconv
