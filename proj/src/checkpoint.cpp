#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ucdg/network.hpp"
#include "ucdg/text.hpp"

namespace ucdg {
namespace {

constexpr char kMagic[4] = {'U', 'C', 'D', 'G'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_tensors(std::string& out, const std::vector<const Tensor*>& tensors) {
  put_le<std::uint64_t>(out, tensors.size());
  for (const Tensor* t : tensors) {
    put_le<std::uint64_t>(out, t->size());
    for (double v : t->data()) put_le(out, std::bit_cast<std::uint64_t>(v));
  }
}

std::uint32_t checksum(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = uInt(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return std::uint32_t(crc);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_tensors(const std::vector<Tensor*>& into, const char* what) {
    const auto count = get<std::uint64_t>(what);
    if (count != into.size()) {
      throw CheckpointError(std::string("checkpoint: ") + what + " count " + std::to_string(count) +
                            " does not match the model (" + std::to_string(into.size()) + ")");
    }
    for (Tensor* t : into) {
      const auto n = get<std::uint64_t>(what);
      if (n != t->size()) {
        throw CheckpointError(std::string("checkpoint: ") + what + " size " + std::to_string(n) +
                              " does not match the model (" + std::to_string(t->size()) + ")");
      }
      for (double& v : t->data()) v = std::bit_cast<double>(get<std::uint64_t>(what));
    }
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof kMagic);
  put_le(out, kCheckpointVersion);
  const std::string cfg = model.config().serialize();
  put_le<std::uint32_t>(out, std::uint32_t(cfg.size()));
  out += cfg;
  std::vector<const Tensor*> params;
  for (const Parameter* p : model.parameters()) params.push_back(&p->value);
  put_tensors(out, params);
  put_tensors(out, model.buffers());
  put_le(out, checksum(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_layout) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};

  Reader r(bytes);
  if (r.take(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto cfg_len = r.get<std::uint32_t>("config length");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::parse(r.take(cfg_len, "config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  if (expected_layout && *expected_layout != cfg.layout) {
    throw CheckpointError("checkpoint layout '" + cfg.layout + "' does not match expected '" + *expected_layout + "'");
  }

  Model model = Model::build(cfg, 0);
  std::vector<Tensor*> params;
  for (Parameter* p : model.parameters()) params.push_back(&p->value);
  r.read_tensors(params, "parameters");
  r.read_tensors(model.buffers(), "buffers");

  const std::size_t body = bytes.size() - r.remaining();
  const auto stored = r.get<std::uint32_t>("checksum");
  if (r.remaining() != 0) throw CheckpointError("checkpoint has trailing bytes");
  if (stored != checksum(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch");
  return model;
}

}  // namespace ucdg
