#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nsr/network.hpp"

namespace nsr {
namespace {

constexpr char kMagic[4] = {'N', 'S', 'R', '1'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get_le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                           std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Model<float>& model) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = to_json(model.config);
  put_le<std::uint64_t>(out, cfg.size());
  out += cfg;
  for (const auto& p : model.parameters()) {
    put_le<std::uint64_t>(out, p.values.size());
    for (float v : p.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Model<float> decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw BadMagicError("not a checkpoint: bad magic bytes");
  }
  const auto version = in.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
  }
  const auto cfg_len = in.get_le<std::uint64_t>("config length");
  if (cfg_len > in.remaining()) throw TruncatedError("checkpoint truncated inside the config blob");
  const std::string cfg_text = in.get_bytes(static_cast<std::size_t>(cfg_len), "config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(cfg_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  Model<float> model = build_model<float>(cfg, 0);
  for (auto& p : model.parameters()) {
    const auto count = in.get_le<std::uint64_t>("element count");
    if (count != p.values.size()) {
      throw ShapeMismatchError("parameter " + p.name + " has " + std::to_string(count) +
                               " elements in the file, config implies " + std::to_string(p.values.size()));
    }
    for (auto& v : p.values) v = std::bit_cast<float>(in.get_le<std::uint32_t>("parameter data"));
  }
  if (in.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return model;
}

void save_checkpoint(const Model<float>& model, const std::string& path) {
  const std::string bytes = encode_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace nsr
