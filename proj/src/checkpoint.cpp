#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "condiv/model.hpp"

namespace condiv {

namespace {

constexpr std::string_view kMagic = "condiv-ckpt v1";

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_bytes(std::istream& is, int n, const std::string& what) {
  unsigned char b[8] = {};
  if (!is.read(reinterpret_cast<char*>(b), n)) throw FormatError("checkpoint truncated in " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t, Precision prec) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.shape().rows));
  put_u32(os, static_cast<std::uint32_t>(t.shape().cols));
  for (double v : t.values()) {
    if (prec == Precision::f32) {
      put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
  }
}

}  // namespace

std::string_view precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32" || s == "32") return Precision::f32;
  if (s == "f64" || s == "64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

void round_to_f32(ModelParameters& params) {
  for (Parameter* p : params.all())
    for (double& v : p->value.values()) v = static_cast<double>(static_cast<float>(v));
}

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                     const Tensor& topic_embeddings, Precision precision) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  const ModelConfig& c = params.config;
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << kMagic << '\n'
      << "precision " << precision_name(precision) << '\n'
      << "vocab_size " << c.vocab_size << '\n'
      << "embed_dim " << c.embed_dim << '\n'
      << "hidden " << c.hidden << '\n'
      << "attention " << c.attn_dim() << '\n'
      << "n_div " << c.n_div << '\n'
      << "gamma_sw " << c.gamma_sw << '\n'
      << "gamma_cp " << c.gamma_cp << '\n'
      << "feed_attention " << (c.feed_attention ? 1 : 0) << '\n'
      << "end\n";
  os << hdr.str();
  auto all = params.all();
  put_u32(os, static_cast<std::uint32_t>(all.size() + 1));
  for (const Parameter* p : all) write_tensor(os, p->name, p->value, precision);
  write_tensor(os, "topic.embeddings", topic_embeddings, precision);
  os.flush();
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kMagic)
    throw FormatError("not a checkpoint (expected header '" + std::string(kMagic) + "'): " + path.string());
  std::map<std::string, std::string> kv;
  while (std::getline(is, line) && line != "end") {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw FormatError("bad checkpoint header line: " + line);
    kv[line.substr(0, sp)] = line.substr(sp + 1);
  }
  if (line != "end") throw FormatError("checkpoint header not terminated");
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("checkpoint header missing '" + k + "'");
    return it->second;
  };
  ModelConfig cfg;
  cfg.vocab_size = std::stoul(get("vocab_size"));
  cfg.embed_dim = std::stoul(get("embed_dim"));
  cfg.hidden = std::stoul(get("hidden"));
  cfg.attention = std::stoul(get("attention"));
  cfg.n_div = std::stoul(get("n_div"));
  cfg.gamma_sw = std::stod(get("gamma_sw"));
  cfg.gamma_cp = std::stod(get("gamma_cp"));
  cfg.feed_attention = get("feed_attention") == "1";
  Checkpoint ck{ModelParameters(cfg), Tensor(), parse_precision(get("precision"))};
  const int width = ck.precision == Precision::f32 ? 4 : 8;

  const auto count = get_bytes(is, 4, "tensor count");
  std::size_t seen = 0;
  bool have_topic = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_bytes(is, 4, "tensor name");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint truncated in name");
    const Shape shape{get_bytes(is, 4, name), get_bytes(is, 4, name)};
    Tensor t(shape);
    for (double& v : t.values()) {
      const auto bits = get_bytes(is, width, name);
      v = width == 4 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                     : std::bit_cast<double>(bits);
    }
    if (name == "topic.embeddings") {
      ck.topic_embeddings = std::move(t);
      have_topic = true;
      continue;
    }
    Parameter* p = ck.params.find(name);
    if (!p) throw FormatError("checkpoint has unknown tensor '" + name + "'");
    if (!(p->value.shape() == shape))
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape.str() + ", expected " +
                        p->value.shape().str());
    p->value = std::move(t);
    ++seen;
  }
  if (seen != ck.params.all().size() || !have_topic)
    throw FormatError("checkpoint is missing tensors: " + path.string());
  return ck;
}

}  // namespace condiv
