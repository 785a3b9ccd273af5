#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gemft/harness.hpp"

namespace gemft {

namespace {

constexpr char kMagic[4] = {'G', 'E', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError(std::string("checkpoint truncated in ") + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

std::filesystem::path sidecar(const std::filesystem::path& p) { return p.string() + ".json"; }

}  // namespace

void write_parameters(std::ostream& out, const ParameterStore& store) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name_at(i);
    const Tensor& t = store.at(i);
    if (name.size() > 0xffff) throw FormatError("parameter name too long: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float f : t.data) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw FormatError("checkpoint write failed");
}

ParameterStore read_parameters(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("checkpoint truncated in magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic (expected GEMT)");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in, "tensor count");
  ParameterStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(in, "name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("checkpoint truncated in tensor name");
    const auto rank = get<std::uint8_t>(in, "rank");
    std::vector<int> shape;
    for (int r = 0; r < rank; ++r) shape.push_back(static_cast<int>(get<std::uint32_t>(in, "shape")));
    Tensor t(shape);
    for (float& f : t.data) f = std::bit_cast<float>(get<std::uint32_t>(in, "tensor data"));
    store.add(name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint tensors");
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const Encoder& model, const CheckpointMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    write_parameters(out, model.params());
  }
  nlohmann::ordered_json j;
  j["format"] = "GEMT";
  j["version"] = kVersion;
  j["config_hash"] = hex64(model.config().hash());
  j["params_hash"] = hex64(model.params().hash());
  j["seed"] = meta.seed;
  j["step"] = meta.step;
  const ModelConfig& c = model.config();
  j["model"] = {{"vocab_size", c.vocab_size}, {"hidden", c.hidden},         {"layers", c.layers},
                {"heads", c.heads},           {"max_seq_len", c.max_seq_len}, {"tag_set_size", c.tag_set_size}};
  j["vocab"] = meta.vocab;
  std::ofstream out(sidecar(path));
  out << j.dump(1) << '\n';
  if (!out) throw FormatError("cannot write " + sidecar(path).string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream in(sidecar(path));
  if (!in) throw FormatError("missing checkpoint metadata " + sidecar(path).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar(path).string() + ": " + e.what());
  }
  CheckpointMeta m;
  try {
    m.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    m.params_hash = std::stoull(j.at("params_hash").get<std::string>(), nullptr, 16);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.step = j.at("step").get<long>();
    m.vocab = j.at("vocab").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw FormatError(sidecar(path).string() + ": " + e.what());
  }
  return m;
}

Encoder load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  if (meta.config_hash != config.hash())
    throw ConfigError("checkpoint " + path.string() + " was saved for a different model config (hash " +
                      hex64(meta.config_hash) + ", expected " + hex64(config.hash()) + ")");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  ParameterStore store = read_parameters(in);
  if (store.hash() != meta.params_hash)
    throw FormatError("checkpoint " + path.string() + " does not match its metadata hash");
  Encoder model = Encoder::init(config, 0);
  if (model.params().size() != store.size()) throw FormatError("checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store.name_at(i) != model.params().name_at(i) || store.at(i).shape != model.params().at(i).shape)
      throw FormatError("checkpoint tensor '" + store.name_at(i) + "' does not match the model");
  model.params() = std::move(store);
  return model;
}

}  // namespace gemft
