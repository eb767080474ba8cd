#include "wt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wt/errors.hpp"

namespace wt {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'W', 'T', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json config_json(const ModelConfig& c) {
  return json{{"variant", variant_name(c.variant)},
              {"n_layers", c.n_layers},
              {"d_model", c.d_model},
              {"d_ff", c.d_ff},
              {"heads", c.heads},
              {"branches", c.branches},
              {"p_drop", c.p_drop},
              {"epsilon_ls", c.epsilon_ls},
              {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"weight_param_mode", weight_param_mode_name(c.weight_param_mode)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.branches = j.at("branches").get<std::size_t>();
  c.p_drop = j.at("p_drop").get<double>();
  c.epsilon_ls = j.at("epsilon_ls").get<double>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.weight_param_mode = parse_weight_param_mode(j.at("weight_param_mode").get<std::string>());
  return c;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw FormatError("checkpoint truncated in header");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string checkpoint_bytes(const Transformer& model) {
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& p : model.params()) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size();
  }
  const std::string manifest =
      json{{"config", config_json(model.config())}, {"tensors", tensors}, {"values", offset}}.dump();

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, manifest.size());
  out += manifest;
  out.reserve(out.size() + offset * sizeof(float));
  for (const auto& p : model.params()) {
    for (double v : p.value.values()) put<float>(out, static_cast<float>(v));
  }
  return out;
}

Transformer checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_len = take<std::uint64_t>(bytes, pos);
  if (bytes.size() - pos < manifest_len) throw FormatError("checkpoint truncated in manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(pos, manifest_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  pos += manifest_len;

  Transformer model = [&] {
    try {
      return Transformer(config_from_json(manifest.at("config")));
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint manifest config: ") + e.what());
    }
  }();
  const std::size_t payload_values = (bytes.size() - pos) / sizeof(float);
  if ((bytes.size() - pos) % sizeof(float) != 0) throw FormatError("checkpoint payload is not whole binary32 values");

  try {
    const json& tensors = manifest.at("tensors");
    if (tensors.size() != model.params().size()) {
      throw FormatError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, config implies " +
                        std::to_string(model.params().size()));
    }
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      Parameter& p = model.params()[i];
      const json& t = tensors[i];
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      if (name != p.name) throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
      if (shape != p.value.shape()) {
        throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                          shape_string(p.value.shape()));
      }
      if (offset != expected_offset) throw FormatError("tensor '" + name + "' has an inconsistent offset");
      const std::size_t count = shape_product(shape);
      if (offset + count > payload_values) {
        throw FormatError("payload too short for tensor '" + name + "' (manifest shape exceeds payload)");
      }
      for (std::size_t k = 0; k < count; ++k) {
        float f;
        std::memcpy(&f, bytes.data() + pos + (offset + k) * sizeof(float), sizeof(float));
        p.value[k] = static_cast<double>(f);
      }
      expected_offset += count;
    }
    if (expected_offset != payload_values) {
      throw FormatError("payload holds " + std::to_string(payload_values) + " values, manifest describes " +
                        std::to_string(expected_offset));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  return model;
}

void checkpoint_save(const Transformer& model, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Transformer checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_bytes(buf.str());
}

Transformer rounded_to_binary32(const Transformer& model) {
  Transformer copy = model;
  for (auto& p : copy.params()) {
    for (double& v : p.value.values()) v = static_cast<double>(static_cast<float>(v));
  }
  return copy;
}

}  // namespace wt
