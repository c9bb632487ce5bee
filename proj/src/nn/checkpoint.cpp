#include "advlab/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "advlab/error.hpp"
#include "advlab/hash.hpp"

namespace advlab {
namespace {

constexpr const char* kFormat = "advlab-checkpoint/1";

void put_le(std::vector<std::byte>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xff));
}

double get_le(const std::byte* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint manifest " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace

CheckpointPaths checkpoint_paths(const std::filesystem::path& stem) {
  auto base = stem.string();
  return {base + ".json", base + ".bin"};
}

bool checkpoint_exists(const std::filesystem::path& stem) {
  const auto p = checkpoint_paths(stem);
  return std::filesystem::exists(p.manifest) && std::filesystem::exists(p.blob);
}

nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::kConv:
    case LayerKind::kTransposedConv:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::kPool:
      j["window"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::kDense:
      j["units"] = l.units;
      break;
    case LayerKind::kActivation:
      j["activation"] = to_string(l.activation);
      break;
    case LayerKind::kFlatten:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  const LayerKind kind = parse_layer_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::kConv:
    case LayerKind::kTransposedConv: {
      LayerSpec s = LayerSpec::conv(j.at("in_channels"), j.at("out_channels"), j.at("kernel"), j.at("stride"),
                                    j.at("padding"));
      s.kind = kind;
      return s;
    }
    case LayerKind::kPool:
      return LayerSpec::pool(j.at("window"), j.at("stride"));
    case LayerKind::kDense:
      return LayerSpec::dense(j.at("units"));
    case LayerKind::kActivation:
      return LayerSpec::act(parse_activation(j.at("activation")));
    case LayerKind::kFlatten:
      return LayerSpec::flatten();
  }
  throw ConfigError("unreachable layer kind");
}

void save_checkpoint(const std::filesystem::path& stem, const Model& model, const nlohmann::json& metadata) {
  const auto paths = checkpoint_paths(stem);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

  std::vector<std::byte> blob;
  blob.reserve(model.parameter_count() * 8);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    const std::size_t offset = blob.size();
    for (double v : p.value.data()) put_le(blob, v);
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"offset", offset},
                      {"bytes", blob.size() - offset},
                      {"fnv1a64", fnv1a64_hex(std::span(blob).subspan(offset))}});
  }
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers()) layers.push_back(layer_to_json(l));

  nlohmann::json manifest{{"format", kFormat},
                          {"name", model.name()},
                          {"input_shape", model.input_shape()},
                          {"output_shape", model.output_shape()},
                          {"layers", layers},
                          {"seed", model.seed()},
                          {"frozen", model.frozen()},
                          {"parameters", params},
                          {"blob_bytes", blob.size()},
                          {"blob_fnv1a64", fnv1a64_hex(blob)},
                          {"metadata", metadata}};

  {
    std::ofstream out(paths.blob, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + paths.blob.string());
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to " + paths.blob.string());
  }
  std::ofstream out(paths.manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write " + paths.manifest.string());
  out << manifest.dump(2) << '\n';
}

nlohmann::json read_checkpoint_metadata(const std::filesystem::path& stem) {
  return read_json(checkpoint_paths(stem).manifest).value("metadata", nlohmann::json::object());
}

Model load_checkpoint(const std::filesystem::path& stem, nlohmann::json* metadata) {
  const auto paths = checkpoint_paths(stem);
  const nlohmann::json manifest = read_json(paths.manifest);
  if (manifest.value("format", "") != kFormat) {
    throw IoError(paths.manifest.string() + " is not an " + std::string(kFormat) + " manifest");
  }

  std::ifstream in(paths.blob, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint blob " + paths.blob.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const std::byte*>(raw.data());
  const std::size_t expected = manifest.at("blob_bytes");
  if (raw.size() != expected) {
    throw ParseError("checkpoint blob " + paths.blob.string() + " has " + std::to_string(raw.size()) +
                         " bytes, manifest lists " + std::to_string(expected),
                     std::min(raw.size(), expected));
  }

  std::vector<Parameter> params;
  for (const auto& pj : manifest.at("parameters")) {
    const std::string name = pj.at("name");
    const std::size_t offset = pj.at("offset");
    const std::size_t count = pj.at("bytes");
    const Shape shape = pj.at("shape").get<Shape>();
    if (offset + count > raw.size() || count != shape_size(shape) * 8) {
      throw ParseError("parameter '" + name + "' extends past the blob or disagrees with its shape", offset);
    }
    const auto span = std::span(bytes + offset, count);
    if (fnv1a64_hex(span) != pj.at("fnv1a64").get<std::string>()) {
      throw ParseError("checksum mismatch in parameter '" + name + "' of " + paths.blob.string(), offset);
    }
    std::vector<double> values(count / 8);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_le(bytes + offset + 8 * i);
    params.push_back({name, Tensor(shape, std::move(values))});
  }

  std::vector<LayerSpec> layers;
  for (const auto& lj : manifest.at("layers")) layers.push_back(layer_from_json(lj));
  Model m = Model::from_parts(manifest.at("name"), manifest.at("input_shape").get<Shape>(), std::move(layers),
                              manifest.at("seed"), std::move(params));
  m.set_frozen(manifest.value("frozen", false));
  if (metadata) *metadata = manifest.value("metadata", nlohmann::json::object());
  return m;
}

}  // namespace advlab
