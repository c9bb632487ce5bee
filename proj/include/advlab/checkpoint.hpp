#pragma once

#include <filesystem>
#include <json.hpp>

#include "advlab/model.hpp"

namespace advlab {

// A checkpoint is two files sharing a stem:
//   <stem>.json  manifest: layer specs, shapes, seed, per-parameter byte
//                offsets and checksums, free-form metadata
//   <stem>.bin   parameters as raw little-endian float64, in manifest order
struct CheckpointPaths {
  std::filesystem::path manifest;
  std::filesystem::path blob;
};

CheckpointPaths checkpoint_paths(const std::filesystem::path& stem);
bool checkpoint_exists(const std::filesystem::path& stem);

nlohmann::json layer_to_json(const LayerSpec& l);
LayerSpec layer_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& stem, const Model& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Throws ParseError naming the parameter and its byte offset when the blob
// does not match the manifest checksums.
Model load_checkpoint(const std::filesystem::path& stem, nlohmann::json* metadata = nullptr);

// Metadata block only (no blob read).
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& stem);

}  // namespace advlab
