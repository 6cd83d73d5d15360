#pragma once

#include <filesystem>
#include <string>

#include "taskiq/nn/network.hpp"

namespace taskiq::nn {

inline constexpr std::uint32_t kModelVersion = 1;

/// Binary model: magic "TIQMODEL", u32 version, architecture fields, the layer list,
/// the fixed input/output maps, f32 weights in declaration order, then a CRC-32 of
/// every preceding byte.
void save_model(const std::filesystem::path& path, const MultiTaskNet<float>& net);
MultiTaskNet<float> load_model(const std::filesystem::path& path);

/// Writes `manifest_json` next to the model as <path>.json.
void save_model_manifest(const std::filesystem::path& model_path, const std::string& manifest_json);

}  // namespace taskiq::nn
