#pragma once

#include <filesystem>

#include "hiera/hierarchy.hpp"
#include "hiera/optim.hpp"
#include "json.hpp"

namespace hiera {

// A checkpoint is a directory: one HTF file per parameter, hierarchy.json,
// and manifest.json {config, hierarchy_hash, params: {name: file}}.
void save_checkpoint(const std::filesystem::path& dir, const NamedParams& params,
                     const Hierarchy& h, const nlohmann::ordered_json& config);

struct CheckpointInfo {
  nlohmann::json config;
  std::string hierarchy_hash;
  Hierarchy hierarchy;
};

// Reads the manifest and the stored hierarchy; the hash must match.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

// Copies stored values into params by name. Every param must be present with
// the same shape; a hierarchy whose hash differs from the manifest's throws.
void load_checkpoint(const std::filesystem::path& dir, const NamedParams& params,
                     const Hierarchy& h);

}  // namespace hiera
