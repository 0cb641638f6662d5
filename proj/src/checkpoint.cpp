#include "hiera/checkpoint.hpp"

#include <algorithm>

#include "hiera/error.hpp"
#include "hiera/htf.hpp"

namespace hiera {

namespace fs = std::filesystem;

namespace {

std::string file_for(const std::string& name) {
  std::string f = name;
  for (auto& c : f) {
    if (c == '/' || c == '\\') c = '_';
  }
  return f + ".htf";
}

nlohmann::json read_manifest(const fs::path& dir) {
  const auto bytes = read_file_bytes(dir / "manifest.json");
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const NamedParams& params, const Hierarchy& h,
                     const nlohmann::ordered_json& config) {
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& [name, t] : params) {
    const std::string f = file_for(name);
    write_htf(dir / "params" / f, t);
    files[name] = "params/" + f;
  }
  save_hierarchy(h, dir / "hierarchy.json");
  nlohmann::ordered_json m;
  m["hierarchy_hash"] = h.hash_hex();
  m["config"] = config;
  m["params"] = files;
  const std::string text = m.dump(2) + "\n";
  write_file_bytes(dir / "manifest.json",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  nlohmann::json m = read_manifest(dir);
  Hierarchy h = load_hierarchy(dir / "hierarchy.json");
  const std::string hash = m.value("hierarchy_hash", "");
  if (hash != h.hash_hex()) {
    throw InputError("checkpoint " + dir.string() + ": hierarchy hash " + h.hash_hex() +
                     " does not match manifest " + hash);
  }
  return CheckpointInfo{m.value("config", nlohmann::json::object()), hash, std::move(h)};
}

void load_checkpoint(const fs::path& dir, const NamedParams& params, const Hierarchy& h) {
  const nlohmann::json m = read_manifest(dir);
  const std::string hash = m.value("hierarchy_hash", "");
  if (hash != h.hash_hex()) {
    throw InputError("checkpoint " + dir.string() + " was trained on hierarchy " + hash +
                     ", expected " + h.hash_hex());
  }
  const auto& files = m.at("params");
  for (const auto& [name, t] : params) {
    if (!files.contains(name)) throw InputError("checkpoint lacks parameter '" + name + "'");
    Tensor stored = read_htf(dir / files.at(name).get<std::string>());
    if (stored.shape() != t.shape()) {
      throw InputError("checkpoint parameter '" + name + "' has shape " +
                       shape_str(stored.shape()) + ", model expects " + shape_str(t.shape()));
    }
    Tensor dst = t;
    std::copy(stored.data().begin(), stored.data().end(), dst.mutable_data().begin());
  }
}

}  // namespace hiera
