#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace styleaug::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Environment variable naming the default dataset root.
inline constexpr const char* kDataRootEnv = "STYLEAUG_DATA_ROOT";

// Entry point for the styleaug binary; argv[0] is the program name.
int run(int argc, const char* const* argv);

// One record per command invocation under <out-dir>/manifests/.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  std::string config_hash;
  nlohmann::json config = nullptr;
  nlohmann::json seeds = nlohmann::json::object();
  std::string code_version;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;
  std::string status;  // "ok" or "failed"
  std::string error;

  nlohmann::json to_json() const;
};

// Writes the manifest under a fresh name and never replaces an existing
// file. Returns the path written.
std::filesystem::path write_manifest(const RunManifest& manifest, const std::filesystem::path& manifest_dir);

// Version string compiled into the binary.
std::string code_version();

}  // namespace styleaug::cli
