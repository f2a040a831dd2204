#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace viewmetric {

inline constexpr const char* kToolVersion = "viewmetric 1.0.0";

struct ArtifactRecord {
  std::string path;
  std::string sha256;
};

/// Provenance record written next to every command's outputs. Contains no
/// timestamps, so reruns on unchanged inputs produce identical bytes.
struct ExperimentManifest {
  std::string command;
  std::string tool_version = kToolVersion;
  std::string config;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::vector<ArtifactRecord> inputs;
  /// Paths relative to the directory holding the manifest.
  std::vector<ArtifactRecord> outputs;
};

std::string sha256_hex(const std::string& bytes);
/// Throws ConfigError if the file cannot be read.
std::string sha256_file(const std::string& path);

ArtifactRecord record_file(const std::string& path, const std::string& label);

std::string manifest_to_json(const ExperimentManifest& manifest);
ExperimentManifest manifest_from_json(const std::string& text);

void save_manifest(const std::string& path, const ExperimentManifest& manifest);
ExperimentManifest load_manifest(const std::string& path);

/// Recomputes every digest. Returns the paths whose content no longer matches.
std::vector<std::string> verify_manifest(const ExperimentManifest& manifest, const std::string& manifest_dir);

}  // namespace viewmetric
