#include "viewmetric/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "viewmetric/common.hpp"

namespace viewmetric {

namespace {

using nlohmann::json;

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json records_json(const std::vector<ArtifactRecord>& records) {
  json out = json::array();
  for (const auto& r : records) out.push_back({{"path", r.path}, {"sha256", r.sha256}});
  return out;
}

std::vector<ArtifactRecord> records_from(const json& j) {
  std::vector<ArtifactRecord> out;
  for (const auto& item : j) out.push_back({item.at("path").get<std::string>(), item.at("sha256").get<std::string>()});
  return out;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_all(path)); }

ArtifactRecord record_file(const std::string& path, const std::string& label) { return {label, sha256_file(path)}; }

std::string manifest_to_json(const ExperimentManifest& m) {
  json seeds = json::object();
  for (const auto& [name, value] : m.seeds) seeds[name] = value;
  json j = {{"command", m.command},         {"tool_version", m.tool_version},   {"config", m.config},
            {"seeds", seeds},               {"inputs", records_json(m.inputs)}, {"outputs", records_json(m.outputs)}};
  return j.dump(2) + "\n";
}

ExperimentManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    ExperimentManifest m;
    m.command = j.at("command").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config").get<std::string>();
    for (const auto& [name, value] : j.at("seeds").items()) m.seeds.emplace_back(name, value.get<std::uint64_t>());
    m.inputs = records_from(j.at("inputs"));
    m.outputs = records_from(j.at("outputs"));
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
}

void save_manifest(const std::string& path, const ExperimentManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << manifest_to_json(manifest);
}

ExperimentManifest load_manifest(const std::string& path) { return manifest_from_json(read_all(path)); }

std::vector<std::string> verify_manifest(const ExperimentManifest& manifest, const std::string& manifest_dir) {
  std::vector<std::string> mismatched;
  auto check = [&](const ArtifactRecord& r, const std::filesystem::path& full) {
    std::error_code ec;
    if (!std::filesystem::exists(full, ec) || sha256_file(full.string()) != r.sha256) mismatched.push_back(r.path);
  };
  for (const auto& r : manifest.inputs) check(r, r.path);
  for (const auto& r : manifest.outputs) check(r, std::filesystem::path(manifest_dir) / r.path);
  return mismatched;
}

}  // namespace viewmetric
