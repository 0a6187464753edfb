#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace beamkit::manifest {

// Library version string, kept in step with the CMake project version.
const char* version();

// Hex-encoded SHA-256.
std::string sha256_bytes(const void* data, size_t len);
std::string sha256_file(const std::string& path);  // throws std::runtime_error on IO

// Everything needed to rerun a command and check its outputs: the argv line,
// the fully resolved configuration (after defaults), the seed when one
// applies, and content digests of every file read or written.  Deliberately
// carries no timestamps or host details, so a rerun of a deterministic
// command produces a byte-identical manifest.
struct RunManifest {
  std::string command;
  std::string config_json;  // "{}" when a command has no structured config
  bool has_seed = false;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // (path, sha256)
  std::vector<std::pair<std::string, std::string>> outputs;  // (path, sha256)

  void add_input(const std::string& path);   // digests the file now
  void add_output(const std::string& path);  // digests the file now

  std::string to_json_string() const;
  void write(const std::string& path) const;
};

}  // namespace beamkit::manifest
