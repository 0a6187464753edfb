#include "beamkit/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace beamkit::manifest {

using json = nlohmann::json;

const char* version() { return "0.1.0"; }

namespace {

std::string hex(const unsigned char* digest, unsigned len) {
  static const char* alphabet = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = alphabet[digest[i] >> 4];
    out[2 * i + 1] = alphabet[digest[i] & 0xf];
  }
  return out;
}

}  // namespace

std::string sha256_bytes(const void* data, size_t len) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned digest_len = 0;
  if (EVP_Digest(data, len, digest.data(), &digest_len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256_bytes: digest failed");
  }
  return hex(digest.data(), digest_len);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("sha256_file: cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("sha256_file: context allocation failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    std::streamsize got = in.gcount();
    if (got > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(got));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned digest_len = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &digest_len);
  EVP_MD_CTX_free(ctx);
  return hex(digest.data(), digest_len);
}

void RunManifest::add_input(const std::string& path) {
  inputs.emplace_back(path, sha256_file(path));
}

void RunManifest::add_output(const std::string& path) {
  outputs.emplace_back(path, sha256_file(path));
}

std::string RunManifest::to_json_string() const {
  json j;
  j["tool_version"] = version();
  j["command"] = command;
  j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
  if (has_seed) j["seed"] = seed;
  auto files = [](const std::vector<std::pair<std::string, std::string>>& list) {
    json arr = json::array();
    for (const auto& [path, digest] : list) {
      arr.push_back(json{{"path", path}, {"sha256", digest}});
    }
    return arr;
  };
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("RunManifest: cannot write " + path);
  out << to_json_string() << "\n";
}

}  // namespace beamkit::manifest
