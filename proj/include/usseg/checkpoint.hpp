#pragma once

// Checkpoint archive: a directory with manifest.txt and one BTSR file per
// tensor. Manifest lines: `name file n c h w fnv1a64-hex`.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "usseg/params.hpp"

namespace usseg {

inline constexpr const char* kManifestHeader = "usseg-checkpoint 1";

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void checkpoint_save(const ParamStore<float>& params, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << kManifestHeader << "\n";
  std::size_t i = 0;
  for (const auto& e : params.entries()) {
    char file[32];
    std::snprintf(file, sizeof file, "%04zu.btsr", i++);
    const std::string bytes = btsr::encode(e.value);
    btsr::write_file((fs::path(dir) / file).string(), bytes);
    const Shape s = e.value.shape();
    manifest << e.name << " " << file << " " << s.n << " " << s.c << " " << s.h << " " << s.w << " "
             << hex64(fnv1a64(bytes)) << "\n";
  }
  std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint manifest in " + dir);
  out << manifest.str();
}

inline ParamStore<float> checkpoint_load(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.txt";
  std::ifstream in(mpath);
  if (!in) throw DataError("checkpoint manifest not found: " + mpath.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw ParseError(mpath.string() + ": bad manifest header");
  ParamStore<float> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file, sum;
    Shape s;
    if (!(ls >> name >> file >> s.n >> s.c >> s.h >> s.w >> sum))
      throw ParseError(mpath.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
    const fs::path tpath = fs::path(dir) / file;
    if (!fs::exists(tpath)) throw MissingTensorError("checkpoint tensor file missing for '" + name + "': " + tpath.string());
    const std::string bytes = btsr::read_file(tpath.string());
    if (hex64(fnv1a64(bytes)) != sum) throw ChecksumError("checksum mismatch for tensor '" + name + "' in " + tpath.string());
    Tensor<float> t = btsr::decode(bytes, name);
    if (!(t.shape() == s))
      throw DimError("tensor '" + name + "' has dims " + t.shape().str() + " but the manifest says " + s.str());
    out.add(name, std::move(t));
  }
  return out;
}

// Copies checkpoint values into a model built with the expected
// configuration; every model tensor must be present with matching dims.
inline void checkpoint_load_into(ParamStore<float>& model, const std::string& dir) {
  const ParamStore<float> loaded = checkpoint_load(dir);
  for (auto& e : model.entries()) {
    if (!loaded.contains(e.name)) throw MissingTensorError("checkpoint lacks tensor '" + e.name + "'");
    const Tensor<float>& v = loaded.value(e.name);
    if (!(v.shape() == e.value.shape()))
      throw DimError("tensor '" + e.name + "' has dims " + v.shape().str() + " in the checkpoint but the model expects " +
                     e.value.shape().str());
    e.value = v;
  }
  if (loaded.size() != model.size()) {
    for (const auto& e : loaded.entries())
      if (!model.contains(e.name)) throw DimError("checkpoint tensor '" + e.name + "' does not exist in the model");
  }
}

}  // namespace usseg
