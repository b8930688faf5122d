#pragma once

// File-backed code repository: a manifest plus the files it names. Everything
// is read once at load time; the store never changes afterwards.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cpbgen/common.hpp"
#include "json.hpp"

namespace cpbgen::kb {

inline constexpr std::string_view kManifestName = "manifest.json";

struct ResourceInfo {
  std::string id;
  std::string description;
  std::vector<std::string> tags;
};

struct Resource {
  std::string id;
  std::string description;
  std::vector<std::string> tags;
  std::string content;
};

/// 64-bit FNV-1a.
inline std::uint64_t content_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class KnowledgeBase {
 public:
  /// Loads <dir>/manifest.json. An empty manifest file is an empty store.
  static KnowledgeBase load(const std::filesystem::path& dir) {
    KnowledgeBase kb;
    auto manifest = dir / kManifestName;
    std::string text;
    try {
      text = read_file(manifest);
    } catch (const Error& e) {
      throw Error(Errc::ManifestCorrupt, e.detail());
    }
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return kb;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ManifestCorrupt, manifest.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("resources") || !j["resources"].is_array())
      throw Error(Errc::ManifestCorrupt, manifest.string() + ": expected {\"resources\": [...]}");

    std::set<std::string> seen;
    for (const auto& r : j["resources"]) {
      Resource res;
      try {
        res.id = r.at("id").get<std::string>();
        res.description = r.value("description", "");
        res.tags = r.value("tags", std::vector<std::string>{});
        auto rel = r.at("path").get<std::string>();
        if (res.id.empty()) throw Error(Errc::ManifestCorrupt, "empty id");
        if (!seen.insert(res.id).second) throw Error(Errc::ManifestCorrupt, "duplicate id '" + res.id + "'");
        try {
          res.content = read_file(dir / rel);
        } catch (const Error&) {
          throw Error(Errc::ManifestCorrupt, "'" + res.id + "' names missing file " + rel);
        }
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ManifestCorrupt, manifest.string() + ": " + e.what());
      }
      kb.hashes_.push_back(content_hash(res.content));
      kb.resources_.push_back(std::move(res));
    }
    return kb;
  }

  static KnowledgeBase load_default() { return load(data_dir() / "kb"); }

  /// Manifest order.
  std::vector<ResourceInfo> list() const {
    std::vector<ResourceInfo> out;
    for (const auto& r : resources_) out.push_back({r.id, r.description, r.tags});
    return out;
  }

  const Resource& get(std::string_view id) const { return resources_[index_of(id)]; }

  /// Hash recorded at load time.
  std::uint64_t hash(std::string_view id) const { return hashes_[index_of(id)]; }

  std::size_t size() const { return resources_.size(); }

 private:
  std::size_t index_of(std::string_view id) const {
    for (std::size_t i = 0; i < resources_.size(); ++i) {
      if (resources_[i].id == id) return i;
    }
    throw Error(Errc::NotFound, "no resource '" + std::string(id) + "'");
  }

  std::vector<Resource> resources_;
  std::vector<std::uint64_t> hashes_;
};

}  // namespace cpbgen::kb
