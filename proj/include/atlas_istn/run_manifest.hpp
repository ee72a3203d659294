#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace atlas_istn::run {

inline constexpr int kRunManifestFormatVersion = 1;

// Hex SHA-1 over "blob <size>\0<content>", i.e. what `git hash-object` prints.
std::string git_blob_hash(const std::filesystem::path& file);

struct FileDigest {
    std::string path;  // as given for inputs, relative to the out dir for outputs
    std::string hash;
    bool operator==(const FileDigest&) const = default;
};

// Hash of a sorted listing "<hash> <path>\n"; stable under directory order.
std::string combined_hash(std::vector<FileDigest> digests);

// All regular files below `root`, paths relative to it, sorted. Files whose
// name starts with `skip_prefix` are left out.
std::vector<FileDigest> digest_tree(const std::filesystem::path& root, const std::string& skip_prefix = "run_manifest");

struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    bool deterministic = false;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::optional<std::string> started_utc, finished_utc;  // omitted under --deterministic
    std::string status = "ok";
    std::string error;

    nlohmann::json to_json() const;
    // Written as <out_dir>/run_manifest_<command>.json.
    std::filesystem::path write(const std::filesystem::path& out_dir) const;
};

std::string utc_now();

}  // namespace atlas_istn::run
