#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcnet/synthesis.hpp"

namespace rcnet {

struct ManifestEntry {
    std::string scene;
    std::string split = "train";
    std::array<std::string, 3> low;
    std::array<std::string, 3> gt;
    std::optional<std::array<DegradationParams, 3>> params;

    bool operator==(const ManifestEntry &) const = default;
};

/// One JSON object per line:
/// {"scene":..,"split":"train"|"test","low":[3 paths],"gt":[3 paths],"params":[3 objects]|null}
/// Paths are relative to `root`, the directory holding the manifest.
struct TripletManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(const std::string &relative) const { return root / relative; }
    std::vector<const ManifestEntry *> split(const std::string &tag) const;
};

/// Throws DataError naming the offending field on schema violations, on
/// duplicate scene ids and (when check_files) on missing referenced files.
TripletManifest load_manifest(const std::filesystem::path &path, bool check_files = true);
TripletManifest parse_manifest(const std::string &text, const std::filesystem::path &root);

void write_manifest(const TripletManifest &m, const std::filesystem::path &path);
std::string format_manifest(const TripletManifest &m);

} // namespace rcnet
