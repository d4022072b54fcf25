#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rcnet/tensor.hpp"

// RCTN tensor snapshot: little-endian "RCTN", version u32, count u32, then per
// record {name length u32, UTF-8 name, rank u32, extents u64[rank], dtype u8
// (0 = f32), raw data}.

namespace rcnet {

inline constexpr std::uint32_t snapshot_version = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;

    bool operator==(const NamedTensor &) const = default;
};

void write_snapshot(std::ostream &os, const std::vector<NamedTensor> &records);
std::vector<NamedTensor> read_snapshot(std::istream &is);

void save_snapshot(const std::filesystem::path &path, const std::vector<NamedTensor> &records);
std::vector<NamedTensor> load_snapshot(const std::filesystem::path &path);

// Looks up a record by name; DataError if absent.
const NamedTensor &find_record(const std::vector<NamedTensor> &records, const std::string &name);

} // namespace rcnet
