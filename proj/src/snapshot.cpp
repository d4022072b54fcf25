#include "rcnet/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rcnet/error.hpp"

namespace rcnet {

static_assert(std::endian::native == std::endian::little, "snapshot IO assumes a little-endian host");

namespace {

constexpr char magic[4] = {'R', 'C', 'T', 'N'};
constexpr std::uint8_t dtype_f32 = 0;

template <typename T>
void put(std::ostream &os, T v)
{
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

template <typename T>
T get(std::istream &is, const char *what)
{
    T v{};
    if (!is.read(reinterpret_cast<char *>(&v), sizeof v))
        throw DataError(std::string("snapshot truncated while reading ") + what);
    return v;
}

} // namespace

void write_snapshot(std::ostream &os, const std::vector<NamedTensor> &records)
{
    os.write(magic, 4);
    put<std::uint32_t>(os, snapshot_version);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
    for (const auto &r : records) {
        if (numel(r.shape) != r.data.size())
            throw DimensionError("snapshot record '" + r.name + "' data does not match shape " + to_string(r.shape));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), std::streamsize(r.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
        for (auto e : r.shape)
            put<std::uint64_t>(os, e);
        put<std::uint8_t>(os, dtype_f32);
        os.write(reinterpret_cast<const char *>(r.data.data()), std::streamsize(r.data.size() * sizeof(float)));
    }
    if (!os)
        throw DataError("snapshot write failed");
}

std::vector<NamedTensor> read_snapshot(std::istream &is)
{
    char head[4];
    if (!is.read(head, 4) || std::memcmp(head, magic, 4) != 0)
        throw DataError("not an RCTN snapshot (bad magic)");
    const auto version = get<std::uint32_t>(is, "version");
    if (version != snapshot_version)
        throw DataError("unsupported snapshot version " + std::to_string(version));
    const auto count = get<std::uint32_t>(is, "record count");
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor r;
        const auto len = get<std::uint32_t>(is, "name length");
        if (len > (1u << 16))
            throw DataError("snapshot record name too long");
        r.name.resize(len);
        if (!is.read(r.name.data(), len))
            throw DataError("snapshot truncated while reading name");
        const auto rank = get<std::uint32_t>(is, "rank");
        if (rank > 8)
            throw DataError("snapshot record '" + r.name + "' has implausible rank");
        for (std::uint32_t a = 0; a < rank; ++a)
            r.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is, "extent")));
        const auto dtype = get<std::uint8_t>(is, "dtype");
        if (dtype != dtype_f32)
            throw DataError("snapshot record '" + r.name + "' has unsupported dtype " + std::to_string(dtype));
        const std::size_t n = numel(r.shape);
        if (n > (std::size_t(1) << 32))
            throw DataError("snapshot record '" + r.name + "' is too large");
        r.data.resize(n);
        if (!is.read(reinterpret_cast<char *>(r.data.data()), std::streamsize(n * sizeof(float))))
            throw DataError("snapshot truncated in data of '" + r.name + "'");
        out.push_back(std::move(r));
    }
    return out;
}

void save_snapshot(const std::filesystem::path &path, const std::vector<NamedTensor> &records)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    write_snapshot(os, records);
}

std::vector<NamedTensor> load_snapshot(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open snapshot " + path.string());
    return read_snapshot(is);
}

const NamedTensor &find_record(const std::vector<NamedTensor> &records, const std::string &name)
{
    for (const auto &r : records)
        if (r.name == name)
            return r;
    throw DataError("snapshot has no record named '" + name + "'");
}

} // namespace rcnet
