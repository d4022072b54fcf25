#include "rcnet/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rcnet/error.hpp"

namespace rcnet {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(std::size_t line, const std::string &field, const std::string &what)
{
    throw DataError("manifest line " + std::to_string(line) + ": field '" + field + "': " + what);
}

const json &require(const json &obj, const char *field, std::size_t line)
{
    auto it = obj.find(field);
    if (it == obj.end())
        schema_error(line, field, "missing");
    return *it;
}

std::array<std::string, 3> three_paths(const json &obj, const char *field, std::size_t line)
{
    const json &v = require(obj, field, line);
    if (!v.is_array())
        schema_error(line, field, "expected an array of paths");
    if (v.size() != 3)
        schema_error(line, field, "exactly three views required, got " + std::to_string(v.size()));
    std::array<std::string, 3> out;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!v[i].is_string() || v[i].get<std::string>().empty())
            schema_error(line, field, "view " + std::to_string(i) + " is not a path");
        out[i] = v[i].get<std::string>();
    }
    return out;
}

double number(const json &obj, const char *field, std::size_t line)
{
    const json &v = require(obj, field, line);
    if (!v.is_number())
        schema_error(line, std::string("params.") + field, "expected a number");
    return v.get<double>();
}

DegradationParams parse_params(const json &obj, std::size_t line)
{
    if (!obj.is_object())
        schema_error(line, "params", "expected objects");
    DegradationParams p;
    p.alpha = number(obj, "alpha", line);
    p.beta = number(obj, "beta", line);
    p.gamma = number(obj, "gamma", line);
    p.shot_gain = number(obj, "shot_gain", line);
    p.read_sigma = number(obj, "read_sigma", line);
    const json &seed = require(obj, "seed", line);
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
        schema_error(line, "params.seed", "expected a non-negative integer");
    p.seed = seed.get<std::uint64_t>();
    if (!(p.shot_gain > 0))
        schema_error(line, "params.shot_gain", "must be positive");
    if (!(p.read_sigma >= 0))
        schema_error(line, "params.read_sigma", "must be non-negative");
    return p;
}

json params_json(const DegradationParams &p)
{
    return json{{"alpha", p.alpha},         {"beta", p.beta},   {"gamma", p.gamma},
                {"shot_gain", p.shot_gain}, {"read_sigma", p.read_sigma}, {"seed", p.seed}};
}

} // namespace

std::vector<const ManifestEntry *> TripletManifest::split(const std::string &tag) const
{
    std::vector<const ManifestEntry *> out;
    for (const auto &e : entries)
        if (e.split == tag)
            out.push_back(&e);
    return out;
}

TripletManifest parse_manifest(const std::string &text, const std::filesystem::path &root)
{
    TripletManifest m;
    m.root = root;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(is, raw)) {
        ++line;
        if (raw.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json obj;
        try {
            obj = json::parse(raw);
        } catch (const json::parse_error &e) {
            throw DataError("manifest line " + std::to_string(line) + ": not valid JSON: " + e.what());
        }
        if (!obj.is_object())
            throw DataError("manifest line " + std::to_string(line) + ": expected an object");
        ManifestEntry e;
        const json &scene = require(obj, "scene", line);
        if (!scene.is_string() || scene.get<std::string>().empty())
            schema_error(line, "scene", "expected a non-empty string");
        e.scene = scene.get<std::string>();
        if (!seen.insert(e.scene).second)
            schema_error(line, "scene", "duplicate scene id '" + e.scene + "'");
        if (auto it = obj.find("split"); it != obj.end()) {
            if (!it->is_string() || (*it != "train" && *it != "test"))
                schema_error(line, "split", "expected \"train\" or \"test\"");
            e.split = it->get<std::string>();
        }
        e.low = three_paths(obj, "low", line);
        e.gt = three_paths(obj, "gt", line);
        if (auto it = obj.find("params"); it != obj.end() && !it->is_null()) {
            if (!it->is_array() || it->size() != 3)
                schema_error(line, "params", "exactly three views required");
            std::array<DegradationParams, 3> ps;
            for (std::size_t i = 0; i < 3; ++i)
                ps[i] = parse_params((*it)[i], line);
            e.params = ps;
        }
        for (const auto &key : obj.items()) {
            static const std::set<std::string> known{"scene", "split", "low", "gt", "params"};
            if (!known.count(key.key()))
                schema_error(line, key.key(), "unknown field");
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

TripletManifest load_manifest(const std::filesystem::path &path, bool check_files)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open manifest " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    TripletManifest m = parse_manifest(buf.str(), path.parent_path());
    if (check_files) {
        for (const auto &e : m.entries)
            for (const auto *group : {&e.low, &e.gt})
                for (const auto &rel : *group)
                    if (!std::filesystem::exists(m.resolve(rel)))
                        throw DataError("manifest scene '" + e.scene + "': file not found: " +
                                        m.resolve(rel).string());
    }
    return m;
}

std::string format_manifest(const TripletManifest &m)
{
    std::string out;
    for (const auto &e : m.entries) {
        json obj;
        obj["scene"] = e.scene;
        obj["split"] = e.split;
        obj["low"] = e.low;
        obj["gt"] = e.gt;
        if (e.params) {
            json ps = json::array();
            for (const auto &p : *e.params)
                ps.push_back(params_json(p));
            obj["params"] = ps;
        } else {
            obj["params"] = nullptr;
        }
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void write_manifest(const TripletManifest &m, const std::filesystem::path &path)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw DataError("cannot write manifest " + path.string());
    os << format_manifest(m);
    if (!os)
        throw DataError("write failed: " + path.string());
}

} // namespace rcnet
