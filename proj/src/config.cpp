#include "rcnet/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "rcnet/error.hpp"

namespace rcnet {

using nlohmann::json;

namespace {

struct Field {
    std::function<void(RunConfig &, const json &)> set;
    std::function<json(const RunConfig &)> get;
};

template <typename T>
T as(const std::string &key, const json &v)
{
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (v.is_boolean())
                return v.get<bool>();
            if (v.is_number_integer() && (v == 0 || v == 1))
                return v.get<int>() != 0;
            throw UsageError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer())
                throw UsageError("");
            if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
                throw UsageError("");
            return v.get<T>();
        } else {
            if (!v.is_number())
                throw UsageError("");
            return v.get<T>();
        }
    } catch (const std::exception &) {
        throw UsageError("config key '" + key + "': invalid value " + v.dump());
    }
}

#define FIELD(key, member)                                                                                        \
    {                                                                                                             \
        key, Field                                                                                                \
        {                                                                                                         \
            [](RunConfig &c, const json &v) { c.member = as<decltype(c.member)>(key, v); },                       \
                [](const RunConfig &c) { return json(c.member); }                                                 \
        }                                                                                                         \
    }

const std::map<std::string, Field> &fields()
{
    static const std::map<std::string, Field> table{
        FIELD("model.channels", model.channels),
        FIELD("model.units", model.units),
        FIELD("model.k", model.k),
        FIELD("model.patch", model.patch),
        FIELD("model.radius", model.radius),
        FIELD("model.se_reduction", model.se_reduction),
        FIELD("model.encoder_depth", model.encoder_depth),
        FIELD("model.confidence_hidden", model.confidence_hidden),
        FIELD("model.intra_en", model.intra_en),
        FIELD("model.inter_af", model.inter_af),
        FIELD("model.e2a", model.e2a),
        FIELD("model.a2e", model.a2e),
        FIELD("train.crop", train.crop),
        FIELD("train.flip_prob", train.flip_prob),
        FIELD("train.batch_triplets", train.batch_triplets),
        FIELD("train.lr_initial", train.lr_initial),
        FIELD("train.lr_final", train.lr_final),
        FIELD("train.decay_at", train.decay_at),
        FIELD("train.total_iters", train.total_iters),
        FIELD("train.seed", train.seed),
        FIELD("train.eval_every", train.eval_every),
        FIELD("train.checkpoint_every", train.checkpoint_every),
        FIELD("train.clip_norm", train.clip_norm),
        FIELD("synth.shot_gain", synth.shot_gain),
        FIELD("synth.read_sigma", synth.read_sigma),
        FIELD("synth.noise", synth.noise),
        FIELD("synth.gate_threshold", synth.gate_threshold),
        FIELD("synth.seed", synth.seed),
        FIELD("synth.toy_scenes", synth.toy_scenes),
        FIELD("synth.toy_test", synth.toy_test),
        FIELD("synth.toy_size", synth.toy_size),
        FIELD("synth.toy_max_shift", synth.toy_max_shift),
    };
    return table;
}

#undef FIELD

void set_json(RunConfig &c, const std::string &key, const json &v)
{
    auto it = fields().find(key);
    if (it == fields().end())
        throw UsageError("unknown config key '" + key + "'");
    it->second.set(c, v);
}

} // namespace

void RunConfig::set(const std::string &key, const std::string &value)
{
    json v;
    try {
        v = json::parse(value);
    } catch (const json::parse_error &) {
        v = value;
    }
    set_json(*this, key, v);
}

void RunConfig::apply_override(const std::string &assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw UsageError("override '" + assignment + "' is not of the form key=value");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path &path)
{
    std::ifstream is(path);
    if (!is)
        throw UsageError("cannot open config file " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error &e) {
            throw UsageError(path.string() + ":" + std::to_string(n) + ": not valid JSON");
        }
        if (!obj.is_object())
            throw UsageError(path.string() + ":" + std::to_string(n) + ": expected an object");
        for (const auto &item : obj.items())
            set_json(*this, item.key(), item.value());
    }
}

std::vector<std::string> RunConfig::keys()
{
    std::vector<std::string> out;
    for (const auto &kv : fields())
        out.push_back(kv.first);
    return out;
}

std::string RunConfig::dump() const
{
    std::string out;
    for (const auto &kv : fields())
        out += json{{kv.first, kv.second.get(*this)}}.dump() + "\n";
    return out;
}

void RunConfig::write_snapshot(const std::filesystem::path &path) const
{
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw DataError("cannot write " + path.string());
    os << dump();
}

} // namespace rcnet
