#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rcnet/network.hpp"
#include "rcnet/synthesis.hpp"
#include "rcnet/trainer.hpp"

namespace rcnet {

struct SynthConfig {
    double shot_gain = 1000.0;
    double read_sigma = 0.01;
    bool noise = true;
    double gate_threshold = 0.2;
    std::uint64_t seed = 0;
    std::size_t toy_scenes = 0; // > 0: generate procedural scenes instead of reading a manifest
    std::size_t toy_test = 0;   // trailing toy scenes tagged "test"
    std::size_t toy_size = 64;
    int toy_max_shift = 3;
};

/// Every tunable of the command-line tool, addressed by dotted keys such as
/// "model.channels" or "train.lr_initial". Precedence: --set > --config file >
/// defaults.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;

    /// `value` is JSON text; bare words are accepted as strings. Throws
    /// UsageError for unknown keys or ill-typed values.
    void set(const std::string &key, const std::string &value);
    // "key=value"
    void apply_override(const std::string &assignment);
    // Line-delimited JSON objects whose members are dotted keys.
    void load_file(const std::filesystem::path &path);

    static std::vector<std::string> keys();
    // One {"key": value} object per line, loadable with load_file().
    std::string dump() const;
    void write_snapshot(const std::filesystem::path &path) const;
};

} // namespace rcnet
