#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rcnet/alignment.hpp"
#include "rcnet/snapshot.hpp"
#include "rcnet/tensor.hpp"

namespace rcnet {

/// Network hyper-parameters and component switches. Views are positional:
/// slot 1 holds the primary view, slots 0 and 2 the auxiliary views.
struct ModelConfig {
    std::size_t channels = 16;
    std::size_t units = 3;
    std::size_t k = 4;
    std::size_t patch = 7;
    std::size_t radius = 2;
    std::size_t se_reduction = 4;
    std::size_t encoder_depth = 3;
    std::size_t confidence_hidden = 8;

    bool intra_en = true; // spatial + channel attention
    bool inter_af = true; // cross-view alignment and fusion
    bool e2a = true;      // stage prediction drives the alignment confidence
    bool a2e = true;      // top-1 matches feed the next stage's spatial attention

    void validate() const; // throws UsageError
    AlignSettings align() const { return {patch, k, radius}; }
    bool routes_top1() const { return a2e && inter_af; }

    std::vector<float> to_record() const;
    static ModelConfig from_record(const std::vector<float> &values);
    bool operator==(const ModelConfig &) const = default;
};

inline constexpr std::size_t primary_slot = 1;

template <typename Real>
using ViewSet = std::array<BasicTensor<Real>, 3>;

/// Named learnable tensors in creation order.
template <typename Real>
class ModelParams {
public:
    void add(std::string name, BasicTensor<Real> value);
    const BasicTensor<Real> &get(const std::string &name) const;
    BasicTensor<Real> &get(const std::string &name);
    bool contains(const std::string &name) const { return index_.count(name) != 0; }

    std::size_t size() const { return tensors_.size(); }
    const std::string &name(std::size_t i) const { return names_[i]; }
    BasicTensor<Real> &at(std::size_t i) { return tensors_[i]; }
    const BasicTensor<Real> &at(std::size_t i) const { return tensors_[i]; }
    std::size_t scalar_count() const;

    void zero_grad();
    // Leaf copies with gradient tracking on, converted to Other.
    template <typename Other>
    ModelParams<Other> cast() const;

private:
    std::vector<std::string> names_;
    std::vector<BasicTensor<Real>> tensors_;
    std::map<std::string, std::size_t> index_;
};

/// Fan-in scaled normal weights (std sqrt(2 / fan_in)), zero biases, output
/// head scaled by 0.1.
ModelParams<float> init_params(const ModelConfig &cfg, std::uint64_t seed);

// Copies the auxiliary-slot-0 weight blocks onto the slot-2 blocks of every
// layer that consumes a view concatenation, making the network symmetric
// under swapping the auxiliary views.
void symmetrize_views(ModelParams<float> &params, const ModelConfig &cfg);

template <typename Real>
ViewSet<Real> encode(const ModelParams<Real> &params, const ModelConfig &cfg, const ViewSet<Real> &views);

// Unit indices are zero-based.
template <typename Real>
ViewSet<Real> intra_view_en(const ModelParams<Real> &params, const ModelConfig &cfg, std::size_t t,
                            const ViewSet<Real> &features, const BasicTensor<Real> &top1_prev);

template <typename Real>
BasicTensor<Real> e2a_predict(const ModelParams<Real> &params, std::size_t t, const BasicTensor<Real> &primary);

// Per-pixel confidence in (0,1), [N,1,H,W].
template <typename Real>
BasicTensor<Real> confidence_eval(const ModelParams<Real> &params, std::size_t t, const BasicTensor<Real> &stage);

// Averages a [N,1,H,W] map over each patch of the padded grid -> [N,1,Hp,Wp].
template <typename Real>
BasicTensor<Real> pool_per_patch(const BasicTensor<Real> &map, std::size_t patch);

template <typename Real>
struct InterViewOutput {
    ViewSet<Real> features;       // primary slot fused, auxiliary slots passed through
    BasicTensor<Real> top1;       // [N,3C,H,W]; undefined at the last unit
    std::array<std::vector<Candidates>, 3> matches; // per view, per sample
};

template <typename Real>
InterViewOutput<Real> inter_view_af(const ModelParams<Real> &params, const ModelConfig &cfg, std::size_t t,
                                    const ViewSet<Real> &intra, const BasicTensor<Real> &stage);

template <typename Real>
BasicTensor<Real> a2e_route(const ViewSet<Real> &top1);

template <typename Real>
struct ForwardResult {
    BasicTensor<Real> result;              // [N,3,H,W]
    std::vector<BasicTensor<Real>> stages; // I_t for every unit
    std::vector<std::array<std::vector<Candidates>, 3>> matches; // per unit
};

/// Runs the ReEAF units and the head starting from encoded features.
/// `primary_input` is the primary low-light image the head adds to.
template <typename Real>
ForwardResult<Real> forward_features(const ModelParams<Real> &params, const ModelConfig &cfg,
                                     const ViewSet<Real> &features, const BasicTensor<Real> &primary_input);

/// views: three [N,3,H,W] tensors, primary in slot 1. H, W >= 16.
template <typename Real>
ForwardResult<Real> forward(const ModelParams<Real> &params, const ModelConfig &cfg, const ViewSet<Real> &views);

inline constexpr const char *config_record_name = "__config__";

std::vector<NamedTensor> to_records(const ModelParams<float> &params, const ModelConfig &cfg);
ModelParams<float> from_records(const std::vector<NamedTensor> &records, ModelConfig &cfg);

void save_model(const std::filesystem::path &path, const ModelParams<float> &params, const ModelConfig &cfg);
ModelParams<float> load_model(const std::filesystem::path &path, ModelConfig &cfg);

} // namespace rcnet
