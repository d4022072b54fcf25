#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>

#include "rcnet/image.hpp"

namespace rcnet {

/// Per-view degradation: x = beta * (alpha * v)^gamma, then shot and read noise.
struct DegradationParams {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double shot_gain = 1000.0;
    double read_sigma = 0.01;
    std::uint64_t seed = 0;

    bool operator==(const DegradationParams &) const = default;
};

struct ParamRanges {
    double alpha_lo = 0.9, alpha_hi = 1.0;
    double beta_lo = 0.1, beta_hi = 0.3;
    double gamma_lo = 1.4, gamma_hi = 2.5;
};

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t &state);
// Independent child seed number `index` of `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

ImageRGB darken(const ImageRGB &img, const DegradationParams &p);

/// Poisson(v * shot_gain) / shot_gain + Normal(0, read_sigma), clamped to
/// [0,1]. Draws from a generator seeded with p.seed.
ImageRGB add_mixed_noise(const ImageRGB &img, const DegradationParams &p);

/// alpha, beta, gamma uniform over their ranges; the noise model and a fresh
/// noise seed are filled in as well.
DegradationParams sample_params(Rng &rng, double shot_gain = 1000.0, double read_sigma = 0.01,
                                const ParamRanges &ranges = {});

struct SynthOptions {
    double shot_gain = 1000.0;
    double read_sigma = 0.01;
    bool noise = true;
};

struct SynthTriplet {
    std::array<ImageRGB, 3> low;
    std::array<DegradationParams, 3> params;
};

SynthTriplet synth_triplet(const std::array<ImageRGB, 3> &gt, Rng &rng, const SynthOptions &opts = {});

// Re-applies recorded parameters (darken, then noise when enabled).
ImageRGB degrade(const ImageRGB &gt, const DegradationParams &p, bool noise = true);

using Dissimilarity = std::function<double(const ImageRGB &, const ImageRGB &)>;

// (1 - SSIM) / 2, in [0, 1].
double ssim_dissimilarity(const ImageRGB &a, const ImageRGB &b);

struct SimilarityGate {
    double threshold = 0.2;
    Dissimilarity measure = ssim_dissimilarity;
};

/// True iff all three pairwise dissimilarities are below the threshold.
bool gate_triplet(const std::array<ImageRGB, 3> &views, const SimilarityGate &gate = {});

/// Procedural scene seen from three horizontally/vertically shifted
/// viewpoints: smooth shading, colored shapes and fine texture.
std::array<ImageRGB, 3> toy_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                                  int max_shift = 3);

} // namespace rcnet
