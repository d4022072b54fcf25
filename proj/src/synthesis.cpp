#include "rcnet/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include "rcnet/error.hpp"
#include "rcnet/losses.hpp"

namespace rcnet {

std::uint64_t splitmix64(std::uint64_t &state)
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
    std::uint64_t s = master ^ splitmix64(index);
    return splitmix64(s);
}

ImageRGB darken(const ImageRGB &img, const DegradationParams &p)
{
    ImageRGB out = img;
    for (auto &v : out.data)
        v = float(p.beta * std::pow(p.alpha * double(v), p.gamma));
    return out;
}

ImageRGB add_mixed_noise(const ImageRGB &img, const DegradationParams &p)
{
    if (!(p.shot_gain > 0) || !(p.read_sigma >= 0))
        throw ContractError("add_mixed_noise: shot_gain must be positive and read_sigma non-negative");
    Rng rng(p.seed);
    std::normal_distribution<double> read(0.0, p.read_sigma > 0 ? p.read_sigma : 1.0);
    ImageRGB out = img;
    for (auto &v : out.data) {
        const double lambda = double(v) * p.shot_gain;
        double x = 0.0;
        if (lambda > 0) {
            std::poisson_distribution<long long> shot(lambda);
            x = double(shot(rng)) / p.shot_gain;
        }
        if (p.read_sigma > 0)
            x += read(rng);
        v = float(std::clamp(x, 0.0, 1.0));
    }
    return out;
}

DegradationParams sample_params(Rng &rng, double shot_gain, double read_sigma, const ParamRanges &r)
{
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    DegradationParams p;
    p.alpha = uniform(r.alpha_lo, r.alpha_hi);
    p.beta = uniform(r.beta_lo, r.beta_hi);
    p.gamma = uniform(r.gamma_lo, r.gamma_hi);
    p.shot_gain = shot_gain;
    p.read_sigma = read_sigma;
    p.seed = rng();
    return p;
}

ImageRGB degrade(const ImageRGB &gt, const DegradationParams &p, bool noise)
{
    ImageRGB dark = darken(gt, p);
    return noise ? add_mixed_noise(dark, p) : dark;
}

SynthTriplet synth_triplet(const std::array<ImageRGB, 3> &gt, Rng &rng, const SynthOptions &opts)
{
    SynthTriplet out;
    for (std::size_t v = 0; v < 3; ++v) {
        out.params[v] = sample_params(rng, opts.shot_gain, opts.read_sigma);
        out.low[v] = degrade(gt[v], out.params[v], opts.noise);
    }
    return out;
}

double ssim_dissimilarity(const ImageRGB &a, const ImageRGB &b)
{
    return (1.0 - ssim_image(a, b)) / 2.0;
}

bool gate_triplet(const std::array<ImageRGB, 3> &views, const SimilarityGate &gate)
{
    for (std::size_t i = 1; i < 3; ++i)
        if (views[i].height != views[0].height || views[i].width != views[0].width)
            throw DimensionError("gate_triplet: views differ in size");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
            if (!(gate.measure(views[i], views[j]) < gate.threshold))
                return false;
    return true;
}

std::array<ImageRGB, 3> toy_scene(std::uint64_t seed, std::size_t height, std::size_t width, int max_shift)
{
    if (max_shift < 0)
        throw ContractError("toy_scene: max_shift must be non-negative");
    Rng rng(seed);
    auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    struct Blob {
        double cy, cx, ry, rx;
        double color[3];
        bool disc;
    };
    const double base[3] = {uni(0.2, 0.6), uni(0.2, 0.6), uni(0.2, 0.6)};
    const double grad_y = uni(-0.3, 0.3), grad_x = uni(-0.3, 0.3);
    const double freq_y = uni(0.1, 0.3), freq_x = uni(0.1, 0.3), tex_amp = uni(0.02, 0.06);
    std::vector<Blob> blobs(6 + rng() % 5);
    for (auto &b : blobs) {
        b.cy = uni(0, double(height));
        b.cx = uni(0, double(width));
        b.ry = uni(4, double(height) / 3);
        b.rx = uni(4, double(width) / 3);
        for (auto &c : b.color)
            c = uni(0.05, 0.95);
        b.disc = rng() % 2 == 0;
    }

    // World-space radiance; views sample it at integer offsets.
    auto radiance = [&](double y, double x, std::size_t c) {
        double v = base[c] + grad_y * (y / double(height) - 0.5) + grad_x * (x / double(width) - 0.5);
        for (const auto &b : blobs) {
            const double dy = (y - b.cy) / b.ry, dx = (x - b.cx) / b.rx;
            const double r = b.disc ? std::sqrt(dy * dy + dx * dx) : std::max(std::abs(dy), std::abs(dx));
            // soft edge about 4 px wide
            const double e = std::clamp((1.0 - r) * std::min(b.ry, b.rx) / 4.0 + 0.5, 0.0, 1.0);
            const double w = 0.65 * e * e * (3.0 - 2.0 * e);
            v = (1.0 - w) * v + w * b.color[c];
        }
        v += tex_amp * std::sin(freq_y * y + 0.7 * double(c)) * std::cos(freq_x * x);
        return std::clamp(v, 0.0, 1.0);
    };

    std::array<std::pair<int, int>, 3> offsets{};
    for (std::size_t v = 0; v < 3; ++v) {
        if (v == 1 || max_shift == 0)
            continue;
        const int sign = v == 0 ? -1 : 1;
        offsets[v] = {int(rng() % std::uint64_t(max_shift + 1)) * (rng() % 2 ? 1 : -1),
                      sign * (1 + int(rng() % std::uint64_t(max_shift)))};
    }
    std::array<ImageRGB, 3> views;
    for (std::size_t v = 0; v < 3; ++v) {
        views[v] = ImageRGB(height, width);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    views[v].at(y, x, c) = float(radiance(double(y) + offsets[v].first,
                                                          double(x) + offsets[v].second, c));
    }
    return views;
}

} // namespace rcnet
