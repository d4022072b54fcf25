#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rcnet/image.hpp"

namespace rcnet {

/// 10 log10(1 / MSE) with peak 1; +infinity for identical inputs.
double psnr(std::span<const double> x, std::span<const double> y);
double psnr(const ImageRGB &x, const ImageRGB &y);

// Lightness (max over RGB) resampled so the longer side is at most `side`.
std::vector<double> loe_lightness(const ImageRGB &img, std::size_t side, std::size_t &height, std::size_t &width);

/// Lightness-order error: fraction of ordered pixel pairs whose relation
/// L(i) >= L(j) differs between the two images, times 1000. Images are
/// first reduced to at most 100 pixels per side.
double loe(const ImageRGB &enhanced, const ImageRGB &reference);

struct BrightnessConsistency {
    double ab = 0.0;   // population variance of per-image mean brightness, 0-255 scale
    double mabd = 0.0; // mean |mean_{k+1} - mean_k|, 0-255 scale
};

BrightnessConsistency ab_mabd(const std::vector<ImageRGB> &sequence);

/// Per-pixel displacement (dx, dy) in pixels.
struct FlowField {
    std::size_t height = 0, width = 0;
    std::vector<float> data; // (dx, dy) pairs, row-major

    bool operator==(const FlowField &) const = default;
};

// "RCFL", H u32, W u32, then H*W (dx, dy) f32 pairs, little-endian.
FlowField load_flow(const std::filesystem::path &path);
void save_flow(const FlowField &flow, const std::filesystem::path &path);

/// MSE between img_a and img_b bilinearly sampled at p + flow(p), over pixels
/// whose mask entry is nonzero and whose sample position lies inside img_b.
/// An empty mask (or no pixel left) is a DataError.
double warping_error(const ImageRGB &img_a, const ImageRGB &img_b, const FlowField &flow,
                     const std::vector<std::uint8_t> &mask);

} // namespace rcnet
