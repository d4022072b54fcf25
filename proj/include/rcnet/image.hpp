#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rcnet/tensor.hpp"

namespace rcnet {

/// H x W x 3 interleaved float image, nominally in [0,1].
struct ImageRGB {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    ImageRGB() = default;
    ImageRGB(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), data(h * w * 3, fill) {}

    float &at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
    std::size_t pixels() const { return height * width; }

    bool operator==(const ImageRGB &) const = default;
};

// Smallest image side accepted by the network.
inline constexpr std::size_t min_network_side = 16;

/// PNG (8/16-bit; gray and palette are expanded, alpha dropped) or binary PPM.
/// 8-bit samples map to v/255, 16-bit to v/65535. Throws DataError.
ImageRGB load_image(const std::filesystem::path &path);

/// Writes 8-bit PNG, or PPM when the extension is .ppm. Values are clamped to
/// [0,1] and rounded half away from zero.
void save_image(const ImageRGB &img, const std::filesystem::path &path);

// Single-channel mask; a pixel is valid when its first sample is nonzero.
std::vector<std::uint8_t> load_mask(const std::filesystem::path &path, std::size_t &height, std::size_t &width);

std::uint8_t quantize8(float v);
ImageRGB clamped(const ImageRGB &img);
float mean_intensity(const ImageRGB &img);

ImageRGB crop_image(const ImageRGB &img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
ImageRGB flip_horizontal(const ImageRGB &img);

/// Packs equally sized images into an [N,3,H,W] tensor.
template <typename Real>
BasicTensor<Real> to_tensor(const std::vector<const ImageRGB *> &images);
template <typename Real>
BasicTensor<Real> to_tensor(const ImageRGB &img)
{
    return to_tensor<Real>(std::vector<const ImageRGB *>{&img});
}

/// Extracts sample n of an [N,3,H,W] tensor (values copied as-is, not clamped).
template <typename Real>
ImageRGB from_tensor(const BasicTensor<Real> &t, std::size_t n = 0);

} // namespace rcnet
