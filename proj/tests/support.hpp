#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "rcnet/image.hpp"
#include "rcnet/tensor.hpp"

namespace testing {

template <typename Real = float>
rcnet::BasicTensor<Real> randn(std::mt19937_64 &rng, rcnet::Shape shape, double scale = 1.0)
{
    std::normal_distribution<double> d(0.0, scale);
    std::vector<Real> v(rcnet::numel(shape));
    for (auto &x : v)
        x = Real(d(rng));
    return rcnet::BasicTensor<Real>::from(std::move(shape), std::move(v));
}

template <typename Real = float>
rcnet::BasicTensor<Real> uniform(std::mt19937_64 &rng, rcnet::Shape shape, double lo = 0.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<Real> v(rcnet::numel(shape));
    for (auto &x : v)
        x = Real(d(rng));
    return rcnet::BasicTensor<Real>::from(std::move(shape), std::move(v));
}

inline rcnet::ImageRGB random_image(std::mt19937_64 &rng, std::size_t h, std::size_t w, float lo = 0.0f,
                                    float hi = 1.0f)
{
    std::uniform_real_distribution<float> d(lo, hi);
    rcnet::ImageRGB img(h, w);
    for (auto &x : img.data)
        x = d(rng);
    return img;
}

// Fresh per-test scratch directory.
inline std::filesystem::path scratch(const std::string &name)
{
    const char *root = std::getenv("RCNET_TEST_TMP");
    std::filesystem::path p = root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "rcnet_tests";
    p /= name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing
