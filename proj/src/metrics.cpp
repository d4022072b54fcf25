#include "rcnet/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "rcnet/error.hpp"

namespace rcnet {

namespace {

void require_same_size(const char *op, const ImageRGB &a, const ImageRGB &b)
{
    if (a.height != b.height || a.width != b.width)
        throw DimensionError(std::string(op) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                             std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                             std::to_string(b.width) + ")");
}

} // namespace

double psnr(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.empty())
        throw DimensionError("psnr: inputs differ in size or are empty");
    // extended accumulator: a uniform error e must give mse == e * e
    long double acc = 0.0L;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        acc += static_cast<long double>(d * d);
    }
    const double mse = static_cast<double>(acc / static_cast<long double>(x.size()));
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

double psnr(const ImageRGB &x, const ImageRGB &y)
{
    require_same_size("psnr", x, y);
    std::vector<double> a(x.data.begin(), x.data.end()), b(y.data.begin(), y.data.end());
    return psnr(a, b);
}

std::vector<double> loe_lightness(const ImageRGB &img, std::size_t side, std::size_t &height, std::size_t &width)
{
    const std::size_t longest = std::max(img.height, img.width);
    const double f = longest > side ? double(side) / double(longest) : 1.0;
    height = std::max<std::size_t>(1, std::size_t(std::lround(double(img.height) * f)));
    width = std::max<std::size_t>(1, std::size_t(std::lround(double(img.width) * f)));
    // Evenly spaced nearest samples, first and last row/column included.
    auto pick = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
        if (n_out == 1)
            return std::size_t(0);
        return std::size_t(std::lround(double(i) * double(n_in - 1) / double(n_out - 1)));
    };
    std::vector<double> out(height * width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t sy = pick(y, height, img.height), sx = pick(x, width, img.width);
            out[y * width + x] = std::max({img.at(sy, sx, 0), img.at(sy, sx, 1), img.at(sy, sx, 2)});
        }
    return out;
}

double loe(const ImageRGB &enhanced, const ImageRGB &reference)
{
    require_same_size("loe", enhanced, reference);
    std::size_t h, w;
    const auto le = loe_lightness(enhanced, 100, h, w);
    const auto lr = loe_lightness(reference, 100, h, w);
    const std::size_t n = le.size();
    std::uint64_t disagree = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ei = le[i], ri = lr[i];
        for (std::size_t j = 0; j < n; ++j)
            disagree += (ei >= le[j]) != (ri >= lr[j]);
    }
    return 1000.0 * double(disagree) / (double(n) * double(n));
}

BrightnessConsistency ab_mabd(const std::vector<ImageRGB> &sequence)
{
    if (sequence.size() < 2)
        throw DimensionError("ab_mabd: need at least two images");
    std::vector<double> means;
    for (const auto &img : sequence) {
        if (img.data.empty())
            throw DimensionError("ab_mabd: empty image");
        double acc = 0.0;
        for (float v : img.data)
            acc += v;
        means.push_back(255.0 * acc / double(img.data.size()));
    }
    double mu = 0.0;
    for (double m : means)
        mu += m;
    mu /= double(means.size());
    BrightnessConsistency out;
    for (double m : means)
        out.ab += (m - mu) * (m - mu);
    out.ab /= double(means.size());
    for (std::size_t k = 1; k < means.size(); ++k)
        out.mabd += std::abs(means[k] - means[k - 1]);
    out.mabd /= double(means.size() - 1);
    return out;
}

FlowField load_flow(const std::filesystem::path &path)
{
    static_assert(std::endian::native == std::endian::little);
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open flow file " + path.string());
    char magic[4];
    std::uint32_t h = 0, w = 0;
    if (!is.read(magic, 4) || std::memcmp(magic, "RCFL", 4) != 0)
        throw DataError(path.string() + ": not an RCFL flow file");
    if (!is.read(reinterpret_cast<char *>(&h), 4) || !is.read(reinterpret_cast<char *>(&w), 4))
        throw DataError(path.string() + ": truncated flow header");
    if (h == 0 || w == 0 || std::uint64_t(h) * w > (1ull << 28))
        throw DataError(path.string() + ": implausible flow size");
    FlowField f;
    f.height = h;
    f.width = w;
    f.data.resize(std::size_t(h) * w * 2);
    if (!is.read(reinterpret_cast<char *>(f.data.data()), std::streamsize(f.data.size() * sizeof(float))))
        throw DataError(path.string() + ": truncated flow data");
    for (float v : f.data)
        if (!std::isfinite(v))
            throw DataError(path.string() + ": non-finite flow vector");
    return f;
}

void save_flow(const FlowField &flow, const std::filesystem::path &path)
{
    if (flow.data.size() != flow.height * flow.width * 2)
        throw DimensionError("save_flow: data does not match dimensions");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw DataError("cannot write " + path.string());
    const std::uint32_t h = std::uint32_t(flow.height), w = std::uint32_t(flow.width);
    os.write("RCFL", 4);
    os.write(reinterpret_cast<const char *>(&h), 4);
    os.write(reinterpret_cast<const char *>(&w), 4);
    os.write(reinterpret_cast<const char *>(flow.data.data()), std::streamsize(flow.data.size() * sizeof(float)));
    if (!os)
        throw DataError("write failed: " + path.string());
}

double warping_error(const ImageRGB &img_a, const ImageRGB &img_b, const FlowField &flow,
                     const std::vector<std::uint8_t> &mask)
{
    require_same_size("warping_error", img_a, img_b);
    if (flow.height != img_a.height || flow.width != img_a.width || flow.data.size() != img_a.pixels() * 2)
        throw DimensionError("warping_error: flow does not match image size");
    if (mask.size() != img_a.pixels())
        throw DimensionError("warping_error: mask does not match image size");
    const double max_y = double(img_b.height - 1), max_x = double(img_b.width - 1);
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t y = 0; y < img_a.height; ++y) {
        for (std::size_t x = 0; x < img_a.width; ++x) {
            const std::size_t p = y * img_a.width + x;
            if (!mask[p])
                continue;
            const double sx = double(x) + double(flow.data[2 * p]);
            const double sy = double(y) + double(flow.data[2 * p + 1]);
            if (!(sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y))
                continue;
            const std::size_t x0 = std::size_t(std::floor(sx)), y0 = std::size_t(std::floor(sy));
            const std::size_t x1 = std::min(x0 + 1, img_b.width - 1), y1 = std::min(y0 + 1, img_b.height - 1);
            const double fx = sx - double(x0), fy = sy - double(y0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1 - fx) * img_b.at(y0, x0, c) + fx * img_b.at(y0, x1, c);
                const double bottom = (1 - fx) * img_b.at(y1, x0, c) + fx * img_b.at(y1, x1, c);
                const double d = double(img_a.at(y, x, c)) - ((1 - fy) * top + fy * bottom);
                acc += d * d;
            }
            ++used;
        }
    }
    if (used == 0)
        throw DataError("warping_error: no unoccluded in-bounds pixel");
    return acc / double(used * 3);
}

} // namespace rcnet
