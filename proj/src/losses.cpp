#include "rcnet/losses.hpp"

#include <cmath>

#include "rcnet/error.hpp"
#include "rcnet/ops.hpp"

namespace rcnet {

std::vector<double> gaussian_kernel(std::size_t k, double sigma)
{
    std::vector<double> g1(k);
    const double c = (double(k) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        g1[i] = std::exp(-((double(i) - c) * (double(i) - c)) / (2.0 * sigma * sigma));
        total += g1[i];
    }
    for (auto &v : g1)
        v /= total;
    std::vector<double> g(k * k);
    for (std::size_t y = 0; y < k; ++y)
        for (std::size_t x = 0; x < k; ++x)
            g[y * k + x] = g1[y] * g1[x];
    return g;
}

namespace {

template <typename Real>
void require_same(const char *op, const BasicTensor<Real> &x, const BasicTensor<Real> &y)
{
    if (x.shape() != y.shape())
        throw DimensionError(std::string(op) + ": shapes " + to_string(x.shape()) + " and " + to_string(y.shape()) +
                             " differ");
}

template <typename Real>
const std::vector<Real> &window_taps()
{
    static const std::vector<Real> taps = [] {
        auto g = gaussian_kernel(ssim_window, ssim_sigma);
        return std::vector<Real>(g.begin(), g.end());
    }();
    return taps;
}

} // namespace

template <typename Real>
BasicTensor<Real> ssim(const BasicTensor<Real> &x, const BasicTensor<Real> &y)
{
    require_same("ssim", x, y);
    if (x.rank() != 4)
        throw DimensionError("ssim: expected [N,C,H,W], got " + to_string(x.shape()));
    if (x.dim(2) < ssim_window || x.dim(3) < ssim_window)
        throw DimensionError("ssim: images must be at least 11x11, got " + to_string(x.shape()));
    const auto &taps = window_taps<Real>();
    auto filt = [&](const BasicTensor<Real> &t) { return filter2d_valid(t, taps, ssim_window); };

    auto mu_x = filt(x);
    auto mu_y = filt(y);
    auto mu_xx = mul(mu_x, mu_x);
    auto mu_yy = mul(mu_y, mu_y);
    auto mu_xy = mul(mu_x, mu_y);
    auto s_xx = sub(filt(mul(x, x)), mu_xx);
    auto s_yy = sub(filt(mul(y, y)), mu_yy);
    auto s_xy = sub(filt(mul(x, y)), mu_xy);

    const Real c1 = Real(ssim_c1), c2 = Real(ssim_c2);
    auto num = mul(add_scalar(scale(mu_xy, Real(2)), c1), add_scalar(scale(s_xy, Real(2)), c2));
    auto den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(s_xx, s_yy), c2));
    return mean(div(num, den));
}

template <typename Real>
BasicTensor<Real> l1_mean(const BasicTensor<Real> &x, const BasicTensor<Real> &y)
{
    require_same("l1_mean", x, y);
    return mean(abs(sub(x, y)));
}

template <typename Real>
BasicTensor<Real> l_rec(const BasicTensor<Real> &x, const BasicTensor<Real> &y)
{
    require_same("l_rec", x, y);
    return add(l1_mean(x, y), add_scalar(scale(ssim(x, y), Real(-1)), Real(1)));
}

template <typename Real>
BasicTensor<Real> l_total(const std::vector<BasicTensor<Real>> &intermediates, const BasicTensor<Real> &result,
                          const BasicTensor<Real> &gt, const std::vector<double> &stage_weights)
{
    if (!stage_weights.empty() && stage_weights.size() != intermediates.size())
        throw ContractError("l_total: " + std::to_string(stage_weights.size()) + " stage weights for " +
                            std::to_string(intermediates.size()) + " stages");
    BasicTensor<Real> total = l_rec(result, gt);
    for (std::size_t t = 0; t < intermediates.size(); ++t) {
        const double w = stage_weights.empty() ? 1.0 : stage_weights[t];
        if (w == 0.0)
            continue;
        auto term = l_rec(intermediates[t], gt);
        total = add(total, w == 1.0 ? term : scale(term, Real(w)));
    }
    return total;
}

double ssim_image(const ImageRGB &a, const ImageRGB &b)
{
    if (a.height != b.height || a.width != b.width)
        throw DimensionError("ssim: image sizes differ");
    return ssim(to_tensor<double>(a), to_tensor<double>(b)).item();
}

#define RCNET_INSTANTIATE_LOSSES(Real)                                                                            \
    template BasicTensor<Real> ssim(const BasicTensor<Real> &, const BasicTensor<Real> &);                       \
    template BasicTensor<Real> l1_mean(const BasicTensor<Real> &, const BasicTensor<Real> &);                    \
    template BasicTensor<Real> l_rec(const BasicTensor<Real> &, const BasicTensor<Real> &);                      \
    template BasicTensor<Real> l_total(const std::vector<BasicTensor<Real>> &, const BasicTensor<Real> &,        \
                                       const BasicTensor<Real> &, const std::vector<double> &);

RCNET_INSTANTIATE_LOSSES(float)
RCNET_INSTANTIATE_LOSSES(double)

} // namespace rcnet
