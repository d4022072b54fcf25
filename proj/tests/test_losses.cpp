#include <cmath>

#include "doctest.h"
#include "rcnet/error.hpp"
#include "rcnet/losses.hpp"
#include "rcnet/ops.hpp"
#include "support.hpp"

using namespace rcnet;

namespace {

// Straightforward SSIM: Gaussian weights recomputed from scratch, statistics
// summed per window position.
double scalar_ssim(const Tensor64 &x, const Tensor64 &y)
{
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    double g[11][11], gsum = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            gsum += g[i][j];
        }
    double total = 0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * H * W;
            for (std::size_t oy = 0; oy + 11 <= H; ++oy)
                for (std::size_t ox = 0; ox + 11 <= W; ++ox) {
                    double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                    for (int i = 0; i < 11; ++i)
                        for (int j = 0; j < 11; ++j) {
                            const double w = g[i][j] / gsum;
                            const double a = x.at(base + (oy + i) * W + ox + j);
                            const double b = y.at(base + (oy + i) * W + ox + j);
                            mx += w * a;
                            my += w * b;
                            xx += w * a * a;
                            yy += w * b * b;
                            xy += w * a * b;
                        }
                    const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
                    const double c1 = 1e-4, c2 = 9e-4;
                    total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    ++count;
                }
        }
    return total / double(count);
}

} // namespace

TEST_CASE("gaussian kernel")
{
    auto k = gaussian_kernel(11, 1.5);
    REQUIRE(k.size() == 121);
    double s = 0;
    for (double v : k)
        s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k[60] > k[59]);
    CHECK(k[0] == doctest::Approx(k[120]).epsilon(1e-15));
}

TEST_CASE("ssim identities")
{
    std::mt19937_64 rng(1);
    auto x = testing::uniform<double>(rng, {2, 3, 24, 20});
    CHECK(std::abs(ssim(x, x).item() - 1.0) <= 1e-9);
    auto y = testing::uniform<double>(rng, {2, 3, 24, 20});
    CHECK(std::abs(ssim(x, y).item() - ssim(y, x).item()) <= 1e-9);

    std::vector<double> board(16 * 16), inv(16 * 16);
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) {
            board[i * 16 + j] = double((i + j) % 2);
            inv[i * 16 + j] = 1.0 - board[i * 16 + j];
        }
    auto b = Tensor64::from({1, 1, 16, 16}, board), bi = Tensor64::from({1, 1, 16, 16}, inv);
    const double s = ssim(b, bi).item();
    CHECK(s < 0.0);
    CHECK(std::abs(s - scalar_ssim(b, bi)) <= 1e-9);

    CHECK_THROWS_AS(ssim(x, testing::uniform<double>(rng, {2, 3, 24, 21})), DimensionError);
    CHECK_THROWS_AS(ssim(testing::uniform<double>(rng, {1, 1, 10, 20}), testing::uniform<double>(rng, {1, 1, 10, 20})),
                    DimensionError);
}

TEST_CASE("ssim matches the scalar implementation")
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = testing::uniform<double>(rng, {1, 3, 32, 32});
        auto y = testing::uniform<double>(rng, {1, 3, 32, 32});
        CHECK(std::abs(ssim(x, y).item() - scalar_ssim(x, y)) <= 1e-6);
        auto xf = x.cast<float>(), yf = y.cast<float>();
        CHECK(std::abs(double(ssim(xf, yf).item()) - scalar_ssim(x, y)) <= 1e-4);
    }
    ImageRGB a = testing::random_image(rng, 32, 32), b = testing::random_image(rng, 32, 32);
    CHECK(std::abs(ssim_image(a, b) - scalar_ssim(to_tensor<double>(a), to_tensor<double>(b))) <= 1e-9);
}

TEST_CASE("l_rec")
{
    std::mt19937_64 rng(3);
    auto y = testing::uniform<double>(rng, {1, 3, 16, 16}, 0.2, 0.8);
    CHECK(l_rec(y, y).item() == doctest::Approx(0.0).epsilon(1e-12));
    auto shifted = add_scalar(y, 0.1);
    CHECK(std::abs(l1_mean(shifted, y).item() - 0.1) <= 1e-12);

    for (int i = 0; i < 50; ++i) {
        auto a = testing::uniform<double>(rng, {1, 3, 16, 16});
        auto b = testing::uniform<double>(rng, {1, 3, 16, 16});
        CHECK(l_rec(a, b).item() > 0.0);
        CHECK(std::abs(l_rec(a, a.detach()).item()) <= 1e-12);
    }
}

TEST_CASE("l_total sums the stage terms")
{
    std::mt19937_64 rng(4);
    auto gt = testing::uniform<double>(rng, {1, 3, 16, 16});
    auto r = testing::uniform<double>(rng, {1, 3, 16, 16});
    std::vector<Tensor64> stages{testing::uniform<double>(rng, {1, 3, 16, 16}),
                                 testing::uniform<double>(rng, {1, 3, 16, 16}),
                                 testing::uniform<double>(rng, {1, 3, 16, 16})};
    double hand = l_rec(r, gt).item();
    for (const auto &s : stages)
        hand += l_rec(s, gt).item();
    CHECK(std::abs(l_total(stages, r, gt).item() - hand) <= 1e-6);
    CHECK(std::abs(l_total({}, r, gt).item() - l_rec(r, gt).item()) <= 1e-12);
    CHECK(std::abs(l_total({gt, gt}, gt, gt).item()) <= 1e-12);

    const double dropped = l_total(stages, r, gt, {1.0, 0.0, 1.0}).item();
    CHECK(std::abs(dropped - (hand - l_rec(stages[1], gt).item())) <= 1e-9);
    CHECK_THROWS_AS(l_total(stages, r, gt, {1.0}), ContractError);
}
