#include "rcnet/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rcnet/error.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/simd/kernels.hpp"

namespace rcnet {

namespace {

std::size_t reflect(std::size_t i, std::size_t n)
{
    if (n == 1)
        return 0;
    const std::size_t period = 2 * (n - 1);
    const std::size_t m = i % period;
    return m < n ? m : period - m;
}

void check_geometry(const char *op, std::size_t rows_a, std::size_t cols_a, std::size_t len_a, std::size_t rows_b,
                    std::size_t cols_b, std::size_t len_b)
{
    if (rows_a != rows_b || cols_a != cols_b || len_a != len_b)
        throw ContractError(std::string(op) + ": primary and source grids are not congruent");
}

void check_k(std::size_t k, std::size_t radius)
{
    const std::size_t full = (2 * radius + 1) * (2 * radius + 1);
    if (k == 0)
        throw ContractError("top-K search: K must be at least 1");
    if (k > full)
        throw ContractError("top-K search: K=" + std::to_string(k) + " exceeds the " + std::to_string(full) +
                            "-cell search window");
}

struct Window {
    std::size_t r0, r1, c0, c1; // inclusive
};

Window window_of(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c, std::size_t radius)
{
    return {r > radius ? r - radius : 0, std::min(rows - 1, r + radius), c > radius ? c - radius : 0,
            std::min(cols - 1, c + radius)};
}

Candidates empty_candidates(std::size_t rows, std::size_t cols, std::size_t k)
{
    Candidates out;
    out.rows = rows;
    out.cols = cols;
    out.k = k;
    out.index.assign(rows * cols * k, 0);
    out.rho.assign(rows * cols * k, 0.0);
    out.count.assign(rows * cols, 0);
    return out;
}

} // namespace

std::size_t padded_extent(std::size_t extent, std::size_t patch)
{
    if (patch == 0)
        throw ContractError("patch size must be positive");
    return (extent + patch - 1) / patch * patch;
}

std::size_t window_population(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c, std::size_t radius)
{
    const Window w = window_of(rows, cols, r, c, radius);
    return (w.r1 - w.r0 + 1) * (w.c1 - w.c0 + 1);
}

template <typename Real>
PatchGrid<Real> partition(const Real *chw, std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t patch)
{
    if (patch == 0)
        throw ContractError("partition: patch size must be positive");
    if (height == 0 || width == 0 || channels == 0)
        throw DimensionError("partition: empty feature map");
    PatchGrid<Real> g;
    g.patch = patch;
    g.channels = channels;
    g.height = height;
    g.width = width;
    g.rows = padded_extent(height, patch) / patch;
    g.cols = padded_extent(width, patch) / patch;
    const std::size_t len = g.length();
    g.cells.resize(g.cell_count() * len);
    g.norms.resize(g.cell_count());
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            Real *dst = g.cells.data() + (r * g.cols + c) * len;
            for (std::size_t ch = 0; ch < channels; ++ch)
                for (std::size_t y = 0; y < patch; ++y) {
                    const std::size_t sy = reflect(r * patch + y, height);
                    for (std::size_t x = 0; x < patch; ++x)
                        *dst++ = chw[(ch * height + sy) * width + reflect(c * patch + x, width)];
                }
            const Real *v = g.cells.data() + (r * g.cols + c) * len;
            g.norms[r * g.cols + c] = std::sqrt(simd::dot_acc64(v, v, len));
        }
    }
    return g;
}

template <typename Real>
PatchGrid<Real> partition(const BasicTensor<Real> &x, std::size_t n, std::size_t patch)
{
    if (x.rank() != 4 || n >= x.dim(0))
        throw DimensionError("partition: expected [N,C,H,W] tensor, got " + to_string(x.shape()));
    const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
    return partition(x.data().data() + n * c * h * w, c, h, w, patch);
}

template <typename Real>
double correlate(std::span<const Real> a, std::span<const Real> b)
{
    if (a.size() != b.size())
        throw DimensionError("correlate: patch vectors differ in length");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * double(b[i]);
        aa += double(a[i]) * double(a[i]);
        bb += double(b[i]) * double(b[i]);
    }
    if (aa == 0.0 || bb == 0.0)
        return 0.0;
    return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

template <typename Real>
Candidates topk_search(const PatchGrid<Real> &primary, const PatchGrid<Real> &source, std::size_t k,
                       std::size_t radius)
{
    check_geometry("topk_search", primary.rows, primary.cols, primary.length(), source.rows, source.cols,
                   source.length());
    check_k(k, radius);
    Candidates out = empty_candidates(primary.rows, primary.cols, k);
    const std::size_t len = primary.length();
    std::vector<std::uint32_t> best_idx(k);
    std::vector<double> best_rho(k);

    for (std::size_t r = 0; r < primary.rows; ++r) {
        for (std::size_t c = 0; c < primary.cols; ++c) {
            const std::size_t cell = r * primary.cols + c;
            const Real *p = primary.cells.data() + cell * len;
            const double pn = primary.norms[cell];
            const Window w = window_of(primary.rows, primary.cols, r, c, radius);
            std::size_t filled = 0;
            for (std::size_t sr = w.r0; sr <= w.r1; ++sr) {
                for (std::size_t sc = w.c0; sc <= w.c1; ++sc) {
                    const std::size_t s = sr * source.cols + sc;
                    const double sn = source.norms[s];
                    double rho = 0.0;
                    if (pn > 0.0 && sn > 0.0)
                        rho = std::clamp(simd::dot_acc64(p, source.cells.data() + s * len, len) / (pn * sn), -1.0,
                                         1.0);
                    // Insert after every entry with rho >= this one, so earlier
                    // scan positions win ties.
                    std::size_t pos = filled;
                    while (pos > 0 && best_rho[pos - 1] < rho)
                        --pos;
                    if (pos >= k)
                        continue;
                    const std::size_t last = std::min(filled, k - 1);
                    for (std::size_t m = last; m > pos; --m) {
                        best_rho[m] = best_rho[m - 1];
                        best_idx[m] = best_idx[m - 1];
                    }
                    best_rho[pos] = rho;
                    best_idx[pos] = std::uint32_t(s);
                    filled = std::min(filled + 1, k);
                }
            }
            out.count[cell] = std::uint32_t(filled);
            for (std::size_t m = 0; m < filled; ++m) {
                out.index[cell * k + m] = best_idx[m];
                out.rho[cell * k + m] = best_rho[m];
            }
        }
    }
    return out;
}

template <typename Real>
Candidates brute_force_oracle(const PatchGrid<Real> &primary, const PatchGrid<Real> &source, std::size_t k,
                              std::size_t radius)
{
    check_geometry("brute_force_oracle", primary.rows, primary.cols, primary.length(), source.rows, source.cols,
                   source.length());
    check_k(k, radius);
    Candidates out = empty_candidates(primary.rows, primary.cols, k);
    for (std::size_t r = 0; r < primary.rows; ++r) {
        for (std::size_t c = 0; c < primary.cols; ++c) {
            const std::size_t cell = r * primary.cols + c;
            std::vector<std::pair<double, std::uint32_t>> scored;
            for (std::size_t sr = 0; sr < source.rows; ++sr)
                for (std::size_t sc = 0; sc < source.cols; ++sc) {
                    const std::size_t dr = sr > r ? sr - r : r - sr;
                    const std::size_t dc = sc > c ? sc - c : c - sc;
                    if (std::max(dr, dc) > radius)
                        continue;
                    const std::size_t s = sr * source.cols + sc;
                    scored.emplace_back(correlate(primary.cell(cell), source.cell(s)), std::uint32_t(s));
                }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto &a, const auto &b) { return a.first > b.first; });
            const std::size_t n = std::min(k, scored.size());
            out.count[cell] = std::uint32_t(n);
            for (std::size_t m = 0; m < n; ++m) {
                out.rho[cell * k + m] = scored[m].first;
                out.index[cell * k + m] = scored[m].second;
            }
        }
    }
    return out;
}

template <typename Real>
std::vector<Real> weighted_average(const std::vector<std::span<const Real>> &candidates, double conf)
{
    if (candidates.empty())
        throw ContractError("weighted_average: no candidates");
    if (!std::isfinite(conf))
        throw NumericDomainError("weighted_average: non-finite confidence");
    const std::size_t len = candidates[0].size();
    std::vector<double> acc(len, 0.0);
    for (const auto &cand : candidates) {
        if (cand.size() != len)
            throw DimensionError("weighted_average: candidates differ in length");
        for (std::size_t i = 0; i < len; ++i)
            acc[i] += double(cand[i]);
    }
    const double factor = conf / double(candidates.size());
    std::vector<Real> out(len);
    for (std::size_t i = 0; i < len; ++i)
        out[i] = Real(acc[i] * factor);
    return out;
}

template <typename Real>
BasicTensor<Real> assemble_aligned(const std::vector<BasicTensor<Real>> &candidates, const BasicTensor<Real> &avg,
                                   std::size_t height, std::size_t width)
{
    if (candidates.empty())
        throw ContractError("assemble_aligned: no candidates");
    std::vector<BasicTensor<Real>> parts = candidates;
    parts.push_back(avg);
    for (const auto &p : parts)
        if (p.shape() != candidates[0].shape())
            throw DimensionError("assemble_aligned: candidate geometry mismatch " + to_string(p.shape()) + " vs " +
                                 to_string(candidates[0].shape()));
    return crop(concat_channels(parts), height, width);
}

template <typename Real>
AlignOutput<Real> align_features(const BasicTensor<Real> &primary, const BasicTensor<Real> &source,
                                 const BasicTensor<Real> &confidence, const AlignSettings &settings)
{
    if (primary.rank() != 4 || primary.shape() != source.shape())
        throw DimensionError("align_features: primary " + to_string(primary.shape()) + " and source " +
                             to_string(source.shape()) + " must be equal [N,C,H,W]");
    const std::size_t n = primary.dim(0), h = primary.dim(2), w = primary.dim(3);
    const std::size_t patch = settings.patch, k = settings.k;
    const std::size_t hp = padded_extent(h, patch), wp = padded_extent(w, patch);
    if (confidence.defined() && confidence.shape() != Shape{n, 1, hp, wp})
        throw DimensionError("align_features: confidence must be [N,1,Hp,Wp], got " + to_string(confidence.shape()));

    AlignOutput<Real> out;
    for (std::size_t s = 0; s < n; ++s) {
        auto pg = partition(primary, s, patch);
        auto sg = partition(source, s, patch);
        out.candidates.push_back(topk_search(pg, sg, k, settings.radius));
    }
    const std::size_t rows = hp / patch, cols = wp / patch, cells = rows * cols;

    auto padded = reflect_pad(source, hp - h, wp - w);
    std::vector<BasicTensor<Real>> gathered;
    bool full = true;
    for (const auto &cand : out.candidates)
        for (auto cnt : cand.count)
            full = full && cnt == k;

    BasicTensor<Real> avg;
    for (std::size_t rank = 0; rank < k; ++rank) {
        std::vector<std::uint32_t> table(n * cells);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t j = 0; j < cells; ++j) {
                const auto &cand = out.candidates[s];
                table[s * cells + j] = cand.at(j, rank < cand.count[j] ? rank : 0);
            }
        auto g = gather_patches(padded, patch, table);
        gathered.push_back(g);
        BasicTensor<Real> term = g;
        if (!full) {
            std::vector<Real> weight(n * hp * wp);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t y = 0; y < hp; ++y)
                    for (std::size_t x = 0; x < wp; ++x) {
                        const std::uint32_t cnt = out.candidates[s].count[(y / patch) * cols + x / patch];
                        weight[(s * hp + y) * wp + x] = rank < cnt ? Real(1) / Real(cnt) : Real(0);
                    }
            term = mul(g, BasicTensor<Real>::from(Shape{n, 1, hp, wp}, std::move(weight)));
        }
        avg = avg.defined() ? add(avg, term) : term;
    }
    if (full)
        avg = scale(avg, Real(1) / Real(k));
    if (confidence.defined())
        avg = mul(avg, confidence);

    out.top1 = crop(gathered[0], h, w);
    out.aligned = assemble_aligned(gathered, avg, h, w);
    return out;
}

#define RCNET_INSTANTIATE_ALIGN(Real)                                                                             \
    template PatchGrid<Real> partition(const Real *, std::size_t, std::size_t, std::size_t, std::size_t);        \
    template PatchGrid<Real> partition(const BasicTensor<Real> &, std::size_t, std::size_t);                     \
    template double correlate(std::span<const Real>, std::span<const Real>);                                     \
    template Candidates topk_search(const PatchGrid<Real> &, const PatchGrid<Real> &, std::size_t, std::size_t); \
    template Candidates brute_force_oracle(const PatchGrid<Real> &, const PatchGrid<Real> &, std::size_t,       \
                                           std::size_t);                                                         \
    template std::vector<Real> weighted_average(const std::vector<std::span<const Real>> &, double);            \
    template BasicTensor<Real> assemble_aligned(const std::vector<BasicTensor<Real>> &, const BasicTensor<Real> &, \
                                                std::size_t, std::size_t);                                       \
    template AlignOutput<Real> align_features(const BasicTensor<Real> &, const BasicTensor<Real> &,              \
                                              const BasicTensor<Real> &, const AlignSettings &);

RCNET_INSTANTIATE_ALIGN(float)
RCNET_INSTANTIATE_ALIGN(double)

} // namespace rcnet
