#include "rcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rcnet/error.hpp"
#include "rcnet/simd/kernels.hpp"

namespace rcnet {

namespace {

template <typename Real>
using Node = detail::Node<Real>;

[[noreturn]] void dim_error(const char *op, const std::string &what)
{
    throw DimensionError(std::string(op) + ": " + what);
}

template <typename Real>
void require_rank(const char *op, const BasicTensor<Real> &x, std::size_t rank)
{
    if (x.rank() != rank)
        dim_error(op, "expected rank " + std::to_string(rank) + ", got shape " + to_string(x.shape()));
}

template <typename Real>
void accumulate(Node<Real> &target, const std::vector<Real> &g)
{
    if (!target.requires_grad)
        return;
    auto &dst = target.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
        dst[i] += g[i];
}

struct Nchw {
    std::size_t n, c, h, w;
    std::size_t plane() const { return h * w; }
};

template <typename Real>
Nchw nchw(const BasicTensor<Real> &x)
{
    const auto &s = x.shape();
    return {s[0], s[1], s[2], s[3]};
}

} // namespace

// ---------------------------------------------------------------------------
// conv2d

namespace {

// Stride-1 convolution on a zero-padded copy of each input plane. With the
// output computed at the padded row pitch, every (ic, ky, kx) tap becomes one
// long axpy; the trailing (k-1) columns of each row are scratch.
template <typename Real>
BasicTensor<Real> conv2d_stride1(const BasicTensor<Real> &input, const BasicTensor<Real> &kernel,
                                 const BasicTensor<Real> &bias, std::size_t pad)
{
    const Nchw in = nchw(input);
    const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t hp = in.h + 2 * pad, wp = in.w + 2 * pad;
    const std::size_t ho = hp - kh + 1, wo = wp - kw + 1;
    const std::size_t span = (ho - 1) * wp + wo;

    auto xd = input.data();
    auto wd = kernel.data();
    const bool has_bias = bias.defined();

    std::vector<Real> padded(in.n * in.c * hp * wp, Real(0));
    for (std::size_t p = 0; p < in.n * in.c; ++p) {
        const Real *src = xd.data() + p * in.plane();
        Real *dst = padded.data() + p * hp * wp;
        for (std::size_t y = 0; y < in.h; ++y)
            std::copy_n(src + y * in.w, in.w, dst + (y + pad) * wp + pad);
    }

    std::vector<Real> out(in.n * co * ho * wo);
    std::vector<Real> acc(ho * wp);
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t o = 0; o < co; ++o) {
            std::fill(acc.begin(), acc.end(), Real(0));
            for (std::size_t i = 0; i < in.c; ++i) {
                const Real *plane = padded.data() + (n * in.c + i) * hp * wp;
                const Real *taps = wd.data() + (o * in.c + i) * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx)
                        simd::axpy(taps[ky * kw + kx], plane + ky * wp + kx, acc.data(), span);
            }
            const Real b = has_bias ? bias.data()[o] : Real(0);
            Real *dst = out.data() + (n * co + o) * ho * wo;
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x)
                    dst[y * wo + x] = acc[y * wp + x] + b;
        }
    }

    std::vector<detail::NodePtr<Real>> inputs{input.node(), kernel.node()};
    if (has_bias)
        inputs.push_back(bias.node());

    auto backward = [in, co, kh, kw, hp, wp, ho, wo, span, pad, has_bias,
                     padded = std::move(padded)](Node<Real> &self) {
        Node<Real> &xn = *self.inputs[0];
        Node<Real> &wn = *self.inputs[1];
        const auto &g = self.grad;
        const auto &wdat = wn.data;
        std::vector<Real> dpadded;
        if (xn.requires_grad)
            dpadded.assign(padded.size(), Real(0));
        std::vector<Real> dw(wn.requires_grad ? wdat.size() : 0, Real(0));
        std::vector<Real> db(has_bias ? co : 0, Real(0));
        std::vector<Real> gp(ho * wp, Real(0));

        for (std::size_t n = 0; n < in.n; ++n) {
            for (std::size_t o = 0; o < co; ++o) {
                const Real *gsrc = g.data() + (n * co + o) * ho * wo;
                for (std::size_t y = 0; y < ho; ++y)
                    std::copy_n(gsrc + y * wo, wo, gp.data() + y * wp);
                if (has_bias) {
                    Real s = 0;
                    for (std::size_t k = 0; k < ho * wo; ++k)
                        s += gsrc[k];
                    db[o] += s;
                }
                for (std::size_t i = 0; i < in.c; ++i) {
                    const std::size_t poff = (n * in.c + i) * hp * wp;
                    const std::size_t toff = (o * in.c + i) * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t shift = poff + ky * wp + kx;
                            if (!dw.empty())
                                dw[toff + ky * kw + kx] += simd::dot(gp.data(), padded.data() + shift, span);
                            if (!dpadded.empty())
                                simd::axpy(wdat[toff + ky * kw + kx], gp.data(), dpadded.data() + shift, span);
                        }
                    }
                }
            }
        }

        if (!dpadded.empty()) {
            std::vector<Real> dx(in.n * in.c * in.plane());
            for (std::size_t p = 0; p < in.n * in.c; ++p)
                for (std::size_t y = 0; y < in.h; ++y)
                    std::copy_n(dpadded.data() + p * hp * wp + (y + pad) * wp + pad, in.w,
                                dx.data() + p * in.plane() + y * in.w);
            accumulate(xn, dx);
        }
        if (!dw.empty())
            accumulate(wn, dw);
        if (has_bias)
            accumulate(*self.inputs[2], db);
    };

    return detail::make_result<Real>("conv2d", Shape{in.n, co, ho, wo}, std::move(out), std::move(inputs),
                                     std::move(backward));
}

// Direct loops for strided convolution (not on the network's hot path).
template <typename Real>
BasicTensor<Real> conv2d_generic(const BasicTensor<Real> &input, const BasicTensor<Real> &kernel,
                                 const BasicTensor<Real> &bias, std::size_t stride, std::size_t pad)
{
    const Nchw in = nchw(input);
    const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t ho = (in.h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (in.w + 2 * pad - kw) / stride + 1;
    const bool has_bias = bias.defined();
    auto xd = input.data();
    auto wd = kernel.data();

    auto for_each_tap = [=](auto &&fn) {
        for (std::size_t n = 0; n < in.n; ++n)
            for (std::size_t o = 0; o < co; ++o)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox)
                        for (std::size_t i = 0; i < in.c; ++i)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                                if (iy < 0 || iy >= std::ptrdiff_t(in.h))
                                    continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::ptrdiff_t ix =
                                        std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                                    if (ix < 0 || ix >= std::ptrdiff_t(in.w))
                                        continue;
                                    fn(((n * co + o) * ho + oy) * wo + ox,
                                       ((n * in.c + i) * in.h + std::size_t(iy)) * in.w + std::size_t(ix),
                                       ((o * in.c + i) * kh + ky) * kw + kx, o);
                                }
                            }
    };

    std::vector<Real> out(in.n * co * ho * wo, Real(0));
    for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi, std::size_t) { out[oi] += wd[wi] * xd[xi]; });
    if (has_bias) {
        for (std::size_t n = 0; n < in.n; ++n)
            for (std::size_t o = 0; o < co; ++o)
                for (std::size_t k = 0; k < ho * wo; ++k)
                    out[(n * co + o) * ho * wo + k] += bias.data()[o];
    }

    std::vector<detail::NodePtr<Real>> inputs{input.node(), kernel.node()};
    if (has_bias)
        inputs.push_back(bias.node());
    auto backward = [for_each_tap, co, ho, wo, in, has_bias](Node<Real> &self) {
        Node<Real> &xn = *self.inputs[0];
        Node<Real> &wn = *self.inputs[1];
        std::vector<Real> dx(xn.data.size(), Real(0));
        std::vector<Real> dw(wn.data.size(), Real(0));
        for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi, std::size_t) {
            dx[xi] += wn.data[wi] * self.grad[oi];
            dw[wi] += xn.data[xi] * self.grad[oi];
        });
        accumulate(xn, dx);
        accumulate(wn, dw);
        if (has_bias) {
            std::vector<Real> db(co, Real(0));
            for (std::size_t n = 0; n < in.n; ++n)
                for (std::size_t o = 0; o < co; ++o)
                    for (std::size_t k = 0; k < ho * wo; ++k)
                        db[o] += self.grad[(n * co + o) * ho * wo + k];
            accumulate(*self.inputs[2], db);
        }
    };
    return detail::make_result<Real>("conv2d", Shape{in.n, co, ho, wo}, std::move(out), std::move(inputs),
                                     std::move(backward));
}

} // namespace

template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real> &input, const BasicTensor<Real> &kernel,
                         const BasicTensor<Real> &bias, std::size_t stride, std::size_t padding)
{
    require_rank("conv2d", input, 4);
    require_rank("conv2d", kernel, 4);
    if (stride == 0)
        dim_error("conv2d", "stride must be positive");
    if (input.dim(1) != kernel.dim(1))
        dim_error("conv2d", "input channels " + std::to_string(input.dim(1)) + " != kernel input channels " +
                                std::to_string(kernel.dim(1)));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)))
        dim_error("conv2d", "bias shape " + to_string(bias.shape()) + " does not match output channels");
    if (input.dim(2) + 2 * padding < kernel.dim(2) || input.dim(3) + 2 * padding < kernel.dim(3))
        dim_error("conv2d", "padded input " + to_string(input.shape()) + " smaller than kernel " +
                                to_string(kernel.shape()));
    if (stride == 1)
        return conv2d_stride1(input, kernel, bias, padding);
    return conv2d_generic(input, kernel, bias, stride, padding);
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

// Maps each flat index of `full` to the flat index of a broadcast operand.
std::vector<std::size_t> broadcast_index(const Shape &full, const Shape &small)
{
    const std::size_t rank = full.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t a = rank; a-- > 0;) {
        stride[a] = small[a] == 1 ? 0 : s;
        s *= small[a];
    }
    std::vector<std::size_t> idx(numel(full));
    std::vector<std::size_t> counter(rank, 0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = offset;
        for (std::size_t a = rank; a-- > 0;) {
            if (++counter[a] < full[a]) {
                offset += stride[a];
                break;
            }
            offset -= stride[a] * (full[a] - 1);
            counter[a] = 0;
        }
    }
    return idx;
}

} // namespace

template <typename Real>
BasicTensor<Real> elementwise(Elementwise kind, const BasicTensor<Real> &a, const BasicTensor<Real> &b)
{
    const auto &sa = a.shape();
    const auto &sb = b.shape();
    bool same = sa == sb;
    if (!same) {
        bool ok = sa.size() == sb.size();
        for (std::size_t i = 0; ok && i < sa.size(); ++i)
            ok = sb[i] == sa[i] || sb[i] == 1;
        if (!ok)
            dim_error("elementwise", "cannot broadcast " + to_string(sb) + " onto " + to_string(sa));
    }
    std::vector<std::size_t> bidx;
    if (!same)
        bidx = broadcast_index(sa, sb);
    auto bi = [&bidx, same](std::size_t i) { return same ? i : bidx[i]; };

    auto ad = a.data();
    auto bd = b.data();
    std::vector<Real> out(ad.size());
    switch (kind) {
    case Elementwise::add:
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = ad[i] + bd[bi(i)];
        break;
    case Elementwise::sub:
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = ad[i] - bd[bi(i)];
        break;
    case Elementwise::mul:
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = ad[i] * bd[bi(i)];
        break;
    case Elementwise::div:
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = ad[i] / bd[bi(i)];
        break;
    }

    static constexpr const char *names[] = {"add", "sub", "mul", "div"};
    auto backward = [kind, same, bidx = std::move(bidx)](Node<Real> &self) {
        Node<Real> &an = *self.inputs[0];
        Node<Real> &bn = *self.inputs[1];
        const auto &g = self.grad;
        auto bi = [&](std::size_t i) { return same ? i : bidx[i]; };
        if (an.requires_grad) {
            auto &ga = an.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                switch (kind) {
                case Elementwise::add:
                case Elementwise::sub: ga[i] += g[i]; break;
                case Elementwise::mul: ga[i] += g[i] * bn.data[bi(i)]; break;
                case Elementwise::div: ga[i] += g[i] / bn.data[bi(i)]; break;
                }
            }
        }
        if (bn.requires_grad) {
            auto &gb = bn.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t j = bi(i);
                switch (kind) {
                case Elementwise::add: gb[j] += g[i]; break;
                case Elementwise::sub: gb[j] -= g[i]; break;
                case Elementwise::mul: gb[j] += g[i] * an.data[i]; break;
                case Elementwise::div: {
                    const Real d = bn.data[j];
                    gb[j] -= g[i] * an.data[i] / (d * d);
                    break;
                }
                }
            }
        }
    };
    return detail::make_result<Real>(names[static_cast<int>(kind)], sa, std::move(out), {a.node(), b.node()},
                                     std::move(backward));
}

template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real> &x, Real factor)
{
    auto xd = x.data();
    std::vector<Real> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xd[i] * factor;
    return detail::make_result<Real>("scale", x.shape(), std::move(out), {x.node()}, [factor](Node<Real> &self) {
        Node<Real> &xn = *self.inputs[0];
        auto &gx = xn.ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += self.grad[i] * factor;
    });
}

template <typename Real>
BasicTensor<Real> add_scalar(const BasicTensor<Real> &x, Real value)
{
    auto xd = x.data();
    std::vector<Real> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xd[i] + value;
    return detail::make_result<Real>("add_scalar", x.shape(), std::move(out), {x.node()}, [](Node<Real> &self) {
        accumulate(*self.inputs[0], self.grad);
    });
}

// ---------------------------------------------------------------------------
// pointwise unary

template <typename Real>
BasicTensor<Real> activation(Activation kind, const BasicTensor<Real> &x, Real slope)
{
    auto xd = x.data();
    std::vector<Real> out(xd.size());
    const char *name = "relu";
    switch (kind) {
    case Activation::relu:
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = xd[i] > Real(0) ? xd[i] : Real(0);
        break;
    case Activation::leaky_relu:
        name = "leaky_relu";
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = xd[i] > Real(0) ? xd[i] : slope * xd[i];
        break;
    case Activation::sigmoid:
        name = "sigmoid";
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = Real(1) / (Real(1) + std::exp(-xd[i]));
        break;
    }
    auto backward = [kind, slope](Node<Real> &self) {
        Node<Real> &xn = *self.inputs[0];
        auto &gx = xn.ensure_grad();
        const auto &g = self.grad;
        switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += xn.data[i] > Real(0) ? g[i] : Real(0);
            break;
        case Activation::leaky_relu:
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += xn.data[i] > Real(0) ? g[i] : slope * g[i];
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < g.size(); ++i) {
                const Real s = self.data[i];
                gx[i] += g[i] * s * (Real(1) - s);
            }
            break;
        }
    };
    return detail::make_result<Real>(name, x.shape(), std::move(out), {x.node()}, std::move(backward));
}

template <typename Real>
BasicTensor<Real> abs(const BasicTensor<Real> &x)
{
    auto xd = x.data();
    std::vector<Real> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::abs(xd[i]);
    return detail::make_result<Real>("abs", x.shape(), std::move(out), {x.node()}, [](Node<Real> &self) {
        Node<Real> &xn = *self.inputs[0];
        auto &gx = xn.ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const Real v = xn.data[i];
            gx[i] += v > Real(0) ? self.grad[i] : (v < Real(0) ? -self.grad[i] : Real(0));
        }
    });
}

// ---------------------------------------------------------------------------
// pooling, dense, reshaping

template <typename Real>
BasicTensor<Real> global_avg_pool(const BasicTensor<Real> &x)
{
    require_rank("global_avg_pool", x, 4);
    const Nchw s = nchw(x);
    if (s.plane() == 0)
        dim_error("global_avg_pool", "empty spatial extent");
    auto xd = x.data();
    std::vector<Real> out(s.n * s.c);
    for (std::size_t p = 0; p < out.size(); ++p) {
        Real acc = 0;
        for (std::size_t k = 0; k < s.plane(); ++k)
            acc += xd[p * s.plane() + k];
        out[p] = acc / Real(s.plane());
    }
    return detail::make_result<Real>("global_avg_pool", Shape{s.n, s.c, 1, 1}, std::move(out), {x.node()},
                                     [s](Node<Real> &self) {
                                         auto &gx = self.inputs[0]->ensure_grad();
                                         for (std::size_t p = 0; p < s.n * s.c; ++p) {
                                             const Real g = self.grad[p] / Real(s.plane());
                                             for (std::size_t k = 0; k < s.plane(); ++k)
                                                 gx[p * s.plane() + k] += g;
                                         }
                                     });
}

template <typename Real>
BasicTensor<Real> dense(const BasicTensor<Real> &x, const BasicTensor<Real> &weight, const BasicTensor<Real> &bias)
{
    require_rank("dense", x, 2);
    require_rank("dense", weight, 2);
    const std::size_t n = x.dim(0), c = x.dim(1), k = weight.dim(0);
    if (weight.dim(1) != c)
        dim_error("dense", "input width " + std::to_string(c) + " != weight columns " + std::to_string(weight.dim(1)));
    if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != k)
        dim_error("dense", "bias must have shape [" + std::to_string(k) + "]");
    auto xd = x.data();
    auto wd = weight.data();
    auto bd = bias.data();
    std::vector<Real> out(n * k);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < k; ++j)
            out[r * k + j] = simd::dot(xd.data() + r * c, wd.data() + j * c, c) + bd[j];
    return detail::make_result<Real>(
        "dense", Shape{n, k}, std::move(out), {x.node(), weight.node(), bias.node()}, [n, c, k](Node<Real> &self) {
            Node<Real> &xn = *self.inputs[0];
            Node<Real> &wn = *self.inputs[1];
            Node<Real> &bn = *self.inputs[2];
            const auto &g = self.grad;
            if (xn.requires_grad) {
                auto &gx = xn.ensure_grad();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < k; ++j)
                        simd::axpy(g[r * k + j], wn.data.data() + j * c, gx.data() + r * c, c);
            }
            if (wn.requires_grad) {
                auto &gw = wn.ensure_grad();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < k; ++j)
                        simd::axpy(g[r * k + j], xn.data.data() + r * c, gw.data() + j * c, c);
            }
            if (bn.requires_grad) {
                auto &gb = bn.ensure_grad();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < k; ++j)
                        gb[j] += g[r * k + j];
            }
        });
}

template <typename Real>
BasicTensor<Real> reshape(const BasicTensor<Real> &x, Shape shape)
{
    if (numel(shape) != x.numel())
        dim_error("reshape", "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    auto xd = x.data();
    return detail::make_result<Real>("reshape", std::move(shape), std::vector<Real>(xd.begin(), xd.end()),
                                     {x.node()}, [](Node<Real> &self) { accumulate(*self.inputs[0], self.grad); });
}

template <typename Real>
BasicTensor<Real> concat_channels(const std::vector<BasicTensor<Real>> &parts)
{
    if (parts.empty())
        dim_error("concat_channels", "no inputs");
    for (const auto &p : parts)
        require_rank("concat_channels", p, 4);
    const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    std::size_t channels = 0;
    std::vector<std::size_t> offsets;
    std::vector<detail::NodePtr<Real>> inputs;
    for (const auto &p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
            dim_error("concat_channels", "part " + to_string(p.shape()) + " does not match " +
                                             to_string(parts[0].shape()));
        offsets.push_back(channels);
        channels += p.dim(1);
        inputs.push_back(p.node());
    }
    const std::size_t plane = h * w;
    std::vector<Real> out(n * channels * plane);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const std::size_t ci = parts[i].dim(1);
            auto d = parts[i].data();
            std::copy_n(d.data() + s * ci * plane, ci * plane, out.data() + (s * channels + offsets[i]) * plane);
        }
    }
    return detail::make_result<Real>(
        "concat_channels", Shape{n, channels, h, w}, std::move(out), std::move(inputs),
        [n, channels, plane, offsets](Node<Real> &self) {
            for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                Node<Real> &pn = *self.inputs[i];
                if (!pn.requires_grad)
                    continue;
                const std::size_t ci = pn.shape[1];
                auto &gp = pn.ensure_grad();
                for (std::size_t s = 0; s < n; ++s) {
                    const Real *src = self.grad.data() + (s * channels + offsets[i]) * plane;
                    Real *dst = gp.data() + s * ci * plane;
                    for (std::size_t k = 0; k < ci * plane; ++k)
                        dst[k] += src[k];
                }
            }
        });
}

template <typename Real>
BasicTensor<Real> slice_channels(const BasicTensor<Real> &x, std::size_t begin, std::size_t count)
{
    require_rank("slice_channels", x, 4);
    const Nchw s = nchw(x);
    if (count == 0 || begin + count > s.c)
        dim_error("slice_channels", "range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                                        ") outside " + std::to_string(s.c) + " channels");
    auto xd = x.data();
    std::vector<Real> out(s.n * count * s.plane());
    for (std::size_t n = 0; n < s.n; ++n)
        std::copy_n(xd.data() + (n * s.c + begin) * s.plane(), count * s.plane(),
                    out.data() + n * count * s.plane());
    return detail::make_result<Real>("slice_channels", Shape{s.n, count, s.h, s.w}, std::move(out), {x.node()},
                                     [s, begin, count](Node<Real> &self) {
                                         auto &gx = self.inputs[0]->ensure_grad();
                                         for (std::size_t n = 0; n < s.n; ++n) {
                                             const Real *src = self.grad.data() + n * count * s.plane();
                                             Real *dst = gx.data() + (n * s.c + begin) * s.plane();
                                             for (std::size_t k = 0; k < count * s.plane(); ++k)
                                                 dst[k] += src[k];
                                         }
                                     });
}

// ---------------------------------------------------------------------------
// spatial resampling

namespace {

std::size_t reflect_index(std::size_t i, std::size_t n)
{
    if (n == 1)
        return 0;
    const std::size_t period = 2 * (n - 1);
    const std::size_t m = i % period;
    return m < n ? m : period - m;
}

// Shared backward for ops whose output element i copies input element map[i].
template <typename Real>
auto scatter_backward(std::vector<std::size_t> map)
{
    return [map = std::move(map)](Node<Real> &self) {
        auto &gx = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < map.size(); ++i)
            gx[map[i]] += self.grad[i];
    };
}

template <typename Real>
BasicTensor<Real> index_copy(const char *op, const BasicTensor<Real> &x, Shape out_shape,
                             std::vector<std::size_t> map)
{
    auto xd = x.data();
    std::vector<Real> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
        out[i] = xd[map[i]];
    return detail::make_result<Real>(op, std::move(out_shape), std::move(out), {x.node()},
                                     scatter_backward<Real>(std::move(map)));
}

} // namespace

template <typename Real>
BasicTensor<Real> reflect_pad(const BasicTensor<Real> &x, std::size_t pad_bottom, std::size_t pad_right)
{
    require_rank("reflect_pad", x, 4);
    const Nchw s = nchw(x);
    const std::size_t ho = s.h + pad_bottom, wo = s.w + pad_right;
    std::vector<std::size_t> map(s.n * s.c * ho * wo);
    std::size_t i = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx)
                map[i++] = p * s.plane() + reflect_index(y, s.h) * s.w + reflect_index(xx, s.w);
    return index_copy("reflect_pad", x, Shape{s.n, s.c, ho, wo}, std::move(map));
}

template <typename Real>
BasicTensor<Real> crop(const BasicTensor<Real> &x, std::size_t height, std::size_t width)
{
    require_rank("crop", x, 4);
    const Nchw s = nchw(x);
    if (height > s.h || width > s.w || height == 0 || width == 0)
        dim_error("crop", "window " + std::to_string(height) + "x" + std::to_string(width) + " outside " +
                              to_string(x.shape()));
    std::vector<std::size_t> map(s.n * s.c * height * width);
    std::size_t i = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t xx = 0; xx < width; ++xx)
                map[i++] = p * s.plane() + y * s.w + xx;
    return index_copy("crop", x, Shape{s.n, s.c, height, width}, std::move(map));
}

template <typename Real>
BasicTensor<Real> upsample_nearest(const BasicTensor<Real> &x, std::size_t k)
{
    require_rank("upsample_nearest", x, 4);
    if (k == 0)
        dim_error("upsample_nearest", "factor must be positive");
    const Nchw s = nchw(x);
    const std::size_t ho = s.h * k, wo = s.w * k;
    std::vector<std::size_t> map(s.n * s.c * ho * wo);
    std::size_t i = 0;
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx)
                map[i++] = p * s.plane() + (y / k) * s.w + xx / k;
    return index_copy("upsample_nearest", x, Shape{s.n, s.c, ho, wo}, std::move(map));
}

template <typename Real>
BasicTensor<Real> avg_pool(const BasicTensor<Real> &x, std::size_t k)
{
    require_rank("avg_pool", x, 4);
    const Nchw s = nchw(x);
    if (k == 0 || s.h % k != 0 || s.w % k != 0)
        dim_error("avg_pool", "extent " + to_string(x.shape()) + " not divisible by " + std::to_string(k));
    const std::size_t ho = s.h / k, wo = s.w / k;
    auto xd = x.data();
    std::vector<Real> out(s.n * s.c * ho * wo, Real(0));
    const Real inv = Real(1) / Real(k * k);
    for (std::size_t p = 0; p < s.n * s.c; ++p)
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t xx = 0; xx < s.w; ++xx)
                out[p * ho * wo + (y / k) * wo + xx / k] += xd[p * s.plane() + y * s.w + xx];
    for (auto &v : out)
        v *= inv;
    return detail::make_result<Real>("avg_pool", Shape{s.n, s.c, ho, wo}, std::move(out), {x.node()},
                                     [s, k, ho, wo, inv](Node<Real> &self) {
                                         auto &gx = self.inputs[0]->ensure_grad();
                                         for (std::size_t p = 0; p < s.n * s.c; ++p)
                                             for (std::size_t y = 0; y < s.h; ++y)
                                                 for (std::size_t xx = 0; xx < s.w; ++xx)
                                                     gx[p * s.plane() + y * s.w + xx] +=
                                                         self.grad[p * ho * wo + (y / k) * wo + xx / k] * inv;
                                     });
}

template <typename Real>
BasicTensor<Real> gather_patches(const BasicTensor<Real> &source, std::size_t patch,
                                 const std::vector<std::uint32_t> &source_cell)
{
    require_rank("gather_patches", source, 4);
    const Nchw s = nchw(source);
    if (patch == 0 || s.h % patch != 0 || s.w % patch != 0)
        dim_error("gather_patches", "extent " + to_string(source.shape()) + " is not a multiple of patch " +
                                        std::to_string(patch));
    const std::size_t rows = s.h / patch, cols = s.w / patch, cells = rows * cols;
    if (source_cell.size() != s.n * cells)
        dim_error("gather_patches", "index table has " + std::to_string(source_cell.size()) + " entries, expected " +
                                        std::to_string(s.n * cells));
    std::vector<std::size_t> map(s.n * s.c * s.plane());
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t dst = 0; dst < cells; ++dst) {
            const std::size_t src = source_cell[n * cells + dst];
            if (src >= cells)
                dim_error("gather_patches", "source cell " + std::to_string(src) + " out of range");
            const std::size_t dy = (dst / cols) * patch, dx = (dst % cols) * patch;
            const std::size_t sy = (src / cols) * patch, sx = (src % cols) * patch;
            for (std::size_t c = 0; c < s.c; ++c) {
                const std::size_t base = (n * s.c + c) * s.plane();
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        map[base + (dy + y) * s.w + dx + x] = base + (sy + y) * s.w + sx + x;
            }
        }
    }
    return index_copy("gather_patches", source, source.shape(), std::move(map));
}

// ---------------------------------------------------------------------------
// reductions and fixed filters

template <typename Real>
BasicTensor<Real> sum(const BasicTensor<Real> &x)
{
    double acc = 0;
    for (Real v : x.data())
        acc += v;
    return detail::make_result<Real>("sum", Shape{1}, {Real(acc)}, {x.node()}, [](Node<Real> &self) {
        auto &gx = self.inputs[0]->ensure_grad();
        for (auto &g : gx)
            g += self.grad[0];
    });
}

template <typename Real>
BasicTensor<Real> mean(const BasicTensor<Real> &x)
{
    const std::size_t n = x.numel();
    if (n == 0)
        dim_error("mean", "empty tensor");
    double acc = 0;
    for (Real v : x.data())
        acc += v;
    return detail::make_result<Real>("mean", Shape{1}, {Real(acc / double(n))}, {x.node()}, [n](Node<Real> &self) {
        auto &gx = self.inputs[0]->ensure_grad();
        const Real g = self.grad[0] / Real(n);
        for (auto &v : gx)
            v += g;
    });
}

template <typename Real>
BasicTensor<Real> filter2d_valid(const BasicTensor<Real> &x, const std::vector<Real> &kernel, std::size_t k)
{
    require_rank("filter2d_valid", x, 4);
    const Nchw s = nchw(x);
    if (k == 0 || kernel.size() != k * k)
        dim_error("filter2d_valid", "kernel must hold k*k taps");
    if (s.h < k || s.w < k)
        dim_error("filter2d_valid", "input " + to_string(x.shape()) + " smaller than " + std::to_string(k) + "x" +
                                        std::to_string(k) + " window");
    const std::size_t ho = s.h - k + 1, wo = s.w - k + 1;
    const std::size_t span = (ho - 1) * s.w + wo;
    auto xd = x.data();
    std::vector<Real> out(s.n * s.c * ho * wo);
    std::vector<Real> acc(ho * s.w);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        std::fill(acc.begin(), acc.end(), Real(0));
        const Real *plane = xd.data() + p * s.plane();
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx)
                simd::axpy(kernel[ky * k + kx], plane + ky * s.w + kx, acc.data(), span);
        for (std::size_t y = 0; y < ho; ++y)
            std::copy_n(acc.data() + y * s.w, wo, out.data() + p * ho * wo + y * wo);
    }
    return detail::make_result<Real>(
        "filter2d_valid", Shape{s.n, s.c, ho, wo}, std::move(out), {x.node()},
        [s, k, ho, wo, span, kernel](Node<Real> &self) {
            auto &gx = self.inputs[0]->ensure_grad();
            std::vector<Real> gp(ho * s.w, Real(0));
            for (std::size_t p = 0; p < s.n * s.c; ++p) {
                for (std::size_t y = 0; y < ho; ++y)
                    std::copy_n(self.grad.data() + p * ho * wo + y * wo, wo, gp.data() + y * s.w);
                Real *dst = gx.data() + p * s.plane();
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        simd::axpy(kernel[ky * k + kx], gp.data(), dst + ky * s.w + kx, span);
            }
        });
}

// ---------------------------------------------------------------------------

#define RCNET_INSTANTIATE_OPS(Real)                                                                               \
    template BasicTensor<Real> conv2d(const BasicTensor<Real> &, const BasicTensor<Real> &,                      \
                                      const BasicTensor<Real> &, std::size_t, std::size_t);                      \
    template BasicTensor<Real> elementwise(Elementwise, const BasicTensor<Real> &, const BasicTensor<Real> &);    \
    template BasicTensor<Real> scale(const BasicTensor<Real> &, Real);                                           \
    template BasicTensor<Real> add_scalar(const BasicTensor<Real> &, Real);                                      \
    template BasicTensor<Real> activation(Activation, const BasicTensor<Real> &, Real);                          \
    template BasicTensor<Real> abs(const BasicTensor<Real> &);                                                   \
    template BasicTensor<Real> global_avg_pool(const BasicTensor<Real> &);                                       \
    template BasicTensor<Real> dense(const BasicTensor<Real> &, const BasicTensor<Real> &,                       \
                                     const BasicTensor<Real> &);                                                 \
    template BasicTensor<Real> reshape(const BasicTensor<Real> &, Shape);                                        \
    template BasicTensor<Real> concat_channels(const std::vector<BasicTensor<Real>> &);                          \
    template BasicTensor<Real> slice_channels(const BasicTensor<Real> &, std::size_t, std::size_t);              \
    template BasicTensor<Real> reflect_pad(const BasicTensor<Real> &, std::size_t, std::size_t);                 \
    template BasicTensor<Real> crop(const BasicTensor<Real> &, std::size_t, std::size_t);                        \
    template BasicTensor<Real> avg_pool(const BasicTensor<Real> &, std::size_t);                                 \
    template BasicTensor<Real> upsample_nearest(const BasicTensor<Real> &, std::size_t);                         \
    template BasicTensor<Real> gather_patches(const BasicTensor<Real> &, std::size_t,                            \
                                              const std::vector<std::uint32_t> &);                               \
    template BasicTensor<Real> sum(const BasicTensor<Real> &);                                                   \
    template BasicTensor<Real> mean(const BasicTensor<Real> &);                                                  \
    template BasicTensor<Real> filter2d_valid(const BasicTensor<Real> &, const std::vector<Real> &, std::size_t);

RCNET_INSTANTIATE_OPS(float)
RCNET_INSTANTIATE_OPS(double)

} // namespace rcnet
