#include "rcnet/network.hpp"

#include <cmath>
#include <random>

#include "rcnet/error.hpp"
#include "rcnet/ops.hpp"

namespace rcnet {

namespace {

std::string unit_key(std::size_t t, const char *rest)
{
    return "u" + std::to_string(t + 1) + "." + rest;
}

template <typename Real>
BasicTensor<Real> conv(const ModelParams<Real> &p, const std::string &layer, const BasicTensor<Real> &x)
{
    const auto &w = p.get(layer + ".w");
    return conv2d(x, w, p.get(layer + ".b"), 1, w.dim(2) / 2);
}

template <typename Real>
BasicTensor<Real> lrelu(const BasicTensor<Real> &x)
{
    return leaky_relu(x, Real(default_leaky_slope));
}

std::size_t sa_inputs(const ModelConfig &cfg, std::size_t t)
{
    return (t > 0 && cfg.routes_top1()) ? 4 * cfg.channels : cfg.channels;
}

} // namespace

void ModelConfig::validate() const
{
    auto fail = [](const std::string &what) { throw UsageError("model config: " + what); };
    if (channels == 0)
        fail("channels must be positive");
    if (units == 0)
        fail("units must be at least 1");
    if (k == 0)
        fail("k must be at least 1");
    if (patch == 0)
        fail("patch must be positive");
    if (se_reduction == 0 || channels % se_reduction != 0)
        fail("channels must be divisible by se_reduction");
    if (encoder_depth == 0)
        fail("encoder_depth must be at least 1");
    if (confidence_hidden == 0)
        fail("confidence_hidden must be positive");
    if (k > (2 * radius + 1) * (2 * radius + 1))
        fail("k exceeds the search window population");
}

std::vector<float> ModelConfig::to_record() const
{
    return {float(channels), float(units),         float(k),        float(patch),    float(radius),
            float(se_reduction), float(encoder_depth), float(confidence_hidden), float(intra_en),
            float(inter_af),  float(e2a),           float(a2e)};
}

ModelConfig ModelConfig::from_record(const std::vector<float> &v)
{
    if (v.size() != 12)
        throw DataError("model config record has " + std::to_string(v.size()) + " fields, expected 12");
    for (float f : v)
        if (!(f >= 0) || f != std::floor(f))
            throw DataError("model config record holds a non-integral field");
    ModelConfig c;
    c.channels = std::size_t(v[0]);
    c.units = std::size_t(v[1]);
    c.k = std::size_t(v[2]);
    c.patch = std::size_t(v[3]);
    c.radius = std::size_t(v[4]);
    c.se_reduction = std::size_t(v[5]);
    c.encoder_depth = std::size_t(v[6]);
    c.confidence_hidden = std::size_t(v[7]);
    c.intra_en = v[8] != 0;
    c.inter_af = v[9] != 0;
    c.e2a = v[10] != 0;
    c.a2e = v[11] != 0;
    try {
        c.validate();
    } catch (const UsageError &e) {
        throw DataError(e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------

template <typename Real>
void ModelParams<Real>::add(std::string name, BasicTensor<Real> value)
{
    if (index_.count(name))
        throw ContractError("duplicate parameter " + name);
    index_[name] = tensors_.size();
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
}

template <typename Real>
const BasicTensor<Real> &ModelParams<Real>::get(const std::string &name) const
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw ContractError("no parameter named " + name);
    return tensors_[it->second];
}

template <typename Real>
BasicTensor<Real> &ModelParams<Real>::get(const std::string &name)
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw ContractError("no parameter named " + name);
    return tensors_[it->second];
}

template <typename Real>
std::size_t ModelParams<Real>::scalar_count() const
{
    std::size_t n = 0;
    for (const auto &t : tensors_)
        n += t.numel();
    return n;
}

template <typename Real>
void ModelParams<Real>::zero_grad()
{
    for (auto &t : tensors_)
        t.zero_grad();
}

template <typename Real>
template <typename Other>
ModelParams<Other> ModelParams<Real>::cast() const
{
    ModelParams<Other> out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        auto c = tensors_[i].template cast<Other>();
        c.set_requires_grad(true);
        out.add(names_[i], c);
    }
    return out;
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;

// ---------------------------------------------------------------------------

ModelParams<float> init_params(const ModelConfig &cfg, std::uint64_t seed)
{
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams<float> p;
    auto weight = [&](const std::string &name, Shape shape, float gain = 1.0f) {
        std::size_t fan_in = 1;
        for (std::size_t a = 1; a < shape.size(); ++a)
            fan_in *= shape[a];
        std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / float(fan_in)));
        std::vector<float> data(numel(shape));
        for (auto &v : data)
            v = gain * dist(rng);
        p.add(name + ".w", Tensor::from(shape, std::move(data), true));
        p.add(name + ".b", Tensor::zeros(Shape{shape[0]}, true));
    };
    const std::size_t c = cfg.channels, k = cfg.k;

    for (std::size_t i = 0; i < cfg.encoder_depth; ++i)
        weight("enc." + std::to_string(i), Shape{c, i == 0 ? 3 : c, 3, 3});
    for (std::size_t t = 0; t < cfg.units; ++t) {
        if (cfg.intra_en) {
            weight(unit_key(t, "sa.0"), Shape{c, sa_inputs(cfg, t), 3, 3});
            weight(unit_key(t, "sa.1"), Shape{1, c, 3, 3});
            weight(unit_key(t, "se.0"), Shape{c / cfg.se_reduction, c});
            weight(unit_key(t, "se.1"), Shape{c, c / cfg.se_reduction});
        }
        weight(unit_key(t, "e2a"), Shape{3, c, 3, 3});
        if (cfg.inter_af) {
            if (cfg.e2a) {
                weight(unit_key(t, "cof.0"), Shape{cfg.confidence_hidden, 3, 3, 3});
                weight(unit_key(t, "cof.1"), Shape{1, cfg.confidence_hidden, 3, 3});
            }
            weight(unit_key(t, "conv.0"), Shape{c, 3 * (k + 1) * c, 1, 1});
            weight(unit_key(t, "conv.1"), Shape{c, c, 3, 3});
            weight(unit_key(t, "wt.0"), Shape{c, 3 * c, 3, 3});
            for (int l = 1; l < 4; ++l)
                weight(unit_key(t, ("wt." + std::to_string(l)).c_str()), Shape{c, c, 3, 3});
        }
    }
    weight("head", Shape{3, c, 3, 3}, 0.1f);
    return p;
}

void symmetrize_views(ModelParams<float> &params, const ModelConfig &cfg)
{
    // Copies input-channel block [src, src+len) onto [dst, dst+len) for every
    // output channel of an OIHW kernel.
    auto copy_block = [&](const std::string &name, std::size_t src, std::size_t dst, std::size_t len) {
        auto &w = params.get(name);
        const std::size_t out = w.dim(0), in = w.dim(1), taps = w.dim(2) * w.dim(3);
        auto d = w.mutable_data();
        for (std::size_t o = 0; o < out; ++o)
            for (std::size_t i = 0; i < len * taps; ++i)
                d[(o * in + dst) * taps + i] = d[(o * in + src) * taps + i];
    };
    const std::size_t c = cfg.channels;
    for (std::size_t t = 0; t < cfg.units; ++t) {
        if (cfg.inter_af) {
            copy_block(unit_key(t, "wt.0.w"), 0, 2 * c, c);
            copy_block(unit_key(t, "conv.0.w"), 0, 2 * (cfg.k + 1) * c, (cfg.k + 1) * c);
        }
        if (cfg.intra_en && t > 0 && cfg.routes_top1())
            copy_block(unit_key(t, "sa.0.w"), c, 3 * c, c);
    }
}

// ---------------------------------------------------------------------------

namespace {

template <typename Real>
void check_views(const ViewSet<Real> &views, const char *op)
{
    for (const auto &v : views)
        if (!v.defined() || v.rank() != 4 || v.shape() != views[0].shape())
            throw DimensionError(std::string(op) + ": the three views must share one [N,C,H,W] shape");
}

} // namespace

template <typename Real>
ViewSet<Real> encode(const ModelParams<Real> &params, const ModelConfig &cfg, const ViewSet<Real> &views)
{
    check_views(views, "encode");
    if (views[0].dim(1) != 3)
        throw DimensionError("encode: expected 3-channel images, got " + to_string(views[0].shape()));
    if (views[0].dim(2) < 16 || views[0].dim(3) < 16)
        throw DimensionError("encode: views must be at least 16x16, got " + to_string(views[0].shape()));
    ViewSet<Real> out;
    for (std::size_t v = 0; v < 3; ++v) {
        BasicTensor<Real> x = views[v];
        for (std::size_t i = 0; i < cfg.encoder_depth; ++i)
            x = lrelu(conv(params, "enc." + std::to_string(i), x));
        out[v] = x;
    }
    return out;
}

template <typename Real>
ViewSet<Real> intra_view_en(const ModelParams<Real> &params, const ModelConfig &cfg, std::size_t t,
                            const ViewSet<Real> &features, const BasicTensor<Real> &top1_prev)
{
    check_views(features, "intra_view_en");
    const bool expects_top1 = t > 0 && cfg.routes_top1();
    if (expects_top1 != top1_prev.defined())
        throw ContractError(expects_top1 ? "intra_view_en: routed top-1 features required after the first unit"
                                         : "intra_view_en: unexpected top-1 features");
    const std::size_t n = features[0].dim(0), c = features[0].dim(1);
    if (top1_prev.defined()) {
        const auto &s = features[0].shape();
        if (top1_prev.shape() != Shape{s[0], 3 * c, s[2], s[3]})
            throw DimensionError("intra_view_en: top-1 features " + to_string(top1_prev.shape()) +
                                 " do not match views " + to_string(s));
    }
    ViewSet<Real> out;
    for (std::size_t v = 0; v < 3; ++v) {
        const auto &x = features[v];
        auto sa_in = top1_prev.defined() ? concat_channels<Real>({x, top1_prev}) : x;
        auto spatial = sigmoid(conv(params, unit_key(t, "sa.1"), lrelu(conv(params, unit_key(t, "sa.0"), sa_in))));
        auto squeezed = reshape(global_avg_pool(x), Shape{n, c});
        auto hidden = relu(dense(squeezed, params.get(unit_key(t, "se.0.w")), params.get(unit_key(t, "se.0.b"))));
        auto channel = sigmoid(dense(hidden, params.get(unit_key(t, "se.1.w")), params.get(unit_key(t, "se.1.b"))));
        auto attended = mul(mul(x, spatial), reshape(channel, Shape{n, c, 1, 1}));
        out[v] = add(attended, x);
    }
    return out;
}

template <typename Real>
BasicTensor<Real> e2a_predict(const ModelParams<Real> &params, std::size_t t, const BasicTensor<Real> &primary)
{
    return conv(params, unit_key(t, "e2a"), primary);
}

template <typename Real>
BasicTensor<Real> confidence_eval(const ModelParams<Real> &params, std::size_t t, const BasicTensor<Real> &stage)
{
    return sigmoid(conv(params, unit_key(t, "cof.1"), lrelu(conv(params, unit_key(t, "cof.0"), stage))));
}

template <typename Real>
BasicTensor<Real> pool_per_patch(const BasicTensor<Real> &map, std::size_t patch)
{
    const std::size_t h = map.dim(2), w = map.dim(3);
    auto padded = reflect_pad(map, padded_extent(h, patch) - h, padded_extent(w, patch) - w);
    return upsample_nearest(avg_pool(padded, patch), patch);
}

template <typename Real>
BasicTensor<Real> a2e_route(const ViewSet<Real> &top1)
{
    check_views(top1, "a2e_route");
    return concat_channels<Real>({top1[0], top1[1], top1[2]});
}

template <typename Real>
InterViewOutput<Real> inter_view_af(const ModelParams<Real> &params, const ModelConfig &cfg, std::size_t t,
                                    const ViewSet<Real> &intra, const BasicTensor<Real> &stage)
{
    check_views(intra, "inter_view_af");
    BasicTensor<Real> conf;
    if (cfg.e2a)
        conf = pool_per_patch(confidence_eval(params, t, stage), cfg.patch);

    InterViewOutput<Real> out;
    ViewSet<Real> aligned, top1;
    for (std::size_t v = 0; v < 3; ++v) {
        auto a = align_features(intra[primary_slot], intra[v], conf, cfg.align());
        aligned[v] = a.aligned;
        top1[v] = a.top1;
        out.matches[v] = std::move(a.candidates);
    }

    auto weights = concat_channels<Real>({intra[0], intra[1], intra[2]});
    for (int l = 0; l < 3; ++l)
        weights = lrelu(conv(params, unit_key(t, ("wt." + std::to_string(l)).c_str()), weights));
    weights = sigmoid(conv(params, unit_key(t, "wt.3"), weights));

    auto processed = lrelu(conv(params, unit_key(t, "conv.0"), concat_channels<Real>({aligned[0], aligned[1], aligned[2]})));
    processed = conv(params, unit_key(t, "conv.1"), processed);

    out.features = intra;
    out.features[primary_slot] = mul(weights, processed);
    if (t + 1 < cfg.units && cfg.routes_top1())
        out.top1 = a2e_route(top1);
    return out;
}

template <typename Real>
ForwardResult<Real> forward_features(const ModelParams<Real> &params, const ModelConfig &cfg,
                                     const ViewSet<Real> &features, const BasicTensor<Real> &primary_input)
{
    check_views(features, "forward");
    ForwardResult<Real> res;
    ViewSet<Real> f = features;
    BasicTensor<Real> top1;
    for (std::size_t t = 0; t < cfg.units; ++t) {
        ViewSet<Real> intra = cfg.intra_en ? intra_view_en(params, cfg, t, f, top1) : f;
        auto stage = e2a_predict(params, t, intra[primary_slot]);
        res.stages.push_back(stage);
        if (cfg.inter_af) {
            auto inter = inter_view_af(params, cfg, t, intra, stage);
            f = inter.features;
            top1 = inter.top1;
            res.matches.push_back(std::move(inter.matches));
        } else {
            f = intra;
        }
    }
    res.result = add(primary_input, conv(params, "head", f[primary_slot]));
    return res;
}

template <typename Real>
ForwardResult<Real> forward(const ModelParams<Real> &params, const ModelConfig &cfg, const ViewSet<Real> &views)
{
    return forward_features(params, cfg, encode(params, cfg, views), views[primary_slot]);
}

// ---------------------------------------------------------------------------

std::vector<NamedTensor> to_records(const ModelParams<float> &params, const ModelConfig &cfg)
{
    std::vector<NamedTensor> out;
    auto cfg_values = cfg.to_record();
    out.push_back({config_record_name, Shape{cfg_values.size()}, cfg_values});
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto d = params.at(i).data();
        out.push_back({params.name(i), params.at(i).shape(), std::vector<float>(d.begin(), d.end())});
    }
    return out;
}

ModelParams<float> from_records(const std::vector<NamedTensor> &records, ModelConfig &cfg)
{
    if (records.empty() || records[0].name != config_record_name)
        throw DataError("model snapshot must start with a " + std::string(config_record_name) + " record");
    cfg = ModelConfig::from_record(records[0].data);
    // Shapes and names are validated against a fresh layout for this config.
    ModelParams<float> layout = init_params(cfg, 0);
    if (records.size() != layout.size() + 1)
        throw DataError("model snapshot has " + std::to_string(records.size() - 1) + " tensors, expected " +
                        std::to_string(layout.size()));
    ModelParams<float> out;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto &r = find_record(records, layout.name(i));
        if (r.shape != layout.at(i).shape())
            throw DataError("parameter " + r.name + " has shape " + to_string(r.shape) + ", expected " +
                            to_string(layout.at(i).shape()));
        out.add(r.name, Tensor::from(r.shape, r.data, true));
    }
    return out;
}

void save_model(const std::filesystem::path &path, const ModelParams<float> &params, const ModelConfig &cfg)
{
    save_snapshot(path, to_records(params, cfg));
}

ModelParams<float> load_model(const std::filesystem::path &path, ModelConfig &cfg)
{
    return from_records(load_snapshot(path), cfg);
}

#define RCNET_INSTANTIATE_NETWORK(Real)                                                                           \
    template ViewSet<Real> encode(const ModelParams<Real> &, const ModelConfig &, const ViewSet<Real> &);         \
    template ViewSet<Real> intra_view_en(const ModelParams<Real> &, const ModelConfig &, std::size_t,             \
                                         const ViewSet<Real> &, const BasicTensor<Real> &);                       \
    template BasicTensor<Real> e2a_predict(const ModelParams<Real> &, std::size_t, const BasicTensor<Real> &);    \
    template BasicTensor<Real> confidence_eval(const ModelParams<Real> &, std::size_t, const BasicTensor<Real> &); \
    template BasicTensor<Real> pool_per_patch(const BasicTensor<Real> &, std::size_t);                            \
    template BasicTensor<Real> a2e_route(const ViewSet<Real> &);                                                  \
    template InterViewOutput<Real> inter_view_af(const ModelParams<Real> &, const ModelConfig &, std::size_t,     \
                                                 const ViewSet<Real> &, const BasicTensor<Real> &);               \
    template ForwardResult<Real> forward_features(const ModelParams<Real> &, const ModelConfig &,                 \
                                                  const ViewSet<Real> &, const BasicTensor<Real> &);              \
    template ForwardResult<Real> forward(const ModelParams<Real> &, const ModelConfig &, const ViewSet<Real> &);

RCNET_INSTANTIATE_NETWORK(float)
RCNET_INSTANTIATE_NETWORK(double)

} // namespace rcnet
