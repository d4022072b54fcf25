#include "rcnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "rcnet/error.hpp"
#include "rcnet/losses.hpp"
#include "rcnet/metrics.hpp"

namespace rcnet {

using nlohmann::json;

void TrainConfig::validate(const ModelConfig &model) const
{
    auto fail = [](const std::string &what) { throw UsageError("train config: " + what); };
    if (crop < min_network_side)
        fail("crop must be at least " + std::to_string(min_network_side));
    if (crop < model.patch * (2 * model.radius + 1))
        fail("crop must cover one full search window (patch * (2 * radius + 1))");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
        fail("flip_prob must lie in [0, 1]");
    if (batch_triplets == 0)
        fail("batch_triplets must be positive");
    if (!(lr_initial > 0) || !(lr_final > 0) || lr_final > lr_initial)
        fail("learning rates must be positive with lr_final <= lr_initial");
    if (!(clip_norm >= 0))
        fail("clip_norm must be non-negative");
}

std::vector<SceneImages> load_scenes(const TripletManifest &manifest, const std::string &split)
{
    std::vector<SceneImages> out;
    for (const auto *e : manifest.split(split)) {
        SceneImages s;
        s.scene = e->scene;
        for (std::size_t v = 0; v < 3; ++v) {
            s.low[v] = load_image(manifest.resolve(e->low[v]));
            s.gt[v] = load_image(manifest.resolve(e->gt[v]));
        }
        for (std::size_t v = 0; v < 3; ++v)
            for (const auto *img : {&s.low[v], &s.gt[v]})
                if (img->height != s.low[0].height || img->width != s.low[0].width)
                    throw DataError("scene '" + s.scene + "': views and ground truth differ in size");
        out.push_back(std::move(s));
    }
    return out;
}

SamplePlan draw_plan(Rng &rng, const std::vector<SceneImages> &scenes, const TrainConfig &cfg)
{
    if (scenes.empty())
        throw DataError("no training scenes");
    SamplePlan p;
    p.scene = std::uniform_int_distribution<std::size_t>(0, scenes.size() - 1)(rng);
    const auto &img = scenes[p.scene].low[0];
    if (cfg.crop > img.height || cfg.crop > img.width)
        throw DataError("crop " + std::to_string(cfg.crop) + " larger than scene '" + scenes[p.scene].scene + "' (" +
                        std::to_string(img.height) + "x" + std::to_string(img.width) + ")");
    p.y0 = std::uniform_int_distribution<std::size_t>(0, img.height - cfg.crop)(rng);
    p.x0 = std::uniform_int_distribution<std::size_t>(0, img.width - cfg.crop)(rng);
    p.flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.flip_prob;
    p.primary = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    return p;
}

std::array<std::size_t, 3> slot_order(std::size_t primary)
{
    switch (primary) {
    case 0: return {1, 0, 2};
    case 1: return {0, 1, 2};
    case 2: return {0, 2, 1};
    default: throw ContractError("primary view index must be 0, 1 or 2");
    }
}

Sample materialize(const SceneImages &scene, const SamplePlan &plan, std::size_t crop)
{
    auto cut = [&](const ImageRGB &img) {
        ImageRGB c = crop_image(img, plan.y0, plan.x0, crop, crop);
        return plan.flip ? flip_horizontal(c) : c;
    };
    Sample s;
    const auto order = slot_order(plan.primary);
    for (std::size_t slot = 0; slot < 3; ++slot)
        s.views[slot] = cut(scene.low[order[slot]]);
    s.gt = cut(scene.gt[plan.primary]);
    return s;
}

Batch make_batch(const std::vector<SceneImages> &scenes, Rng &rng, const TrainConfig &cfg)
{
    Batch b;
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < cfg.batch_triplets; ++i) {
        b.plans.push_back(draw_plan(rng, scenes, cfg));
        samples.push_back(materialize(scenes[b.plans.back().scene], b.plans.back(), cfg.crop));
    }
    for (std::size_t slot = 0; slot < 3; ++slot) {
        std::vector<const ImageRGB *> imgs;
        for (const auto &s : samples)
            imgs.push_back(&s.views[slot]);
        b.views[slot] = to_tensor<float>(imgs);
    }
    std::vector<const ImageRGB *> gts;
    for (const auto &s : samples)
        gts.push_back(&s.gt);
    b.gt = to_tensor<float>(gts);
    return b;
}

double global_grad_norm(const ModelParams<float> &params)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.at(i).has_grad())
            continue;
        for (float g : params.at(i).grad())
            acc += double(g) * double(g);
    }
    return std::sqrt(acc);
}

void adam_step(ModelParams<float> &params, AdamState &state, double lr, double grad_scale)
{
    if (state.m.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m.emplace_back(params.at(i).numel(), 0.0f);
            state.v.emplace_back(params.at(i).numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size())
        throw ContractError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params.at(i).has_grad())
            throw ContractError("adam_step: parameter " + params.name(i) + " has no gradient");

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto g = params.at(i).grad();
        auto p = params.at(i).mutable_data();
        auto &m = state.m[i];
        auto &v = state.v[i];
        if (m.size() != p.size())
            throw ContractError("adam_step: moment shape mismatch for " + params.name(i));
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = double(g[j]) * grad_scale;
            m[j] = float(state.beta1 * m[j] + (1.0 - state.beta1) * gj);
            v[j] = float(state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj);
            const double mhat = m[j] / c1, vhat = v[j] / c2;
            p[j] = float(p[j] - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

double lr_at(std::size_t iter, const TrainConfig &cfg)
{
    return iter < cfg.decay_at ? cfg.lr_initial : cfg.lr_final;
}

EvalResult evaluate(const ModelParams<float> &params, const ModelConfig &model, const std::vector<SceneImages> &scenes)
{
    if (scenes.empty())
        throw DataError("evaluate: no scenes");
    EvalResult r;
    for (const auto &s : scenes) {
        ViewSet<float> views{to_tensor<float>(s.low[0]), to_tensor<float>(s.low[1]), to_tensor<float>(s.low[2])};
        auto out = forward(params, model, views);
        const ImageRGB enhanced = clamped(from_tensor(out.result));
        r.psnr += psnr(enhanced, s.gt[1]);
        r.ssim += ssim_image(enhanced, s.gt[1]);
        r.input_psnr += psnr(s.low[1], s.gt[1]);
    }
    const double n = double(scenes.size());
    r.psnr /= n;
    r.ssim /= n;
    r.input_psnr /= n;
    return r;
}

// ---------------------------------------------------------------------------

namespace {

json train_config_json(const TrainConfig &c)
{
    return json{{"crop", c.crop},
                {"flip_prob", c.flip_prob},
                {"batch_triplets", c.batch_triplets},
                {"lr_initial", c.lr_initial},
                {"lr_final", c.lr_final},
                {"decay_at", c.decay_at},
                {"total_iters", c.total_iters},
                {"seed", c.seed},
                {"eval_every", c.eval_every},
                {"checkpoint_every", c.checkpoint_every},
                {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from(const json &j)
{
    TrainConfig c;
    c.crop = j.at("crop").get<std::size_t>();
    c.flip_prob = j.at("flip_prob").get<double>();
    c.batch_triplets = j.at("batch_triplets").get<std::size_t>();
    c.lr_initial = j.at("lr_initial").get<double>();
    c.lr_final = j.at("lr_final").get<double>();
    c.decay_at = j.at("decay_at").get<std::size_t>();
    c.total_iters = j.at("total_iters").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    c.clip_norm = j.at("clip_norm").get<double>();
    return c;
}

std::filesystem::path with_suffix(const std::filesystem::path &stem, const char *ext)
{
    return std::filesystem::path(stem.string() + ext);
}

std::string format_number(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

void save_checkpoint(const std::filesystem::path &stem, const Checkpoint &ckpt)
{
    auto records = to_records(ckpt.params, ckpt.model);
    if (!ckpt.adam.m.empty()) {
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            const auto &shape = ckpt.params.at(i).shape();
            records.push_back({"adam.m." + ckpt.params.name(i), shape, ckpt.adam.m[i]});
            records.push_back({"adam.v." + ckpt.params.name(i), shape, ckpt.adam.v[i]});
        }
    }
    save_snapshot(with_suffix(stem, ".rctn"), records);

    json side{{"format", "rcnet-checkpoint"},
              {"next_iter", ckpt.next_iter},
              {"adam_step", ckpt.adam.step},
              {"rng_state", ckpt.rng_state},
              {"model", ckpt.model.to_record()},
              {"train", train_config_json(ckpt.train)}};
    std::ofstream os(with_suffix(stem, ".json"), std::ios::trunc);
    if (!os)
        throw DataError("cannot write checkpoint sidecar for " + stem.string());
    os << side.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path &stem)
{
    auto records = load_snapshot(with_suffix(stem, ".rctn"));
    std::vector<NamedTensor> model_records, adam_records;
    for (auto &r : records)
        (r.name.rfind("adam.", 0) == 0 ? adam_records : model_records).push_back(std::move(r));

    Checkpoint ckpt;
    ckpt.params = from_records(model_records, ckpt.model);

    std::ifstream is(with_suffix(stem, ".json"));
    if (!is)
        throw DataError("missing checkpoint sidecar " + with_suffix(stem, ".json").string());
    try {
        json side = json::parse(is);
        ckpt.next_iter = side.at("next_iter").get<std::size_t>();
        ckpt.adam.step = side.at("adam_step").get<std::uint64_t>();
        ckpt.rng_state = side.at("rng_state").get<std::string>();
        ckpt.train = train_config_from(side.at("train"));
        if (ModelConfig::from_record(side.at("model").get<std::vector<float>>()) != ckpt.model)
            throw DataError("checkpoint sidecar model config disagrees with the tensor snapshot");
    } catch (const json::exception &e) {
        throw DataError("malformed checkpoint sidecar: " + std::string(e.what()));
    }
    if (!adam_records.empty()) {
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            const auto &m = find_record(adam_records, "adam.m." + ckpt.params.name(i));
            const auto &v = find_record(adam_records, "adam.v." + ckpt.params.name(i));
            if (m.shape != ckpt.params.at(i).shape() || v.shape != m.shape)
                throw DataError("Adam moment shape mismatch for " + ckpt.params.name(i));
            ckpt.adam.m.push_back(m.data);
            ckpt.adam.v.push_back(v.data);
        }
    }
    return ckpt;
}

std::string format_log_csv(const std::vector<LogRow> &rows)
{
    std::string out = "iter,lr,loss,eval_psnr,eval_ssim\n";
    for (const auto &r : rows) {
        out += std::to_string(r.iter) + "," + format_number(r.lr) + "," + format_number(r.loss) + ",";
        out += (r.eval_psnr ? format_number(*r.eval_psnr) : "") + ",";
        out += (r.eval_ssim ? format_number(*r.eval_ssim) : "") + "\n";
    }
    return out;
}

TrainResult train(const TripletManifest &manifest, const ModelConfig &model, const TrainConfig &cfg,
                  const std::filesystem::path &out_dir, const std::optional<std::filesystem::path> &resume,
                  bool verbose)
{
    model.validate();
    cfg.validate(model);
    const auto train_scenes = load_scenes(manifest, "train");
    const auto test_scenes = load_scenes(manifest, "test");
    if (train_scenes.empty())
        throw DataError("manifest has no training scenes");
    std::filesystem::create_directories(out_dir);

    Checkpoint state;
    state.model = model;
    state.train = cfg;
    Rng rng(derive_seed(cfg.seed, 1));
    std::vector<LogRow> log;
    if (resume) {
        Checkpoint loaded = load_checkpoint(*resume);
        if (loaded.model != model)
            throw UsageError("resume: checkpoint model config differs from the requested one");
        state.params = std::move(loaded.params);
        state.adam = std::move(loaded.adam);
        state.next_iter = loaded.next_iter;
        std::istringstream rs(loaded.rng_state);
        rs >> rng;
        if (!rs)
            throw DataError("resume: corrupt RNG state");
        // Keep the log rows written up to the checkpoint.
        std::ifstream csv(out_dir / "metrics.csv");
        std::string line;
        std::getline(csv, line);
        while (std::getline(csv, line)) {
            std::istringstream ls(line);
            std::string field;
            std::vector<std::string> f;
            while (std::getline(ls, field, ','))
                f.push_back(field);
            while (f.size() < 5)
                f.emplace_back();
            LogRow r;
            r.iter = std::stoull(f[0]);
            if (r.iter >= state.next_iter)
                break;
            r.lr = std::stod(f[1]);
            r.loss = std::stod(f[2]);
            if (!f[3].empty())
                r.eval_psnr = std::stod(f[3]);
            if (!f[4].empty())
                r.eval_ssim = std::stod(f[4]);
            log.push_back(r);
        }
    } else {
        state.params = init_params(model, derive_seed(cfg.seed, 0));
    }

    auto write_log = [&] {
        std::ofstream os(out_dir / "metrics.csv", std::ios::trunc);
        os << format_log_csv(log);
    };
    auto snapshot = [&](const std::filesystem::path &stem, std::size_t next_iter) {
        state.next_iter = next_iter;
        std::ostringstream rs;
        rs << rng;
        state.rng_state = rs.str();
        save_checkpoint(stem, state);
    };

    std::optional<EvalResult> last_eval;
    for (std::size_t iter = state.next_iter; iter < cfg.total_iters; ++iter) {
        const double lr = lr_at(iter, cfg);
        Batch batch = make_batch(train_scenes, rng, cfg);
        double loss_value = 0.0;
        try {
            auto out = forward(state.params, model, batch.views);
            auto loss = l_total(out.stages, out.result, batch.gt);
            loss_value = loss.item();
            backward(loss);
        } catch (const NumericDomainError &e) {
            throw NumericDomainError("training aborted at iteration " + std::to_string(iter) + ": " + e.what());
        }
        if (!std::isfinite(loss_value))
            throw NumericDomainError("training aborted at iteration " + std::to_string(iter) + ": non-finite loss");
        const double norm = global_grad_norm(state.params);
        if (!std::isfinite(norm))
            throw NumericDomainError("training aborted at iteration " + std::to_string(iter) +
                                     ": non-finite gradient norm");
        const double scale = cfg.clip_norm > 0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
        adam_step(state.params, state.adam, lr, scale);
        state.params.zero_grad();

        LogRow row{iter, lr, loss_value, std::nullopt, std::nullopt};
        const bool last = iter + 1 == cfg.total_iters;
        if (!test_scenes.empty() && ((cfg.eval_every && (iter + 1) % cfg.eval_every == 0) || last)) {
            last_eval = evaluate(state.params, model, test_scenes);
            row.eval_psnr = last_eval->psnr;
            row.eval_ssim = last_eval->ssim;
            if (verbose)
                std::cerr << "iter " << iter + 1 << " loss " << loss_value << " eval psnr " << last_eval->psnr
                          << " ssim " << last_eval->ssim << '\n';
        }
        log.push_back(row);
        if (cfg.checkpoint_every && (iter + 1) % cfg.checkpoint_every == 0 && !last) {
            write_log();
            snapshot(out_dir / ("ckpt_" + std::to_string(iter + 1)), iter + 1);
        }
    }
    write_log();
    snapshot(out_dir / "final", std::max(state.next_iter, cfg.total_iters));

    TrainResult res;
    res.params = std::move(state.params);
    res.log = std::move(log);
    res.final_eval = last_eval;
    return res;
}

} // namespace rcnet
