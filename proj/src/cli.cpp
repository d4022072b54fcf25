#include "rcnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcnet/config.hpp"
#include "rcnet/error.hpp"
#include "rcnet/gradcheck.hpp"
#include "rcnet/losses.hpp"
#include "rcnet/manifest.hpp"
#include "rcnet/metrics.hpp"
#include "rcnet/network.hpp"
#include "rcnet/simd/kernels.hpp"
#include "rcnet/trainer.hpp"

namespace rcnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

void add_common(CLI::App *cmd, CommonOptions &o, bool needs_out)
{
    cmd->add_option("--config", o.config_file, "Line-delimited JSON config file");
    cmd->add_option("--set", o.overrides, "Override a config key (key=value), repeatable");
    cmd->add_option("--seed", o.seed, "Seed for every random stream of the command");
    auto *opt = cmd->add_option("--out", o.out_dir, "Output directory");
    if (needs_out)
        opt->required();
}

RunConfig resolve(const CommonOptions &o)
{
    RunConfig cfg;
    if (!o.config_file.empty())
        cfg.load_file(o.config_file);
    for (const auto &kv : o.overrides)
        cfg.apply_override(kv);
    if (o.seed) {
        cfg.train.seed = *o.seed;
        cfg.synth.seed = *o.seed;
    }
    return cfg;
}

void snapshot_config(const RunConfig &cfg, const std::string &out_dir)
{
    if (out_dir.empty())
        return;
    fs::create_directories(out_dir);
    cfg.write_snapshot(fs::path(out_dir) / "resolved_config.json");
}

json number_or_null(const std::optional<double> &v)
{
    if (!v)
        return nullptr;
    if (std::isinf(*v))
        return *v > 0 ? "Infinity" : "-Infinity";
    return *v;
}

// Accepts a checkpoint stem, or a path to its .rctn file.
fs::path model_file(const std::string &arg)
{
    fs::path p(arg);
    if (p.extension() != ".rctn")
        p += ".rctn";
    return p;
}

ModelParams<float> load_any_model(const std::string &arg, ModelConfig &cfg)
{
    auto records = load_snapshot(model_file(arg));
    std::vector<NamedTensor> model_records;
    for (auto &r : records)
        if (r.name.rfind("adam.", 0) != 0)
            model_records.push_back(std::move(r));
    return from_records(model_records, cfg);
}

std::array<ImageRGB, 3> read_views(const std::vector<std::string> &views, const std::string &manifest_path,
                                   const std::string &scene)
{
    std::array<ImageRGB, 3> out;
    if (!views.empty()) {
        if (views.size() != 3)
            throw UsageError("--views needs exactly three images (auxiliary, primary, auxiliary)");
        for (std::size_t v = 0; v < 3; ++v)
            out[v] = load_image(views[v]);
    } else {
        if (manifest_path.empty() || scene.empty())
            throw UsageError("give either --views or --manifest with --scene");
        auto m = load_manifest(manifest_path);
        auto it = std::find_if(m.entries.begin(), m.entries.end(), [&](const auto &e) { return e.scene == scene; });
        if (it == m.entries.end())
            throw DataError("scene '" + scene + "' not in manifest");
        for (std::size_t v = 0; v < 3; ++v)
            out[v] = load_image(m.resolve(it->low[v]));
    }
    for (const auto &img : out)
        if (img.height != out[0].height || img.width != out[0].width)
            throw DataError("the three views differ in size");
    if (out[0].height < min_network_side || out[0].width < min_network_side)
        throw DataError("views must be at least 16x16");
    return out;
}

ViewSet<float> as_viewset(const std::array<ImageRGB, 3> &imgs)
{
    return {to_tensor<float>(imgs[0]), to_tensor<float>(imgs[1]), to_tensor<float>(imgs[2])};
}

// ---------------------------------------------------------------------------

int run_synth(const CommonOptions &common, const std::string &input_manifest, std::ostream &out)
{
    RunConfig cfg = resolve(common);
    const SynthConfig &sc = cfg.synth;
    if (input_manifest.empty() && sc.toy_scenes == 0)
        throw UsageError("synth needs --manifest or synth.toy_scenes > 0");
    if (!input_manifest.empty() && sc.toy_scenes > 0)
        throw UsageError("synth takes either --manifest or synth.toy_scenes, not both");
    if (sc.toy_test > sc.toy_scenes)
        throw UsageError("synth.toy_test exceeds synth.toy_scenes");
    snapshot_config(cfg, common.out_dir);
    const fs::path root(common.out_dir);
    fs::create_directories(root / "scenes");

    SynthOptions opts{sc.shot_gain, sc.read_sigma, sc.noise};
    SimilarityGate gate;
    gate.threshold = sc.gate_threshold;

    // Ground truth goes through 8-bit first so the recorded parameters
    // reproduce the stored low-light views from the stored ground truth.
    auto quantized = [](std::array<ImageRGB, 3> v) {
        for (auto &img : v)
            for (auto &x : img.data)
                x = float(quantize8(x)) / 255.0f;
        return v;
    };

    TripletManifest result;
    result.root = root;
    std::size_t rejected = 0;
    auto emit = [&](const std::string &scene, const std::string &split, const std::array<ImageRGB, 3> &gt,
                    std::uint64_t seed) {
        Rng rng(seed);
        SynthTriplet t = synth_triplet(gt, rng, opts);
        ManifestEntry e;
        e.scene = scene;
        e.split = split;
        fs::create_directories(root / "scenes" / scene);
        for (std::size_t v = 0; v < 3; ++v) {
            e.gt[v] = "scenes/" + scene + "/gt_" + std::to_string(v) + ".png";
            e.low[v] = "scenes/" + scene + "/low_" + std::to_string(v) + ".png";
            save_image(gt[v], root / e.gt[v]);
            save_image(t.low[v], root / e.low[v]);
        }
        e.params = t.params;
        result.entries.push_back(std::move(e));
    };

    if (sc.toy_scenes > 0) {
        constexpr std::size_t max_attempts = 32;
        for (std::size_t i = 0; i < sc.toy_scenes; ++i) {
            std::optional<std::array<ImageRGB, 3>> gt;
            for (std::size_t a = 0; a < max_attempts && !gt; ++a) {
                auto views = quantized(toy_scene(derive_seed(sc.seed, 2 * (i * max_attempts + a)), sc.toy_size,
                                                 sc.toy_size, sc.toy_max_shift));
                if (gate_triplet(views, gate))
                    gt = std::move(views);
                else
                    ++rejected;
            }
            if (!gt)
                throw DataError("could not generate a toy scene that passes the similarity gate");
            char name[32];
            std::snprintf(name, sizeof name, "toy%03zu", i);
            emit(name, i + sc.toy_test >= sc.toy_scenes ? "test" : "train", *gt, derive_seed(sc.seed, 2 * i + 1));
        }
    } else {
        TripletManifest in = load_manifest(input_manifest, false);
        for (std::size_t i = 0; i < in.entries.size(); ++i) {
            const auto &e = in.entries[i];
            std::array<ImageRGB, 3> gt;
            for (std::size_t v = 0; v < 3; ++v)
                gt[v] = load_image(in.resolve(e.gt[v]));
            for (const auto &img : gt)
                if (img.height != gt[0].height || img.width != gt[0].width)
                    throw DataError("scene '" + e.scene + "': views differ in size");
            gt = quantized(gt);
            if (!gate_triplet(gt, gate)) {
                ++rejected;
                continue;
            }
            emit(e.scene, e.split, gt, derive_seed(sc.seed, i));
        }
    }
    write_manifest(result, root / "manifest.jsonl");
    out << json{{"scenes", result.entries.size()}, {"rejected", rejected},
                {"manifest", (root / "manifest.jsonl").string()}}
               .dump()
        << '\n';
    return exit_ok;
}

int run_train(const CommonOptions &common, const std::string &manifest_path, const std::string &resume, bool quiet,
              std::ostream &out)
{
    RunConfig cfg = resolve(common);
    cfg.model.validate();
    cfg.train.validate(cfg.model);
    snapshot_config(cfg, common.out_dir);
    auto manifest = load_manifest(manifest_path);
    std::optional<fs::path> resume_stem;
    if (!resume.empty())
        resume_stem = model_file(resume).replace_extension();
    auto res = train(manifest, cfg.model, cfg.train, common.out_dir, resume_stem, !quiet);
    json summary{{"iterations", cfg.train.total_iters},
                 {"final_loss", res.log.empty() ? json(nullptr) : json(res.log.back().loss)},
                 {"checkpoint", (fs::path(common.out_dir) / "final").string()}};
    if (res.final_eval) {
        summary["eval_psnr"] = number_or_null(res.final_eval->psnr);
        summary["eval_ssim"] = res.final_eval->ssim;
        summary["input_psnr"] = number_or_null(res.final_eval->input_psnr);
    }
    out << summary.dump() << '\n';
    return exit_ok;
}

int run_enhance(const CommonOptions &common, const std::string &checkpoint, const std::vector<std::string> &views,
                const std::string &manifest_path, const std::string &scene, const std::string &output,
                const std::string &dump_stages, std::ostream &out)
{
    RunConfig cfg = resolve(common);
    snapshot_config(cfg, common.out_dir.empty() ? fs::path(output).parent_path().string() : common.out_dir);
    ModelConfig model;
    auto params = load_any_model(checkpoint, model);
    auto imgs = read_views(views, manifest_path, scene);
    auto res = forward(params, model, as_viewset(imgs));
    const ImageRGB enhanced = clamped(from_tensor(res.result));
    if (!fs::path(output).parent_path().empty())
        fs::create_directories(fs::path(output).parent_path());
    save_image(enhanced, output);
    json report{{"output", output}, {"height", enhanced.height}, {"width", enhanced.width}};
    if (!dump_stages.empty()) {
        fs::create_directories(dump_stages);
        json stages = json::array();
        for (std::size_t t = 0; t < res.stages.size(); ++t) {
            const fs::path p = fs::path(dump_stages) / ("stage_" + std::to_string(t + 1) + ".png");
            save_image(clamped(from_tensor(res.stages[t])), p);
            stages.push_back(p.string());
        }
        report["stages"] = stages;
    }
    out << report.dump() << '\n';
    return exit_ok;
}

struct EvalInputs {
    std::vector<std::string> enhanced, reference, sequence;
    std::string warp_a, warp_b, flow, mask;
};

int run_eval(const CommonOptions &common, const EvalInputs &in, std::ostream &out)
{
    RunConfig cfg = resolve(common);
    snapshot_config(cfg, common.out_dir);
    if (in.enhanced.size() != in.reference.size())
        throw UsageError("--enhanced and --reference must be given the same number of times");
    const bool want_warp = !in.warp_a.empty() || !in.warp_b.empty() || !in.flow.empty();
    if (want_warp && (in.warp_a.empty() || in.warp_b.empty() || in.flow.empty()))
        throw UsageError("warping error needs --warp-a, --warp-b and --flow");
    if (in.enhanced.empty() && in.sequence.empty() && !want_warp)
        throw UsageError("nothing to evaluate");

    std::optional<double> psnr_v, ssim_v, loe_v, ab_v, mabd_v, warp_v;
    if (!in.enhanced.empty()) {
        double p = 0, s = 0, l = 0;
        for (std::size_t i = 0; i < in.enhanced.size(); ++i) {
            auto e = load_image(in.enhanced[i]);
            auto r = load_image(in.reference[i]);
            p += psnr(e, r);
            s += ssim_image(e, r);
            l += loe(e, r);
        }
        const double n = double(in.enhanced.size());
        psnr_v = p / n;
        ssim_v = s / n;
        loe_v = l / n;
    }
    if (!in.sequence.empty()) {
        std::vector<ImageRGB> seq;
        for (const auto &p : in.sequence)
            seq.push_back(load_image(p));
        auto bc = ab_mabd(seq);
        ab_v = bc.ab;
        mabd_v = bc.mabd;
    }
    if (want_warp) {
        auto a = load_image(in.warp_a);
        auto b = load_image(in.warp_b);
        auto flow = load_flow(in.flow);
        std::vector<std::uint8_t> mask(a.pixels(), 1);
        if (!in.mask.empty()) {
            std::size_t h, w;
            mask = load_mask(in.mask, h, w);
            if (h != a.height || w != a.width)
                throw DataError("mask size differs from the images");
        }
        warp_v = warping_error(a, b, flow, mask);
    }
    json report{{"psnr", number_or_null(psnr_v)}, {"ssim", number_or_null(ssim_v)},
                {"loe", number_or_null(loe_v)},   {"ab", number_or_null(ab_v)},
                {"mabd", number_or_null(mabd_v)}, {"e_warp", number_or_null(warp_v)}};
    if (!common.out_dir.empty()) {
        std::ofstream os(fs::path(common.out_dir) / "metrics.json", std::ios::trunc);
        os << report.dump(2) << '\n';
    }
    out << report.dump() << '\n';
    return exit_ok;
}

void draw_line(ImageRGB &img, long x0, long y0, long x1, long y1, const float color[3])
{
    const long dx = std::labs(x1 - x0), dy = -std::labs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long e = dx + dy;
    for (;;) {
        if (x0 >= 0 && y0 >= 0 && std::size_t(x0) < img.width && std::size_t(y0) < img.height)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(std::size_t(y0), std::size_t(x0), c) = color[c];
        if (x0 == x1 && y0 == y1)
            break;
        const long e2 = 2 * e;
        if (e2 >= dy) {
            e += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            e += dx;
            y0 += sy;
        }
    }
}

int run_align_inspect(const CommonOptions &common, const std::string &checkpoint, const std::vector<std::string> &views,
                      const std::string &manifest_path, const std::string &scene, std::size_t unit, std::ostream &out)
{
    RunConfig cfg = resolve(common);
    snapshot_config(cfg, common.out_dir);
    ModelConfig model;
    auto params = load_any_model(checkpoint, model);
    if (!model.inter_af)
        throw UsageError("align-inspect: the model was built without cross-view alignment");
    if (unit < 1 || unit > model.units)
        throw UsageError("align-inspect: --unit must lie in [1, " + std::to_string(model.units) + "]");
    auto imgs = read_views(views, manifest_path, scene);
    auto res = forward(params, model, as_viewset(imgs));
    const auto &matches = res.matches[unit - 1];

    const Candidates &first = matches[0][0];
    json report{{"unit", unit},          {"patch", model.patch}, {"k", model.k},
                {"radius", model.radius}, {"rows", first.rows},   {"cols", first.cols}};
    json views_json = json::array();
    for (std::size_t v = 0; v < 3; ++v) {
        const Candidates &c = matches[v][0];
        json cells = json::array();
        for (std::size_t j = 0; j < c.cell_count(); ++j) {
            json idx = json::array(), rho = json::array();
            for (std::size_t r = 0; r < c.count[j]; ++r) {
                idx.push_back(c.at(j, r));
                rho.push_back(c.rho_at(j, r));
            }
            cells.push_back({{"cell", j}, {"row", j / c.cols}, {"col", j % c.cols}, {"index", idx}, {"rho", rho}});
        }
        views_json.push_back({{"view", v}, {"primary", v == primary_slot}, {"cells", cells}});
    }
    report["views"] = views_json;

    // Primary view, auto-exposed and magnified, with one segment per cell from
    // the cell centre to the centre of each view's top-1 match.
    constexpr std::size_t zoom = 4;
    const ImageRGB &base = imgs[primary_slot];
    float peak = 1e-3f;
    for (float v : base.data)
        peak = std::max(peak, v);
    ImageRGB canvas(base.height * zoom, base.width * zoom);
    for (std::size_t y = 0; y < canvas.height; ++y)
        for (std::size_t x = 0; x < canvas.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                canvas.at(y, x, c) = 0.8f * std::sqrt(base.at(y / zoom, x / zoom, c) / peak);
    const float colors[3][3] = {{1.0f, 0.2f, 0.2f}, {0.2f, 0.4f, 1.0f}, {0.2f, 1.0f, 0.2f}};
    const long half = long(model.patch * zoom / 2);
    for (std::size_t v = 0; v < 3; ++v) {
        const Candidates &c = matches[v][0];
        const long jitter = (long(v) - 1) * 2;
        for (std::size_t j = 0; j < c.cell_count(); ++j) {
            const std::size_t s = c.at(j, 0);
            const long y0 = long((j / c.cols) * model.patch * zoom) + half + jitter;
            const long x0 = long((j % c.cols) * model.patch * zoom) + half + jitter;
            const long y1 = long((s / c.cols) * model.patch * zoom) + half + jitter;
            const long x1 = long((s % c.cols) * model.patch * zoom) + half + jitter;
            draw_line(canvas, x0, y0, x1, y1, colors[v]);
        }
    }
    const fs::path dir = common.out_dir.empty() ? fs::path(".") : fs::path(common.out_dir);
    fs::create_directories(dir);
    const fs::path json_path = dir / ("align_u" + std::to_string(unit) + ".json");
    const fs::path png_path = dir / ("align_u" + std::to_string(unit) + ".png");
    std::ofstream(json_path, std::ios::trunc) << report.dump(1) << '\n';
    save_image(canvas, png_path);
    out << json{{"report", json_path.string()}, {"visualization", png_path.string()}}.dump() << '\n';
    return exit_ok;
}

int run_gradcheck(const CommonOptions &common, std::ostream &out)
{
    RunConfig cfg = resolve(common);
    snapshot_config(cfg, common.out_dir);
    auto results = gradcheck_suite(common.seed.value_or(cfg.train.seed));
    bool ok = true;
    double worst = 0.0;
    for (const auto &r : results) {
        char line[200];
        std::snprintf(line, sizeof line, "%-48s %.3e  (tol %.0e, nonsmooth %zu/%zu)  %s\n", r.name.c_str(),
                      r.max_rel_error, r.tolerance, r.nonsmooth, r.coordinates, r.passed() ? "ok" : "FAIL");
        out << line;
        ok = ok && r.passed();
        worst = std::max(worst, r.max_rel_error);
    }
    out << "checks " << results.size() << ", max relative error " << worst << ", isa "
        << simd::isa_name(simd::active_isa()) << '\n';
    return ok ? exit_ok : exit_numeric;
}

} // namespace

int dispatch(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Multi-view low-light enhancement toolkit", "rcnet"};
    app.require_subcommand(1);

    CommonOptions common;
    std::string manifest, resume, checkpoint, scene, output, dump_stages;
    std::vector<std::string> views;
    bool quiet = false;
    std::size_t unit = 1;
    EvalInputs eval_in;

    auto *synth = app.add_subcommand("synth", "Synthesize low-light triplets and a manifest");
    add_common(synth, common, true);
    synth->add_option("--manifest", manifest, "Manifest whose ground-truth views are degraded");
    synth->add_option("--toy", [&](const CLI::results_t &r) {
        common.overrides.push_back("synth.toy_scenes=" + r[0]);
        return true;
    }, "Generate this many procedural scenes instead");

    auto *train_cmd = app.add_subcommand("train", "Train on a manifest");
    add_common(train_cmd, common, true);
    train_cmd->add_option("--manifest", manifest, "Training manifest")->required();
    train_cmd->add_option("--resume", resume, "Checkpoint stem to resume from");
    train_cmd->add_flag("--quiet", quiet, "No progress output");

    auto *enhance = app.add_subcommand("enhance", "Enhance the primary view of a triplet");
    add_common(enhance, common, false);
    enhance->add_option("--checkpoint", checkpoint, "Model or checkpoint (.rctn or stem)")->required();
    enhance->add_option("--views", views, "Auxiliary, primary, auxiliary image paths")->expected(3);
    enhance->add_option("--manifest", manifest, "Manifest to take the views from");
    enhance->add_option("--scene", scene, "Scene id within --manifest");
    enhance->add_option("--output", output, "Enhanced PNG path")->required();
    enhance->add_option("--dump-stages", dump_stages, "Directory for per-stage predictions");

    auto *eval = app.add_subcommand("eval", "Image quality and consistency metrics as JSON");
    add_common(eval, common, false);
    eval->add_option("--enhanced", eval_in.enhanced, "Enhanced image (repeatable, paired with --reference)");
    eval->add_option("--reference", eval_in.reference, "Reference image (repeatable)");
    eval->add_option("--sequence", eval_in.sequence, "View sequence for AB/MABD");
    eval->add_option("--warp-a", eval_in.warp_a, "Image compared against the warped one");
    eval->add_option("--warp-b", eval_in.warp_b, "Image warped by --flow");
    eval->add_option("--flow", eval_in.flow, "RCFL flow file (a -> b)");
    eval->add_option("--mask", eval_in.mask, "Occlusion mask PNG (0 = occluded)");

    auto *inspect = app.add_subcommand("align-inspect", "Dump patch matches of one unit");
    add_common(inspect, common, false);
    inspect->add_option("--checkpoint", checkpoint, "Model or checkpoint (.rctn or stem)")->required();
    inspect->add_option("--views", views, "Auxiliary, primary, auxiliary image paths")->expected(3);
    inspect->add_option("--manifest", manifest, "Manifest to take the views from");
    inspect->add_option("--scene", scene, "Scene id within --manifest");
    inspect->add_option("--unit", unit, "Unit index, 1-based");

    auto *gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    add_common(gradcheck, common, false);

    std::vector<std::string> argv_store{"rcnet"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char *> argv;
    for (auto &a : argv_store)
        argv.push_back(a.data());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n" << app.help();
        return exit_usage;
    }

    try {
        if (synth->parsed())
            return run_synth(common, manifest, out);
        if (train_cmd->parsed())
            return run_train(common, manifest, resume, quiet, out);
        if (enhance->parsed())
            return run_enhance(common, checkpoint, views, manifest, scene, output, dump_stages, out);
        if (eval->parsed())
            return run_eval(common, eval_in, out);
        if (inspect->parsed())
            return run_align_inspect(common, checkpoint, views, manifest, scene, unit, out);
        if (gradcheck->parsed())
            return run_gradcheck(common, out);
    } catch (const UsageError &e) {
        err << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ContractError &e) {
        err << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const NumericDomainError &e) {
        err << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const Error &e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const fs::filesystem_error &e) {
        err << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    }
    err << app.help();
    return exit_usage;
}

int dispatch(int argc, char **argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

} // namespace rcnet
