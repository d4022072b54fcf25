#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcnet/manifest.hpp"
#include "rcnet/network.hpp"
#include "rcnet/synthesis.hpp"

namespace rcnet {

struct TrainConfig {
    std::size_t crop = 48;
    double flip_prob = 0.5;
    std::size_t batch_triplets = 2;
    double lr_initial = 2e-4;
    double lr_final = 1e-5;
    std::size_t decay_at = 804; // 37k of 92k iterations, scaled to total_iters
    std::size_t total_iters = 2000;
    std::uint64_t seed = 0;
    std::size_t eval_every = 500;
    std::size_t checkpoint_every = 0; // 0: final checkpoint only
    double clip_norm = 5.0;           // 0 disables clipping

    void validate(const ModelConfig &model) const; // throws UsageError
};

struct SceneImages {
    std::string scene;
    std::array<ImageRGB, 3> low;
    std::array<ImageRGB, 3> gt;
};

std::vector<SceneImages> load_scenes(const TripletManifest &manifest, const std::string &split);

/// One training sample: a scene, a crop window and flip shared by all views,
/// and which view acts as primary.
struct SamplePlan {
    std::size_t scene = 0;
    std::size_t y0 = 0, x0 = 0;
    bool flip = false;
    std::size_t primary = 1;
};

SamplePlan draw_plan(Rng &rng, const std::vector<SceneImages> &scenes, const TrainConfig &cfg);

struct Sample {
    std::array<ImageRGB, 3> views; // primary in slot 1, the others in original order
    ImageRGB gt;
};

Sample materialize(const SceneImages &scene, const SamplePlan &plan, std::size_t crop);

// Positions of the original views in network slot order for a given primary.
std::array<std::size_t, 3> slot_order(std::size_t primary);

struct Batch {
    ViewSet<float> views;
    Tensor gt;
    std::vector<SamplePlan> plans;
};

Batch make_batch(const std::vector<SceneImages> &scenes, Rng &rng, const TrainConfig &cfg);

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<float>> m, v;
};

/// Bias-corrected Adam on every parameter; gradients are multiplied by
/// grad_scale first. ContractError if any parameter lacks a gradient.
void adam_step(ModelParams<float> &params, AdamState &state, double lr, double grad_scale = 1.0);

double global_grad_norm(const ModelParams<float> &params);

// Step schedule: lr_initial before decay_at, lr_final from decay_at on.
double lr_at(std::size_t iter, const TrainConfig &cfg);

struct EvalResult {
    double psnr = 0.0;       // enhanced primary vs gt
    double ssim = 0.0;
    double input_psnr = 0.0; // low-light primary vs gt
};

/// Enhances view 1 of every scene at full resolution; means over scenes.
EvalResult evaluate(const ModelParams<float> &params, const ModelConfig &model, const std::vector<SceneImages> &scenes);

struct LogRow {
    std::size_t iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::optional<double> eval_psnr, eval_ssim;
};

struct Checkpoint {
    ModelParams<float> params;
    ModelConfig model;
    TrainConfig train;
    AdamState adam;
    std::size_t next_iter = 0;
    std::string rng_state;
};

// <stem>.rctn holds tensors (config record, parameters, Adam moments);
// <stem>.json holds the iteration, Adam step, RNG state and both configs.
void save_checkpoint(const std::filesystem::path &stem, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &stem);

struct TrainResult {
    ModelParams<float> params;
    std::vector<LogRow> log;
    std::optional<EvalResult> final_eval;
};

/// Trains on the manifest's "train" split and evaluates on "test". Writes
/// metrics.csv, checkpoints ckpt_<iter>.{rctn,json} and final.{rctn,json}
/// into out_dir. With `resume`, continues from that checkpoint stem.
TrainResult train(const TripletManifest &manifest, const ModelConfig &model, const TrainConfig &cfg,
                  const std::filesystem::path &out_dir, const std::optional<std::filesystem::path> &resume = {},
                  bool verbose = false);

std::string format_log_csv(const std::vector<LogRow> &rows);

} // namespace rcnet
