#pragma once

#include <memory>
#include <string>

#include "splatlab/dataset.hpp"
#include "splatlab/losses.hpp"
#include "splatlab/model.hpp"

namespace splatlab {

struct LearningRates {
    double position = 1.6e-4; // scaled by scene_extent
    double primitive = 2.5e-3;
    double opacity = 5e-2;
    double planes = 1e-2;
    double mlp = 1e-3;
    double embedding = 1e-3;
};

struct TrainConfig {
    int total_iters = 2000;
    double loss_lambda = 0.2; // D-SSIM weight
    TrainMode mode = TrainMode::Vanilla;
    int switch_iter = -1; // hybrid; -1 = total_iters / 2
    uint64_t seed = 0;
    int eval_every = 100;
    int checkpoint_every = 1000;
    int threads = 0;

    LearningRates lr;

    // Explicit back-ends.
    int densify_interval = 100;
    double densify_until_frac = 0.6;
    int opacity_reset_interval = 3000;
    DensifyConfig densify;
    ConvexPruneConfig convex_prune;
    int prune_interval = 100; // convex compaction cadence, whole run
    int gaussian_init = 2000;
    int convex_init = 1200;
    int convex_k = 6;

    // K-Planes.
    KPlanesConfig kplanes;
    int kplanes_samples = 64;
    int kplanes_rays = 4096;

    // Appearance.
    int d_img = 32;
    int d_prim = 8;
    int head_hidden = 32;

    // Regularizers.
    double tv_weight = 1e-3;
    double opacity_sparsity = 1e-4;

    Vec3 background = Vec3::Zero();

    int resolved_switch_iter() const {
        return switch_iter > 0 ? switch_iter : total_iters / 2;
    }
    void validate() const;
};

TrainConfig train_config_from_json_file(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

struct RunLogRow {
    int64_t iter = 0;
    double loss = 0.0;
    double psnr = 0.0; // held-out views
    int64_t n_primitives = 0;
    int64_t n_parameters = 0;
    double seconds = 0.0; // cumulative wall clock
};

struct RunLog {
    std::vector<RunLogRow> rows;
    void save_csv(const std::string& path) const;
};

struct StepMetrics {
    double loss = 0.0;
    int64_t n_primitives = 0;
};

// Owns the model and optimizer state for one run.
class Trainer {
public:
    Trainer(Backend backend, const Dataset& dataset, const TrainConfig& cfg);
    ~Trainer();

    // One optimization step. iter counts from 0.
    StepMetrics train_step(int iter);

    // Full schedule: shuffled view sampling, periodic held-out evaluation
    // (including the 50%-of-schedule snapshot), checkpoints under run_dir
    // when non-empty.
    RunLog run(const std::string& run_dir = "");

    Model& model();
    const Model& model() const;
    const TrainConfig& config() const;

    double held_out_psnr() const; // mean over test views

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Convenience wrapper: build, run, return the trained model and its log.
std::pair<Model, RunLog> run_schedule(Backend backend, const Dataset& dataset,
                                      const TrainConfig& cfg, const std::string& run_dir = "");

} // namespace splatlab
