#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splatlab/dataset.hpp"
#include "splatlab/metrics.hpp"
#include "splatlab/model.hpp"

namespace splatlab {

enum class EmbedPolicy {
    None,   // vanilla models
    Random, // drawn from the training embeddings' empirical moments
    Tuned,  // optimized against each ground-truth image (privileged)
};

EmbedPolicy embed_policy_from_string(const std::string& s);

struct MetricRecord {
    std::string model_tag; // tuned policies carry the trailing *
    double iou = 0.0, tpr = 0.0, fpr = 0.0, fdr = 0.0;
    double psnr_db = 0.0;
    double ssim_val = 0.0;
    std::optional<int64_t> n_primitives;
    int64_t n_parameters = 0;
};

// Per the evaluation protocol: appearance table and per-primitive codes are
// excluded from the count.
std::pair<int64_t, std::optional<int64_t>> count_parameters(const Model& model);

struct TuneConfig {
    int steps = 100;
    double lr = 1e-2;
    int kplanes_rays = 2048; // stochastic ray subset per tuning step
};

// Optimizes an embedding against one ground-truth view, scene frozen.
AppearanceEmbedding tune_embedding_for_view(const Model& model, const Camera& camera,
                                            const ImageBuffer& gt_image,
                                            const TuneConfig& tune = {}, uint64_t seed = 0);

// Renders every test view under the embedding policy, computes geometric and
// photometric metrics per image, then averages (per-image-then-mean).
MetricRecord evaluate_model(const Model& model, const Dataset& dataset, EmbedPolicy policy,
                            const EvalConfig& cfg, const std::string& tag_base,
                            const TuneConfig& tune = {});

// Table-style reports. Geometric table: Model | IoU | TPR | FPR | FDR |
// # Parameters; photometric table: Model | PSNR | SSIM | LPIPS. First,
// second and third best per column are marked [1] [2] [3].
std::string report_markdown(const std::vector<MetricRecord>& records);
std::string report_csv(const std::vector<MetricRecord>& records);
void emit_report(const std::vector<MetricRecord>& records, const std::string& out_dir);

} // namespace splatlab
