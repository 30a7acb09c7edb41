#include "splatlab/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "splatlab/losses.hpp"
#include "splatlab/rng.hpp"

namespace splatlab {

namespace fs = std::filesystem;

EmbedPolicy embed_policy_from_string(const std::string& s) {
    if (s == "none") return EmbedPolicy::None;
    if (s == "random") return EmbedPolicy::Random;
    if (s == "tuned") return EmbedPolicy::Tuned;
    throw Error(ErrorKind::ConfigError, "unknown embedding policy: " + s);
}

std::pair<int64_t, std::optional<int64_t>> count_parameters(const Model& model) {
    return {model.parameter_count(), model.primitive_count()};
}

namespace {

// L1 objective on one view with the scene frozen; returns loss and the
// gradient w.r.t. the embedding.
std::pair<double, std::vector<double>> embedding_objective(const Model& model,
                                                           const Camera& camera,
                                                           const ImageBuffer& gt,
                                                           const AppearanceEmbedding& e,
                                                           const TuneConfig& tune, uint64_t salt) {
    AppearanceContext actx{&model.appearance.head, e.v.data(), e.dim()};
    if (model.backend == Backend::Gaussian) {
        GaussianForwardContext ctx;
        RenderOutput out = rasterize_gaussians(model.gaussians, camera, &actx, model.raster, &ctx);
        LossResult loss = photometric_loss(out.color, gt, 0.0);
        auto grads = gaussian_backward(model.gaussians, camera, &actx, ctx, loss.grad);
        return {loss.loss, std::move(grads.embedding_grad)};
    }
    if (model.backend == Backend::Convex) {
        ConvexForwardContext ctx;
        RenderOutput out = rasterize_convexes(model.convexes, camera, &actx, model.raster, &ctx);
        LossResult loss = photometric_loss(out.color, gt, 0.0);
        auto grads = convex_backward(model.convexes, camera, &actx, ctx, loss.grad);
        return {loss.loss, std::move(grads.embedding_grad)};
    }
    // K-Planes: stochastic ray subset keeps tuning tractable.
    Rng rng(salt);
    int n = tune.kplanes_rays;
    std::vector<Ray> rays(n);
    std::vector<Vec3> gtc(n);
    std::vector<RaySampleBatch> samples(n);
    std::vector<RayUpstream> upstream(n);
    SamplingConfig scfg = model.sampling;
    double l1 = 0.0;
    double inv_n = 1.0 / (3.0 * n);
    for (int i = 0; i < n; ++i) {
        int x = static_cast<int>(rng.uniform_index(camera.width));
        int y = static_cast<int>(rng.uniform_index(camera.height));
        rays[i] = ray_for_pixel(camera, x + 0.5, y + 0.5);
        gtc[i] = Vec3(gt.at(x, y, 0), gt.at(x, y, 1), gt.at(x, y, 2));
        RayRender r = render_ray(model.field, rays[i], scfg, e.v.data(), nullptr, &samples[i]);
        for (int c = 0; c < 3; ++c) {
            double d = r.rgb[c] - gtc[i][c];
            l1 += std::abs(d);
            upstream[i].rgb[c] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv_n;
        }
    }
    l1 *= inv_n;
    KPlanesGrads grads;
    grads.resize_like(model.field);
    render_rays_backward(model.field, rays, samples, scfg, e.v.data(), upstream, grads);
    return {l1, std::move(grads.embedding)};
}

} // namespace

AppearanceEmbedding tune_embedding_for_view(const Model& model, const Camera& camera,
                                            const ImageBuffer& gt_image, const TuneConfig& tune,
                                            uint64_t seed) {
    if (!model.has_appearance())
        throw Error(ErrorKind::VanillaModel, "cannot tune embeddings of a vanilla model");
    if (gt_image.width != camera.width || gt_image.height != camera.height)
        throw Error(ErrorKind::DimensionMismatch, "ground-truth image does not match the camera");
    AppearanceEmbedding init;
    init.v.assign(model.appearance.head.d_img, 0.0);
    int step_counter = 0;
    auto objective = [&](const AppearanceEmbedding& e) {
        uint64_t salt = seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(step_counter++);
        return embedding_objective(model, camera, gt_image, e, tune, salt);
    };
    return tune_embedding(objective, init, tune.steps, tune.lr);
}

MetricRecord evaluate_model(const Model& model, const Dataset& dataset, EmbedPolicy policy,
                            const EvalConfig& cfg, const std::string& tag_base,
                            const TuneConfig& tune) {
    if (policy != EmbedPolicy::None && !model.has_appearance())
        throw Error(ErrorKind::VanillaModel,
                    "embedding policies require a model trained in wild mode");
    auto views = dataset.test_views();
    if (views.empty()) throw Error(ErrorKind::DataError, "dataset has no test views");

    double iou = 0, tpr = 0, fpr = 0, fdr = 0, ps = 0, ss = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const DatasetView& v = *views[i];
        if (!v.mask)
            throw Error(ErrorKind::MissingGroundTruth, "view " + v.id + " has no ground-truth mask");

        AppearanceEmbedding e;
        const AppearanceEmbedding* pe = nullptr;
        if (policy == EmbedPolicy::Random) {
            e = embedding_for_eval_random(model.appearance, cfg.seed + i);
            pe = &e;
        } else if (policy == EmbedPolicy::Tuned) {
            e = tune_embedding_for_view(model, v.camera, v.image, tune, cfg.seed + i);
            pe = &e;
        }
        RenderOutput out = model.render(v.camera, pe);
        ImageBuffer mask = depth_to_mask(out.depth, out.alpha, cfg);
        GeometricRates r = rates(confusion(mask, *v.mask));
        iou += r.iou;
        tpr += r.tpr;
        fpr += r.fpr;
        fdr += r.fdr;
        ps += psnr(out.color, v.image);
        ss += ssim(out.color, v.image);
    }
    double n = static_cast<double>(views.size());
    MetricRecord rec;
    rec.model_tag = tag_base + (policy == EmbedPolicy::Tuned ? "*" : "");
    rec.iou = iou / n;
    rec.tpr = tpr / n;
    rec.fpr = fpr / n;
    rec.fdr = fdr / n;
    rec.psnr_db = ps / n;
    rec.ssim_val = ss / n;
    auto [params, prims] = count_parameters(model);
    rec.n_parameters = params;
    rec.n_primitives = prims;
    return rec;
}

namespace {

std::string group_thousands(int64_t v) {
    std::string digits = std::to_string(v);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count > 0 && count % 3 == 0) out.insert(out.begin(), ' ');
        out.insert(out.begin(), *it);
        ++count;
    }
    return out;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

// Appends " [1]" / " [2]" / " [3]" to the best three cells of one column.
void mark_best(std::vector<std::string>& cells, const std::vector<double>& values,
               bool higher_better) {
    if (values.size() < 2) return;
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return higher_better ? values[a] > values[b] : values[a] < values[b];
    });
    const char* tags[3] = {" [1]", " [2]", " [3]"};
    for (std::size_t r = 0; r < std::min<std::size_t>(3, order.size()); ++r)
        cells[order[r]] += tags[r];
}

} // namespace

std::string report_markdown(const std::vector<MetricRecord>& records) {
    std::size_t n = records.size();
    std::vector<std::string> iou(n), tpr(n), fpr(n), fdr(n), params(n), ps(n), ss(n);
    std::vector<double> viou(n), vtpr(n), vfpr(n), vfdr(n), vparams(n), vps(n), vss(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = records[i];
        iou[i] = fmt2(r.iou);
        tpr[i] = fmt2(r.tpr);
        fpr[i] = fmt2(r.fpr);
        fdr[i] = fmt2(r.fdr);
        ps[i] = fmt2(r.psnr_db);
        ss[i] = fmt2(r.ssim_val);
        params[i] = group_thousands(r.n_parameters);
        if (r.n_primitives) params[i] += " (" + group_thousands(*r.n_primitives) + ")";
        viou[i] = r.iou;
        vtpr[i] = r.tpr;
        vfpr[i] = r.fpr;
        vfdr[i] = r.fdr;
        vps[i] = r.psnr_db;
        vss[i] = r.ssim_val;
        vparams[i] = static_cast<double>(r.n_parameters);
    }
    mark_best(iou, viou, true);
    mark_best(tpr, vtpr, true);
    mark_best(fpr, vfpr, false);
    mark_best(fdr, vfdr, false);
    mark_best(params, vparams, false);
    mark_best(ps, vps, true);
    mark_best(ss, vss, true);

    std::string md;
    md += "# Geometric metrics\n\n";
    md += "| Model | IoU ↑ | TPR ↑ | FPR ↓ | FDR ↓ | # Parameters ↓ |\n";
    md += "|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < n; ++i)
        md += "| " + records[i].model_tag + " | " + iou[i] + " | " + tpr[i] + " | " + fpr[i] +
              " | " + fdr[i] + " | " + params[i] + " |\n";
    md += "\n# Photometric metrics\n\n";
    md += "| Model | PSNR ↑ | SSIM ↑ | LPIPS ↓ |\n";
    md += "|---|---|---|---|\n";
    for (std::size_t i = 0; i < n; ++i)
        md += "| " + records[i].model_tag + " | " + ps[i] + " | " + ss[i] + " | n/a |\n";
    return md;
}

std::string report_csv(const std::vector<MetricRecord>& records) {
    std::string csv = "model,iou,tpr,fpr,fdr,psnr,ssim,lpips,n_primitives,n_parameters\n";
    char buf[256];
    for (const auto& r : records) {
        std::string prims = r.n_primitives ? std::to_string(*r.n_primitives) : "";
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,n/a,%s,%lld\n",
                      r.model_tag.c_str(), r.iou, r.tpr, r.fpr, r.fdr, r.psnr_db, r.ssim_val,
                      prims.c_str(), static_cast<long long>(r.n_parameters));
        csv += buf;
    }
    return csv;
}

void emit_report(const std::vector<MetricRecord>& records, const std::string& out_dir) {
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "report.csv");
        if (!out) throw Error(ErrorKind::DataError, "cannot write report.csv in " + out_dir);
        out << report_csv(records);
    }
    {
        std::ofstream out(fs::path(out_dir) / "report.md");
        if (!out) throw Error(ErrorKind::DataError, "cannot write report.md in " + out_dir);
        out << report_markdown(records);
    }
}

} // namespace splatlab
