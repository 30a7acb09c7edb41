#include "splatlab/kplanes.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "splatlab/threading.hpp"

namespace splatlab {

namespace {

constexpr double kMaxOpticalDepth = 27.631021115928547; // exp(-x) = 1e-12

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_grad(double x) {
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// Plane axes: XY -> (x,y), XZ -> (x,z), YZ -> (y,z).
constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

struct BilinearTap {
    int idx[4];    // flat feature indices of the 4 corners (x feature stride)
    double w[4];
};

inline BilinearTap plane_tap(int res, double u, double v) {
    // u, v in [0,1]; node-centered grid with res nodes per axis.
    double gu = u * (res - 1), gv = v * (res - 1);
    int i0 = std::min(static_cast<int>(gu), res - 2);
    int j0 = std::min(static_cast<int>(gv), res - 2);
    if (i0 < 0) i0 = 0;
    if (j0 < 0) j0 = 0;
    double fu = gu - i0, fv = gv - j0;
    BilinearTap t;
    t.idx[0] = j0 * res + i0;
    t.idx[1] = j0 * res + i0 + 1;
    t.idx[2] = (j0 + 1) * res + i0;
    t.idx[3] = (j0 + 1) * res + i0 + 1;
    t.w[0] = (1 - fu) * (1 - fv);
    t.w[1] = fu * (1 - fv);
    t.w[2] = (1 - fu) * fv;
    t.w[3] = fu * fv;
    return t;
}

inline Vec3 normalized_coords(const KPlanesField& field, const Vec3& p) {
    Vec3 u;
    for (int a = 0; a < 3; ++a) {
        double span = field.aabb_max[a] - field.aabb_min[a];
        u[a] = std::clamp((p[a] - field.aabb_min[a]) / span, 0.0, 1.0);
    }
    return u;
}

void matvec(const std::vector<double>& w, const std::vector<double>& b, const double* x,
            int out_dim, int in_dim, double* out) {
    for (int o = 0; o < out_dim; ++o) {
        double acc = b[o];
        const double* row = &w[static_cast<std::size_t>(o) * in_dim];
        for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        out[o] = acc;
    }
}

} // namespace

int64_t KPlanesField::parameter_count() const {
    int64_t n = 0;
    for (const auto& level : planes)
        for (const auto& plane : level) n += static_cast<int64_t>(plane.size());
    n += static_cast<int64_t>(w1.size() + b1.size() + w2.size() + b2.size() + w_sigma.size() +
                              b_sigma.size() + w_color.size() + b_color.size() + w_emb.size());
    return n;
}

KPlanesField KPlanesField::init(const KPlanesConfig& cfg, const Vec3& aabb_min,
                                const Vec3& aabb_max, Rng& rng) {
    KPlanesField f;
    f.cfg = cfg;
    f.aabb_min = aabb_min;
    f.aabb_max = aabb_max;
    f.planes.resize(cfg.resolutions.size());
    for (std::size_t r = 0; r < cfg.resolutions.size(); ++r) {
        std::size_t cells =
            static_cast<std::size_t>(cfg.resolutions[r]) * cfg.resolutions[r] * cfg.features;
        for (int p = 0; p < 3; ++p) {
            f.planes[r][p].resize(cells);
            for (double& v : f.planes[r][p]) v = rng.uniform(-0.1, 0.1);
        }
    }
    int fd = f.feature_dim();
    auto fill = [&rng](std::vector<double>& w, int fan_in) {
        double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w) v = rng.uniform(-s, s);
    };
    f.w1.resize(static_cast<std::size_t>(cfg.hidden) * fd);
    fill(f.w1, fd);
    f.b1.assign(cfg.hidden, 0.0);
    f.w2.resize(static_cast<std::size_t>(cfg.hidden) * cfg.hidden);
    fill(f.w2, cfg.hidden);
    f.b2.assign(cfg.hidden, 0.0);
    f.w_sigma.resize(cfg.hidden);
    fill(f.w_sigma, cfg.hidden);
    f.b_sigma.assign(1, 0.0);
    f.w_color.resize(3 * static_cast<std::size_t>(cfg.hidden));
    fill(f.w_color, cfg.hidden);
    f.b_color.assign(3, 0.0);
    f.w_emb.assign(3 * static_cast<std::size_t>(cfg.d_img), 0.0);
    return f;
}

void sample_features(const KPlanesField& field, const Vec3& p, double* out) {
    Vec3 u = normalized_coords(field, p);
    int fdim = field.cfg.features;
    for (std::size_t r = 0; r < field.cfg.resolutions.size(); ++r) {
        int res = field.cfg.resolutions[r];
        double* dst = out + r * fdim;
        bool multiply = field.cfg.multiply_planes;
        for (int f = 0; f < fdim; ++f) dst[f] = multiply ? 1.0 : 0.0;
        for (int pl = 0; pl < 3; ++pl) {
            BilinearTap tap = plane_tap(res, u[kPlaneAxes[pl][0]], u[kPlaneAxes[pl][1]]);
            const auto& plane = field.planes[r][pl];
            for (int f = 0; f < fdim; ++f) {
                double v = 0.0;
                for (int c = 0; c < 4; ++c)
                    v += tap.w[c] * plane[static_cast<std::size_t>(tap.idx[c]) * fdim + f];
                if (multiply)
                    dst[f] *= v;
                else
                    dst[f] += v / 3.0;
            }
        }
    }
}

void decode(const KPlanesField& field, const double* feature, const double* embedding,
            Vec3& rgb, double& sigma, DecodeScratch* scratch) {
    int fd = field.feature_dim();
    int hd = field.cfg.hidden;
    DecodeScratch local;
    DecodeScratch& s = scratch ? *scratch : local;
    s.z1.resize(hd);
    s.h1.resize(hd);
    s.z2.resize(hd);
    s.h2.resize(hd);
    matvec(field.w1, field.b1, feature, hd, fd, s.z1.data());
    for (int i = 0; i < hd; ++i) s.h1[i] = silu(s.z1[i]);
    matvec(field.w2, field.b2, s.h1.data(), hd, hd, s.z2.data());
    for (int i = 0; i < hd; ++i) s.h2[i] = silu(s.z2[i]);

    double zs = field.b_sigma[0];
    for (int i = 0; i < hd; ++i) zs += field.w_sigma[i] * s.h2[i];
    sigma = softplus(zs);
    s.zs = zs;

    for (int c = 0; c < 3; ++c) {
        double acc = field.b_color[c];
        const double* row = &field.w_color[static_cast<std::size_t>(c) * hd];
        for (int i = 0; i < hd; ++i) acc += row[i] * s.h2[i];
        if (field.cfg.d_img > 0) {
            if (!embedding)
                throw Error(ErrorKind::DimensionMismatch, "decoder expects an appearance embedding");
            const double* erow = &field.w_emb[static_cast<std::size_t>(c) * field.cfg.d_img];
            for (int i = 0; i < field.cfg.d_img; ++i) acc += erow[i] * embedding[i];
        }
        s.zc[c] = acc;
        rgb[c] = sigmoid(acc);
    }
}

namespace {

bool ray_aabb(const KPlanesField& field, const Ray& ray, double near, double far, double& t0,
              double& t1) {
    t0 = near;
    t1 = far;
    for (int a = 0; a < 3; ++a) {
        double inv = 1.0 / ray.direction[a];
        double ta = (field.aabb_min[a] - ray.origin[a]) * inv;
        double tb = (field.aabb_max[a] - ray.origin[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t1 > t0;
}

} // namespace

RayRender render_ray(const KPlanesField& field, const Ray& ray, const SamplingConfig& cfg,
                     const double* embedding, Rng* rng, RaySampleBatch* samples) {
    RayRender out;
    double t0, t1;
    if (!ray_aabb(field, ray, cfg.near, cfg.far, t0, t1)) {
        out.rgb = cfg.background;
        out.depth = cfg.far;
        out.transmittance = 1.0;
        if (samples) *samples = RaySampleBatch{};
        return out;
    }

    int n = cfg.n_samples;
    std::vector<double> ts(n), deltas(n);
    double step = (t1 - t0) / n;
    for (int i = 0; i < n; ++i) {
        double jitter = (cfg.stratified && rng) ? rng->uniform() : 0.5;
        ts[i] = t0 + (i + jitter) * step;
    }
    for (int i = 0; i + 1 < n; ++i) deltas[i] = ts[i + 1] - ts[i];
    deltas[n - 1] = t1 - ts[n - 1];
    if (samples) {
        samples->hit = true;
        samples->ts = ts;
        samples->deltas = deltas;
    }

    double t_acc = 1.0;
    Vec3 color = Vec3::Zero();
    double depth_num = 0.0, weight_sum = 0.0;
    std::vector<double> feat(field.feature_dim());
    Vec3 rgb;
    double sigma;
    for (int i = 0; i < n; ++i) {
        sample_features(field, ray.at(ts[i]), feat.data());
        decode(field, feat.data(), embedding, rgb, sigma);
        double od = std::min(sigma * deltas[i], kMaxOpticalDepth);
        double a = 1.0 - std::exp(-od);
        double w = t_acc * a;
        color += w * rgb;
        depth_num += w * ts[i];
        weight_sum += w;
        t_acc *= 1.0 - a;
    }
    out.rgb = color + t_acc * cfg.background;
    out.transmittance = t_acc;
    out.depth = weight_sum >= cfg.alpha_bg_eps ? depth_num / weight_sum : cfg.far;
    return out;
}

RenderOutput render_kplanes_image(const KPlanesField& field, const Camera& camera,
                                  const SamplingConfig& cfg, const double* embedding) {
    camera.validate();
    int w = camera.width, h = camera.height;
    RenderOutput out;
    out.color = ImageBuffer(w, h, 3);
    out.depth = ImageBuffer(w, h, 1);
    out.alpha = ImageBuffer(w, h, 1);
    parallel_for(static_cast<std::size_t>(w) * h, [&](std::size_t i) {
        int x = static_cast<int>(i) % w;
        int y = static_cast<int>(i) / w;
        Ray ray = ray_for_pixel(camera, x + 0.5, y + 0.5);
        RayRender r = render_ray(field, ray, cfg, embedding);
        out.color.at(x, y, 0) = std::clamp(r.rgb.x(), 0.0, 1.0);
        out.color.at(x, y, 1) = std::clamp(r.rgb.y(), 0.0, 1.0);
        out.color.at(x, y, 2) = std::clamp(r.rgb.z(), 0.0, 1.0);
        out.depth.at(x, y) = r.depth;
        out.alpha.at(x, y) = 1.0 - r.transmittance;
    }, cfg.threads);
    return out;
}

void KPlanesGrads::resize_like(const KPlanesField& field) {
    planes.resize(field.planes.size());
    for (std::size_t r = 0; r < field.planes.size(); ++r)
        for (int p = 0; p < 3; ++p) planes[r][p].assign(field.planes[r][p].size(), 0.0);
    w1.assign(field.w1.size(), 0.0);
    b1.assign(field.b1.size(), 0.0);
    w2.assign(field.w2.size(), 0.0);
    b2.assign(field.b2.size(), 0.0);
    w_sigma.assign(field.w_sigma.size(), 0.0);
    b_sigma.assign(field.b_sigma.size(), 0.0);
    w_color.assign(field.w_color.size(), 0.0);
    b_color.assign(field.b_color.size(), 0.0);
    w_emb.assign(field.w_emb.size(), 0.0);
    embedding.assign(field.cfg.d_img, 0.0);
}

void KPlanesGrads::add(const KPlanesGrads& other) {
    auto axpy = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    for (std::size_t r = 0; r < planes.size(); ++r)
        for (int p = 0; p < 3; ++p) axpy(planes[r][p], other.planes[r][p]);
    axpy(w1, other.w1);
    axpy(b1, other.b1);
    axpy(w2, other.w2);
    axpy(b2, other.b2);
    axpy(w_sigma, other.w_sigma);
    axpy(b_sigma, other.b_sigma);
    axpy(w_color, other.w_color);
    axpy(b_color, other.b_color);
    axpy(w_emb, other.w_emb);
    axpy(embedding, other.embedding);
}

namespace {

// Feature gradient scattered back through the bilinear taps.
void scatter_features(const KPlanesField& field, const Vec3& p, const double* dfeat,
                      KPlanesGrads& grads) {
    Vec3 u = normalized_coords(field, p);
    int fdim = field.cfg.features;
    for (std::size_t r = 0; r < field.cfg.resolutions.size(); ++r) {
        int res = field.cfg.resolutions[r];
        const double* df = dfeat + r * fdim;
        BilinearTap taps[3];
        for (int pl = 0; pl < 3; ++pl)
            taps[pl] = plane_tap(res, u[kPlaneAxes[pl][0]], u[kPlaneAxes[pl][1]]);
        if (!field.cfg.multiply_planes) {
            for (int pl = 0; pl < 3; ++pl) {
                auto& gplane = grads.planes[r][pl];
                for (int f = 0; f < fdim; ++f) {
                    double g = df[f] / 3.0;
                    if (g == 0.0) continue;
                    for (int c = 0; c < 4; ++c)
                        gplane[static_cast<std::size_t>(taps[pl].idx[c]) * fdim + f] +=
                            g * taps[pl].w[c];
                }
            }
        } else {
            // product fusion: d/d(plane_a) = df * prod_{b != a} value_b
            double vals[3];
            for (int f = 0; f < fdim; ++f) {
                for (int pl = 0; pl < 3; ++pl) {
                    const auto& plane = field.planes[r][pl];
                    double v = 0.0;
                    for (int c = 0; c < 4; ++c)
                        v += taps[pl].w[c] * plane[static_cast<std::size_t>(taps[pl].idx[c]) * fdim + f];
                    vals[pl] = v;
                }
                for (int pl = 0; pl < 3; ++pl) {
                    double g = df[f] * vals[(pl + 1) % 3] * vals[(pl + 2) % 3];
                    if (g == 0.0) continue;
                    auto& gplane = grads.planes[r][pl];
                    for (int c = 0; c < 4; ++c)
                        gplane[static_cast<std::size_t>(taps[pl].idx[c]) * fdim + f] +=
                            g * taps[pl].w[c];
                }
            }
        }
    }
}

// MLP backward for one sample; accumulates weight grads and feature grad.
void decode_backward(const KPlanesField& field, const double* feature, const double* embedding,
                     const DecodeScratch& s, const Vec3& drgb, double dsigma,
                     KPlanesGrads& grads, double* dfeat) {
    int fd = field.feature_dim();
    int hd = field.cfg.hidden;

    std::vector<double> dh2(hd, 0.0);
    double dzs = dsigma * sigmoid(s.zs);
    if (dzs != 0.0) {
        grads.b_sigma[0] += dzs;
        for (int i = 0; i < hd; ++i) {
            grads.w_sigma[i] += dzs * s.h2[i];
            dh2[i] += dzs * field.w_sigma[i];
        }
    }
    for (int c = 0; c < 3; ++c) {
        double sc = sigmoid(s.zc[c]);
        double dzc = drgb[c] * sc * (1.0 - sc);
        if (dzc == 0.0) continue;
        grads.b_color[c] += dzc;
        const double* row = &field.w_color[static_cast<std::size_t>(c) * hd];
        double* grow = &grads.w_color[static_cast<std::size_t>(c) * hd];
        for (int i = 0; i < hd; ++i) {
            grow[i] += dzc * s.h2[i];
            dh2[i] += dzc * row[i];
        }
        if (field.cfg.d_img > 0) {
            const double* erow = &field.w_emb[static_cast<std::size_t>(c) * field.cfg.d_img];
            double* gerow = &grads.w_emb[static_cast<std::size_t>(c) * field.cfg.d_img];
            for (int i = 0; i < field.cfg.d_img; ++i) {
                gerow[i] += dzc * embedding[i];
                grads.embedding[i] += dzc * erow[i];
            }
        }
    }

    std::vector<double> dh1(hd, 0.0);
    for (int j = 0; j < hd; ++j) {
        double dz2 = dh2[j] * silu_grad(s.z2[j]);
        if (dz2 == 0.0) continue;
        grads.b2[j] += dz2;
        const double* row = &field.w2[static_cast<std::size_t>(j) * hd];
        double* grow = &grads.w2[static_cast<std::size_t>(j) * hd];
        for (int i = 0; i < hd; ++i) {
            grow[i] += dz2 * s.h1[i];
            dh1[i] += dz2 * row[i];
        }
    }
    for (int j = 0; j < hd; ++j) {
        double dz1 = dh1[j] * silu_grad(s.z1[j]);
        if (dz1 == 0.0) continue;
        grads.b1[j] += dz1;
        const double* row = &field.w1[static_cast<std::size_t>(j) * fd];
        double* grow = &grads.w1[static_cast<std::size_t>(j) * fd];
        for (int i = 0; i < fd; ++i) {
            grow[i] += dz1 * feature[i];
            dfeat[i] += dz1 * row[i];
        }
    }
}

void ray_backward(const KPlanesField& field, const Ray& ray, const RaySampleBatch& samples,
                  const SamplingConfig& cfg, const double* embedding, const RayUpstream& up,
                  KPlanesGrads& grads) {
    if (!samples.hit) return; // ray missed the aabb: zero gradients everywhere
    int n = static_cast<int>(samples.ts.size());

    // Recompute the forward pass, keeping per-sample decoder state.
    std::vector<double> feats(static_cast<std::size_t>(n) * field.feature_dim());
    std::vector<DecodeScratch> scratch(n);
    std::vector<Vec3> rgbs(n);
    std::vector<double> sigmas(n), as(n), tprefix(n + 1);
    tprefix[0] = 1.0;
    double depth_num = 0.0, weight_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double* feat = &feats[static_cast<std::size_t>(i) * field.feature_dim()];
        sample_features(field, ray.at(samples.ts[i]), feat);
        decode(field, feat, embedding, rgbs[i], sigmas[i], &scratch[i]);
        double od = std::min(sigmas[i] * samples.deltas[i], kMaxOpticalDepth);
        as[i] = 1.0 - std::exp(-od);
        double w = tprefix[i] * as[i];
        depth_num += w * samples.ts[i];
        weight_sum += w;
        tprefix[i + 1] = tprefix[i] * (1.0 - as[i]);
    }
    double t_final = tprefix[n];
    bool fg = weight_sum >= cfg.alpha_bg_eps;
    double depth = fg ? depth_num / weight_sum : cfg.far;

    // dL/da_k via the suffix trick, then through sigma and the decoder.
    double g_tn = up.rgb.dot(cfg.background) + up.transmittance;
    double suffix = g_tn * t_final;
    std::vector<double> dfeat(field.feature_dim());
    for (int k = n - 1; k >= 0; --k) {
        double w = tprefix[k] * as[k];
        double dl_dw = up.rgb.dot(rgbs[k]);
        if (fg && up.depth != 0.0) dl_dw += up.depth * (samples.ts[k] - depth) / weight_sum;
        double one_minus = std::max(1.0 - as[k], 1e-300);
        double dl_da = tprefix[k] * dl_dw - suffix / one_minus;
        suffix += w * dl_dw;

        double od = sigmas[k] * samples.deltas[k];
        double dsigma =
            od >= kMaxOpticalDepth ? 0.0 : dl_da * samples.deltas[k] * (1.0 - as[k]);
        Vec3 drgb = up.rgb * w;
        std::fill(dfeat.begin(), dfeat.end(), 0.0);
        const double* feat = &feats[static_cast<std::size_t>(k) * field.feature_dim()];
        decode_backward(field, feat, embedding, scratch[k], drgb, dsigma, grads, dfeat.data());
        scatter_features(field, ray.at(samples.ts[k]), dfeat.data(), grads);
    }
}

constexpr std::size_t kRayChunk = 256;

} // namespace

void render_rays_backward(const KPlanesField& field, const std::vector<Ray>& rays,
                          const std::vector<RaySampleBatch>& samples,
                          const SamplingConfig& cfg, const double* embedding,
                          const std::vector<RayUpstream>& upstream, KPlanesGrads& grads) {
    if (rays.size() != samples.size() || rays.size() != upstream.size())
        throw Error(ErrorKind::MissingForwardState,
                    "ray batch, samples and upstream gradients must align");
    std::size_t n_chunks = (rays.size() + kRayChunk - 1) / kRayChunk;
    std::vector<std::unique_ptr<KPlanesGrads>> chunk_grads(n_chunks);
    parallel_for(n_chunks, [&](std::size_t c) {
        auto g = std::make_unique<KPlanesGrads>();
        g->resize_like(field);
        std::size_t lo = c * kRayChunk, hi = std::min(rays.size(), lo + kRayChunk);
        for (std::size_t i = lo; i < hi; ++i)
            ray_backward(field, rays[i], samples[i], cfg, embedding, upstream[i], *g);
        chunk_grads[c] = std::move(g);
    }, cfg.threads);
    for (std::size_t c = 0; c < n_chunks; ++c) grads.add(*chunk_grads[c]);
}

double kplanes_tv_loss(const KPlanesField& field, double weight, KPlanesGrads* grads) {
    double total = 0.0;
    const int n_planes = 3 * static_cast<int>(field.planes.size());
    int fdim = field.cfg.features;
    for (std::size_t r = 0; r < field.planes.size(); ++r) {
        int res = field.cfg.resolutions[r];
        for (int pl = 0; pl < 3; ++pl) {
            const auto& plane = field.planes[r][pl];
            auto* gplane = grads ? &grads->planes[r][pl] : nullptr;
            std::size_t n_pairs = 2ull * res * (res - 1) * fdim;
            double scale = weight / (static_cast<double>(n_pairs) * n_planes);
            double acc = 0.0;
            for (int j = 0; j < res; ++j) {
                for (int i = 0; i < res; ++i) {
                    std::size_t base = (static_cast<std::size_t>(j) * res + i) * fdim;
                    if (i + 1 < res) {
                        std::size_t right = base + fdim;
                        for (int f = 0; f < fdim; ++f) {
                            double d = plane[base + f] - plane[right + f];
                            acc += d * d;
                            if (gplane) {
                                (*gplane)[base + f] += 2.0 * scale * d;
                                (*gplane)[right + f] -= 2.0 * scale * d;
                            }
                        }
                    }
                    if (j + 1 < res) {
                        std::size_t down = base + static_cast<std::size_t>(res) * fdim;
                        for (int f = 0; f < fdim; ++f) {
                            double d = plane[base + f] - plane[down + f];
                            acc += d * d;
                            if (gplane) {
                                (*gplane)[base + f] += 2.0 * scale * d;
                                (*gplane)[down + f] -= 2.0 * scale * d;
                            }
                        }
                    }
                }
            }
            total += acc / static_cast<double>(n_pairs);
        }
    }
    return weight * total / n_planes;
}

} // namespace splatlab
