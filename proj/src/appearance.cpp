#include "splatlab/appearance.hpp"

#include <algorithm>
#include <cmath>

#include "splatlab/common.hpp"

namespace splatlab {

namespace {

inline double silu(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

} // namespace

void AppearanceEmbedding::clamp_norm(double max_norm) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    double n = std::sqrt(sq);
    if (n > max_norm) {
        double s = max_norm / n;
        for (double& x : v) x *= s;
    }
}

AppearanceHead AppearanceHead::init(int d_code, int d_img, int hidden, Rng& rng) {
    AppearanceHead head;
    head.d_code = d_code;
    head.d_img = d_img;
    head.hidden = hidden;
    int in = head.input_dim();
    head.w1.resize(static_cast<std::size_t>(hidden) * in);
    head.b1.assign(hidden, 0.0);
    head.w2.assign(6 * static_cast<std::size_t>(hidden), 0.0);
    head.b2.assign(6, 0.0);
    double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : head.w1) w = rng.uniform(-scale, scale);
    return head;
}

void AppearanceHeadGrad::resize_like(const AppearanceHead& head) {
    w1.assign(head.w1.size(), 0.0);
    b1.assign(head.b1.size(), 0.0);
    w2.assign(head.w2.size(), 0.0);
    b2.assign(head.b2.size(), 0.0);
}

void AppearanceHeadGrad::add(const AppearanceHeadGrad& other) {
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] += other.w1[i];
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += other.b1[i];
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += other.w2[i];
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] += other.b2[i];
}

namespace {

// Shared forward pass; fills the input vector, pre-activations and hidden
// activations so the backward pass can reuse them.
void head_forward(const AppearanceHead& head, const Vec3& base_color,
                  const double* code, const double* embedding,
                  std::vector<double>& x, std::vector<double>& z,
                  std::vector<double>& h, double out[6]) {
    int in = head.input_dim();
    x.resize(in);
    x[0] = base_color.x();
    x[1] = base_color.y();
    x[2] = base_color.z();
    for (int i = 0; i < head.d_code; ++i) {
        if (!code) throw Error(ErrorKind::DimensionMismatch, "appearance code missing");
        x[3 + i] = code[i];
    }
    for (int i = 0; i < head.d_img; ++i) {
        if (!embedding) throw Error(ErrorKind::DimensionMismatch, "appearance embedding missing");
        x[3 + head.d_code + i] = embedding[i];
    }
    z.resize(head.hidden);
    h.resize(head.hidden);
    for (int j = 0; j < head.hidden; ++j) {
        double acc = head.b1[j];
        const double* row = &head.w1[static_cast<std::size_t>(j) * in];
        for (int i = 0; i < in; ++i) acc += row[i] * x[i];
        z[j] = acc;
        h[j] = silu(acc);
    }
    for (int k = 0; k < 6; ++k) {
        double acc = head.b2[k];
        const double* row = &head.w2[static_cast<std::size_t>(k) * head.hidden];
        for (int j = 0; j < head.hidden; ++j) acc += row[j] * h[j];
        out[k] = acc;
    }
}

} // namespace

Vec3 apply_appearance(const AppearanceHead& head, const Vec3& base_color,
                      const double* code, const double* embedding) {
    std::vector<double> x, z, h;
    double out[6];
    head_forward(head, base_color, code, embedding, x, z, h, out);
    Vec3 color;
    for (int c = 0; c < 3; ++c) {
        double pre = base_color[c] * (1.0 + out[c]) + out[3 + c];
        color[c] = std::clamp(pre, 0.0, 1.0);
    }
    return color;
}

void apply_appearance_backward(const AppearanceHead& head, const Vec3& base_color,
                               const double* code, const double* embedding,
                               const Vec3& grad_color,
                               Vec3& grad_base_color, double* grad_code,
                               double* grad_embedding, AppearanceHeadGrad& grad_head) {
    std::vector<double> x, z, h;
    double out[6];
    head_forward(head, base_color, code, embedding, x, z, h, out);

    int in = head.input_dim();
    double dout[6] = {0, 0, 0, 0, 0, 0};
    for (int c = 0; c < 3; ++c) {
        double pre = base_color[c] * (1.0 + out[c]) + out[3 + c];
        double dpre = (pre >= 0.0 && pre <= 1.0) ? grad_color[c] : 0.0;
        dout[c] = dpre * base_color[c];
        dout[3 + c] = dpre;
        grad_base_color[c] += dpre * (1.0 + out[c]);
    }

    std::vector<double> dh(head.hidden, 0.0);
    for (int k = 0; k < 6; ++k) {
        if (dout[k] == 0.0) continue;
        double* gw2 = &grad_head.w2[static_cast<std::size_t>(k) * head.hidden];
        const double* w2 = &head.w2[static_cast<std::size_t>(k) * head.hidden];
        for (int j = 0; j < head.hidden; ++j) {
            gw2[j] += dout[k] * h[j];
            dh[j] += dout[k] * w2[j];
        }
        grad_head.b2[k] += dout[k];
    }

    for (int j = 0; j < head.hidden; ++j) {
        double dz = dh[j] * silu_grad(z[j]);
        if (dz == 0.0) continue;
        grad_head.b1[j] += dz;
        double* gw1 = &grad_head.w1[static_cast<std::size_t>(j) * in];
        const double* w1 = &head.w1[static_cast<std::size_t>(j) * in];
        for (int i = 0; i < in; ++i) gw1[i] += dz * x[i];
        grad_base_color[0] += dz * w1[0];
        grad_base_color[1] += dz * w1[1];
        grad_base_color[2] += dz * w1[2];
        if (grad_code)
            for (int i = 0; i < head.d_code; ++i) grad_code[i] += dz * w1[3 + i];
        if (grad_embedding)
            for (int i = 0; i < head.d_img; ++i)
                grad_embedding[i] += dz * w1[3 + head.d_code + i];
    }
}

AppearanceEmbedding& AppearanceTable::at(const std::string& image_id) {
    auto it = embeddings.find(image_id);
    if (it == embeddings.end())
        throw Error(ErrorKind::DataError, "no appearance embedding for image " + image_id);
    return it->second;
}

const AppearanceEmbedding& AppearanceTable::at(const std::string& image_id) const {
    auto it = embeddings.find(image_id);
    if (it == embeddings.end())
        throw Error(ErrorKind::DataError, "no appearance embedding for image " + image_id);
    return it->second;
}

void AppearanceTable::moments(std::vector<double>& mean, std::vector<double>& stddev) const {
    if (embeddings.empty())
        throw Error(ErrorKind::VanillaModel, "appearance table is empty");
    int d = embeddings.begin()->second.dim();
    mean.assign(d, 0.0);
    stddev.assign(d, 0.0);
    for (const auto& [id, e] : embeddings)
        for (int i = 0; i < d; ++i) mean[i] += e.v[i];
    double n = static_cast<double>(embeddings.size());
    for (int i = 0; i < d; ++i) mean[i] /= n;
    for (const auto& [id, e] : embeddings)
        for (int i = 0; i < d; ++i) {
            double dx = e.v[i] - mean[i];
            stddev[i] += dx * dx;
        }
    for (int i = 0; i < d; ++i) stddev[i] = std::sqrt(stddev[i] / n);
}

AppearanceEmbedding embedding_for_eval_random(const AppearanceTable& table, uint64_t seed) {
    std::vector<double> mean, stddev;
    table.moments(mean, stddev);
    Rng rng = Rng(seed).fork("eval-embedding");
    AppearanceEmbedding e;
    e.v.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i)
        e.v[i] = mean[i] + stddev[i] * rng.normal();
    e.clamp_norm();
    return e;
}

AppearanceEmbedding tune_embedding(const EmbeddingObjective& objective,
                                   const AppearanceEmbedding& init,
                                   int steps, double lr) {
    AppearanceEmbedding e = init;
    int d = e.dim();
    std::vector<double> m(d, 0.0), v(d, 0.0);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    auto [best_loss, grad0] = objective(e);
    AppearanceEmbedding best = e;
    std::vector<double> grad = std::move(grad0);

    for (int t = 1; t <= steps; ++t) {
        double bc1 = 1.0 - std::pow(beta1, t);
        double bc2 = 1.0 - std::pow(beta2, t);
        for (int i = 0; i < d; ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            e.v[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
        e.clamp_norm();
        auto [loss, g] = objective(e);
        grad = std::move(g);
        if (loss < best_loss) {
            best_loss = loss;
            best = e;
        }
    }
    return best;
}

} // namespace splatlab
