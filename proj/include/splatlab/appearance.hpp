#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "splatlab/camera.hpp"
#include "splatlab/rng.hpp"

namespace splatlab {

// Per-image latent that modulates predicted color. Never touches geometry.
struct AppearanceEmbedding {
    std::vector<double> v;

    int dim() const { return static_cast<int>(v.size()); }
    // Invariant: ||e|| <= 100. Applied after every optimizer update.
    void clamp_norm(double max_norm = 100.0);
};

// Small MLP mapping (base_color, per-primitive code, image embedding) to an
// affine color modulation: color = clamp(base * (1 + gain) + bias, 0, 1).
// The output layer is zero-initialized, so the head is exactly the identity
// until training moves it.
struct AppearanceHead {
    int d_code = 0;   // per-primitive code dim (0 for K-Planes)
    int d_img = 32;   // image embedding dim
    int hidden = 32;

    std::vector<double> w1; // hidden x (3 + d_code + d_img), row-major
    std::vector<double> b1; // hidden
    std::vector<double> w2; // 6 x hidden
    std::vector<double> b2; // 6

    int input_dim() const { return 3 + d_code + d_img; }
    int64_t parameter_count() const {
        return static_cast<int64_t>(w1.size() + b1.size() + w2.size() + b2.size());
    }

    static AppearanceHead init(int d_code, int d_img, int hidden, Rng& rng);
};

struct AppearanceHeadGrad {
    std::vector<double> w1, b1, w2, b2;

    void resize_like(const AppearanceHead& head);
    void add(const AppearanceHeadGrad& other);
};

// code/embedding may be nullptr when the corresponding dim is zero.
Vec3 apply_appearance(const AppearanceHead& head, const Vec3& base_color,
                      const double* code, const double* embedding);

// Accumulates gradients for every input of apply_appearance.
void apply_appearance_backward(const AppearanceHead& head, const Vec3& base_color,
                               const double* code, const double* embedding,
                               const Vec3& grad_color,
                               Vec3& grad_base_color, double* grad_code,
                               double* grad_embedding, AppearanceHeadGrad& grad_head);

// One embedding per training image plus the shared color head.
struct AppearanceTable {
    std::map<std::string, AppearanceEmbedding> embeddings;
    AppearanceHead head;

    bool empty() const { return embeddings.empty(); }
    AppearanceEmbedding& at(const std::string& image_id);
    const AppearanceEmbedding& at(const std::string& image_id) const;

    // Empirical mean and per-dimension standard deviation of the trained
    // embeddings; basis of the Random evaluation policy.
    void moments(std::vector<double>& mean, std::vector<double>& stddev) const;
};

// Passed into the rasterizers; nullptr context = vanilla rendering.
struct AppearanceContext {
    const AppearanceHead* head = nullptr;
    const double* embedding = nullptr;
    int d_img = 0;
};

// Random evaluation policy: a draw from the training embeddings' empirical
// mean/diagonal covariance. Deterministic for a fixed seed.
AppearanceEmbedding embedding_for_eval_random(const AppearanceTable& table, uint64_t seed);

// Objective returns (loss, dloss/dembedding) for a candidate embedding.
using EmbeddingObjective =
    std::function<std::pair<double, std::vector<double>>(const AppearanceEmbedding&)>;

// Gradient descent on the embedding alone, every scene parameter frozen.
// Returns the best iterate seen, so the final loss never exceeds the initial.
AppearanceEmbedding tune_embedding(const EmbeddingObjective& objective,
                                   const AppearanceEmbedding& init,
                                   int steps = 100, double lr = 1e-2);

} // namespace splatlab
