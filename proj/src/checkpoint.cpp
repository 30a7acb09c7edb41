#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "splatlab/model.hpp"

namespace splatlab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr char kMagic[4] = {'S', 'P', 'L', 'B'};
constexpr uint32_t kVersion = 1;

// Container: magic, u32 version, u64 header length, JSON header, then the
// float64 blobs named in header["blobs"], little-endian, in order.
struct BlobFile {
    json header;
    std::vector<std::pair<std::string, std::vector<double>>> blobs;

    void add(const std::string& name, std::vector<double> data) {
        blobs.emplace_back(name, std::move(data));
    }

    const std::vector<double>& get(const std::string& name) const {
        for (const auto& [n, d] : blobs)
            if (n == name) return d;
        throw Error(ErrorKind::CorruptCheckpoint, "checkpoint blob missing: " + name);
    }

    void save(const std::string& path) {
        json blob_list = json::array();
        for (const auto& [name, data] : blobs)
            blob_list.push_back({{"name", name}, {"count", data.size()}});
        header["blobs"] = blob_list;
        std::string htext = header.dump();

        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorKind::DataError, "cannot write " + path);
        out.write(kMagic, 4);
        uint32_t version = kVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        uint64_t hlen = htext.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
        for (const auto& [name, data] : blobs)
            out.write(reinterpret_cast<const char*>(data.data()),
                      static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!out) throw Error(ErrorKind::DataError, "short write: " + path);
    }

    static BlobFile load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorKind::CorruptCheckpoint, "cannot open checkpoint " + path);
        char magic[4];
        uint32_t version = 0;
        uint64_t hlen = 0;
        in.read(magic, 4);
        in.read(reinterpret_cast<char*>(&version), sizeof(version));
        in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
        if (!in || std::memcmp(magic, kMagic, 4) != 0 || version != kVersion || hlen > (1ull << 32))
            throw Error(ErrorKind::CorruptCheckpoint, "bad checkpoint header: " + path);
        std::string htext(hlen, '\0');
        in.read(htext.data(), static_cast<std::streamsize>(hlen));
        BlobFile f;
        f.header = json::parse(htext, nullptr, false);
        if (f.header.is_discarded() || !f.header.contains("blobs"))
            throw Error(ErrorKind::CorruptCheckpoint, "bad checkpoint metadata: " + path);
        for (const auto& b : f.header["blobs"]) {
            std::vector<double> data(b.at("count").get<std::size_t>());
            in.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(double)));
            if (!in) throw Error(ErrorKind::CorruptCheckpoint, "truncated checkpoint: " + path);
            f.blobs.emplace_back(b.at("name").get<std::string>(), std::move(data));
        }
        return f;
    }
};

// Field order is part of the format: keep in sync with the README.
// gaussian: position(3) rotation_wxyz(4) log_scale(3) opacity_logit color(3) code(d)
std::vector<double> pack_gaussians(const GaussianScene& scene, int d_code) {
    std::vector<double> out;
    out.reserve(scene.size() * (14 + d_code));
    for (const auto& g : scene.primitives) {
        for (int a = 0; a < 3; ++a) out.push_back(g.position[a]);
        out.push_back(g.rotation.w);
        out.push_back(g.rotation.x);
        out.push_back(g.rotation.y);
        out.push_back(g.rotation.z);
        for (int a = 0; a < 3; ++a) out.push_back(g.log_scale[a]);
        out.push_back(g.opacity_logit);
        for (int a = 0; a < 3; ++a) out.push_back(g.base_color[a]);
        for (int a = 0; a < d_code; ++a)
            out.push_back(a < static_cast<int>(g.appearance_code.size()) ? g.appearance_code[a]
                                                                         : 0.0);
    }
    return out;
}

GaussianScene unpack_gaussians(const std::vector<double>& data, std::size_t n, int d_code,
                               double extent, int sh_degree) {
    GaussianScene scene;
    scene.scene_extent = extent;
    scene.sh_degree = sh_degree;
    std::size_t stride = 14 + d_code;
    if (data.size() != n * stride)
        throw Error(ErrorKind::CorruptCheckpoint, "gaussian blob size mismatch");
    scene.primitives.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &data[i * stride];
        auto& g = scene.primitives[i];
        g.position = Vec3(p[0], p[1], p[2]);
        g.rotation = Quat{p[3], p[4], p[5], p[6]};
        g.log_scale = Vec3(p[7], p[8], p[9]);
        g.opacity_logit = p[10];
        g.base_color = Vec3(p[11], p[12], p[13]);
        if (d_code > 0) g.appearance_code.assign(p + 14, p + 14 + d_code);
    }
    return scene;
}

// convex: points(3K) delta sigma opacity_logit color(3) code(d)
std::vector<double> pack_convexes(const ConvexScene& scene, int d_code) {
    std::vector<double> out;
    out.reserve(scene.size() * (3 * scene.k + 6 + d_code));
    for (const auto& c : scene.primitives) {
        for (const auto& p : c.points)
            for (int a = 0; a < 3; ++a) out.push_back(p[a]);
        out.push_back(c.smoothness_delta);
        out.push_back(c.sharpness_sigma);
        out.push_back(c.opacity_logit);
        for (int a = 0; a < 3; ++a) out.push_back(c.base_color[a]);
        for (int a = 0; a < d_code; ++a)
            out.push_back(a < static_cast<int>(c.appearance_code.size()) ? c.appearance_code[a]
                                                                         : 0.0);
    }
    return out;
}

ConvexScene unpack_convexes(const std::vector<double>& data, std::size_t n, int k, int d_code,
                            double extent) {
    ConvexScene scene;
    scene.scene_extent = extent;
    scene.k = k;
    std::size_t stride = 3 * k + 6 + d_code;
    if (data.size() != n * stride)
        throw Error(ErrorKind::CorruptCheckpoint, "convex blob size mismatch");
    scene.primitives.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &data[i * stride];
        auto& c = scene.primitives[i];
        c.points.resize(k);
        for (int j = 0; j < k; ++j) c.points[j] = Vec3(p[3 * j], p[3 * j + 1], p[3 * j + 2]);
        p += 3 * k;
        c.smoothness_delta = p[0];
        c.sharpness_sigma = p[1];
        c.opacity_logit = p[2];
        c.base_color = Vec3(p[3], p[4], p[5]);
        if (d_code > 0) c.appearance_code.assign(p + 6, p + 6 + d_code);
    }
    return scene;
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

int scene_d_code(const Model& m) {
    if (!m.has_appearance()) return 0;
    return m.appearance.head.d_code;
}

} // namespace

void save_model(const Model& model, const std::string& prefix) {
    json meta;
    meta["version"] = 1;
    meta["backend"] = to_string(model.backend);
    meta["mode"] = to_string(model.mode);
    meta["wild_active"] = model.wild_active;
    meta["raster"] = {{"cov_floor", model.raster.cov_floor},
                      {"alpha_clamp", model.raster.alpha_clamp},
                      {"transmittance_min", model.raster.transmittance_min},
                      {"alpha_bg_eps", model.raster.alpha_bg_eps},
                      {"background", vec3_json(model.raster.background)},
                      {"tile_size", model.raster.tile_size}};
    meta["sampling"] = {{"n_samples", model.sampling.n_samples},
                        {"near", model.sampling.near},
                        {"far", model.sampling.far},
                        {"background", vec3_json(model.sampling.background)},
                        {"alpha_bg_eps", model.sampling.alpha_bg_eps}};
    {
        std::ofstream out(prefix + ".model.json");
        if (!out) throw Error(ErrorKind::DataError, "cannot write " + prefix + ".model.json");
        out << meta.dump(2) << "\n";
    }

    BlobFile scene;
    int d_code = scene_d_code(model);
    switch (model.backend) {
    case Backend::Gaussian:
        scene.header = {{"kind", "gaussian_scene"},
                        {"n", model.gaussians.size()},
                        {"d_code", d_code},
                        {"sh_degree", model.gaussians.sh_degree},
                        {"scene_extent", model.gaussians.scene_extent}};
        scene.add("primitives", pack_gaussians(model.gaussians, d_code));
        break;
    case Backend::Convex:
        scene.header = {{"kind", "convex_scene"},
                        {"n", model.convexes.size()},
                        {"k", model.convexes.k},
                        {"d_code", d_code},
                        {"scene_extent", model.convexes.scene_extent}};
        scene.add("primitives", pack_convexes(model.convexes, d_code));
        break;
    case Backend::KPlanes: {
        const auto& f = model.field;
        scene.header = {{"kind", "kplanes_field"},
                        {"resolutions", f.cfg.resolutions},
                        {"features", f.cfg.features},
                        {"hidden", f.cfg.hidden},
                        {"d_img", f.cfg.d_img},
                        {"multiply_planes", f.cfg.multiply_planes},
                        {"aabb_min", vec3_json(f.aabb_min)},
                        {"aabb_max", vec3_json(f.aabb_max)}};
        for (std::size_t r = 0; r < f.planes.size(); ++r)
            for (int p = 0; p < 3; ++p)
                scene.add("plane_" + std::to_string(r) + "_" + std::to_string(p), f.planes[r][p]);
        scene.add("w1", f.w1);
        scene.add("b1", f.b1);
        scene.add("w2", f.w2);
        scene.add("b2", f.b2);
        scene.add("w_sigma", f.w_sigma);
        scene.add("b_sigma", f.b_sigma);
        scene.add("w_color", f.w_color);
        scene.add("b_color", f.b_color);
        scene.add("w_emb", f.w_emb);
        break;
    }
    }
    scene.save(prefix + ".scene.bin");

    if (model.has_appearance()) {
        BlobFile app;
        std::vector<std::string> ids;
        std::vector<double> emb;
        for (const auto& [id, e] : model.appearance.embeddings) {
            ids.push_back(id);
            emb.insert(emb.end(), e.v.begin(), e.v.end());
        }
        app.header = {{"kind", "appearance"},
                      {"d_code", model.appearance.head.d_code},
                      {"d_img", model.appearance.head.d_img},
                      {"hidden", model.appearance.head.hidden},
                      {"image_ids", ids}};
        app.add("w1", model.appearance.head.w1);
        app.add("b1", model.appearance.head.b1);
        app.add("w2", model.appearance.head.w2);
        app.add("b2", model.appearance.head.b2);
        app.add("embeddings", emb);
        app.save(prefix + ".appearance.bin");
    }
}

Model load_model(const std::string& prefix) {
    json meta;
    {
        std::ifstream in(prefix + ".model.json");
        if (!in)
            throw Error(ErrorKind::CorruptCheckpoint, "missing checkpoint " + prefix + ".model.json");
        in >> meta;
    }
    Model model;
    model.backend = backend_from_string(meta.at("backend"));
    model.mode = mode_from_string(meta.at("mode"));
    model.wild_active = meta.value("wild_active", model.mode == TrainMode::Wild);
    const json& r = meta.at("raster");
    model.raster.cov_floor = r.at("cov_floor");
    model.raster.alpha_clamp = r.at("alpha_clamp");
    model.raster.transmittance_min = r.at("transmittance_min");
    model.raster.alpha_bg_eps = r.at("alpha_bg_eps");
    model.raster.background = vec3_from(r.at("background"));
    model.raster.tile_size = r.at("tile_size");
    const json& s = meta.at("sampling");
    model.sampling.n_samples = s.at("n_samples");
    model.sampling.near = s.at("near");
    model.sampling.far = s.at("far");
    model.sampling.background = vec3_from(s.at("background"));
    model.sampling.alpha_bg_eps = s.at("alpha_bg_eps");

    BlobFile scene = BlobFile::load(prefix + ".scene.bin");
    std::string kind = scene.header.at("kind");
    if (kind == "gaussian_scene") {
        model.gaussians =
            unpack_gaussians(scene.get("primitives"), scene.header.at("n"),
                             scene.header.at("d_code"), scene.header.at("scene_extent"),
                             scene.header.at("sh_degree"));
    } else if (kind == "convex_scene") {
        model.convexes =
            unpack_convexes(scene.get("primitives"), scene.header.at("n"), scene.header.at("k"),
                            scene.header.at("d_code"), scene.header.at("scene_extent"));
    } else if (kind == "kplanes_field") {
        KPlanesField& f = model.field;
        f.cfg.resolutions = scene.header.at("resolutions").get<std::vector<int>>();
        f.cfg.features = scene.header.at("features");
        f.cfg.hidden = scene.header.at("hidden");
        f.cfg.d_img = scene.header.at("d_img");
        f.cfg.multiply_planes = scene.header.at("multiply_planes");
        f.aabb_min = vec3_from(scene.header.at("aabb_min"));
        f.aabb_max = vec3_from(scene.header.at("aabb_max"));
        f.planes.resize(f.cfg.resolutions.size());
        for (std::size_t lvl = 0; lvl < f.planes.size(); ++lvl)
            for (int p = 0; p < 3; ++p)
                f.planes[lvl][p] =
                    scene.get("plane_" + std::to_string(lvl) + "_" + std::to_string(p));
        f.w1 = scene.get("w1");
        f.b1 = scene.get("b1");
        f.w2 = scene.get("w2");
        f.b2 = scene.get("b2");
        f.w_sigma = scene.get("w_sigma");
        f.b_sigma = scene.get("b_sigma");
        f.w_color = scene.get("w_color");
        f.b_color = scene.get("b_color");
        f.w_emb = scene.get("w_emb");
    } else {
        throw Error(ErrorKind::CorruptCheckpoint, "unknown scene kind " + kind);
    }

    if (model.has_appearance()) {
        BlobFile app = BlobFile::load(prefix + ".appearance.bin");
        AppearanceHead& head = model.appearance.head;
        head.d_code = app.header.at("d_code");
        head.d_img = app.header.at("d_img");
        head.hidden = app.header.at("hidden");
        head.w1 = app.get("w1");
        head.b1 = app.get("b1");
        head.w2 = app.get("w2");
        head.b2 = app.get("b2");
        auto ids = app.header.at("image_ids").get<std::vector<std::string>>();
        const auto& emb = app.get("embeddings");
        int d = head.d_img;
        if (emb.size() != ids.size() * static_cast<std::size_t>(d))
            throw Error(ErrorKind::CorruptCheckpoint, "embedding blob size mismatch");
        for (std::size_t i = 0; i < ids.size(); ++i) {
            AppearanceEmbedding e;
            e.v.assign(emb.begin() + i * d, emb.begin() + (i + 1) * d);
            model.appearance.embeddings[ids[i]] = std::move(e);
        }
    }
    return model;
}

} // namespace splatlab
