#include "splatlab/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "splatlab/image_io.hpp"

namespace splatlab {

namespace fs = std::filesystem;
using nlohmann::json;

const DatasetView& Dataset::view(const std::string& id) const {
    for (const auto& v : views)
        if (v.id == id) return v;
    throw Error(ErrorKind::DataError, "no view with id " + id);
}

std::vector<const DatasetView*> Dataset::split(const std::vector<std::string>& ids) const {
    std::vector<const DatasetView*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&view(id));
    return out;
}

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

} // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    if (ds.views.empty()) throw Error(ErrorKind::DataError, "cannot save an empty dataset");
    fs::create_directories(fs::path(dir) / "images");
    bool any_mask = false, any_depth = false, any_light = false;
    for (const auto& v : ds.views) {
        any_mask |= v.mask.has_value();
        any_depth |= v.gt_depth.has_value();
        any_light |= v.light.has_value();
    }
    if (any_mask) fs::create_directories(fs::path(dir) / "masks");
    if (any_depth) fs::create_directories(fs::path(dir) / "depth");

    const Camera& c0 = ds.views.front().camera;
    json manifest;
    manifest["version"] = 1;
    manifest["intrinsics"] = {{"fx", c0.fx},     {"fy", c0.fy},         {"cx", c0.cx},
                              {"cy", c0.cy},     {"width", c0.width},   {"height", c0.height},
                              {"near", c0.near}, {"far", c0.far}};
    manifest["aabb"] = {{"min", vec3_json(ds.aabb_min)}, {"max", vec3_json(ds.aabb_max)}};
    json views = json::array();
    for (const auto& v : ds.views) {
        json jv;
        jv["id"] = v.id;
        jv["pose"] = {{"q", {v.camera.rotation.w, v.camera.rotation.x, v.camera.rotation.y,
                             v.camera.rotation.z}},
                      {"t", vec3_json(v.camera.translation)}};
        if (v.light)
            jv["light"] = {{"direction", vec3_json(v.light->direction)},
                           {"brightness", v.light->brightness}};
        views.push_back(jv);

        write_png((fs::path(dir) / "images" / (v.id + ".png")).string(), v.image);
        if (v.mask) write_png((fs::path(dir) / "masks" / (v.id + ".png")).string(), *v.mask);
        if (v.gt_depth)
            write_pfm((fs::path(dir) / "depth" / (v.id + ".pfm")).string(), *v.gt_depth);
    }
    manifest["views"] = views;
    manifest["split"] = {{"train", ds.train_ids}, {"test", ds.test_ids}};

    // Atomic-ish manifest write: the manifest lands last, after every image.
    std::string tmp = (fs::path(dir) / "manifest.json.tmp").string();
    {
        std::ofstream out(tmp);
        out << manifest.dump(2) << "\n";
    }
    fs::rename(tmp, fs::path(dir) / "manifest.json");
}

Dataset load_dataset(const std::string& dir) {
    fs::path manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path))
        throw Error(ErrorKind::MissingManifest, "no manifest.json in " + dir);
    json manifest;
    {
        std::ifstream in(manifest_path);
        in >> manifest;
    }

    Dataset ds;
    const json& intr = manifest.at("intrinsics");
    if (manifest.contains("aabb")) {
        ds.aabb_min = vec3_from(manifest["aabb"]["min"]);
        ds.aabb_max = vec3_from(manifest["aabb"]["max"]);
    }
    for (const auto& jv : manifest.at("views")) {
        DatasetView v;
        v.id = jv.at("id");
        Camera& c = v.camera;
        c.fx = intr.at("fx");
        c.fy = intr.at("fy");
        c.cx = intr.at("cx");
        c.cy = intr.at("cy");
        c.width = intr.at("width");
        c.height = intr.at("height");
        c.near = intr.at("near");
        c.far = intr.at("far");
        const json& q = jv.at("pose").at("q");
        c.rotation = Quat{q.at(0), q.at(1), q.at(2), q.at(3)};
        if (std::abs(c.rotation.norm() - 1.0) > 1e-3)
            throw Error(ErrorKind::BadQuaternion,
                        "view " + v.id + ": pose quaternion norm deviates beyond 1e-3");
        c.rotation = c.rotation.normalized();
        c.translation = vec3_from(jv.at("pose").at("t"));
        c.validate();

        if (jv.contains("light")) {
            ViewLight light;
            light.direction = vec3_from(jv["light"]["direction"]);
            light.brightness = jv["light"]["brightness"];
            v.light = light;
        }

        fs::path img = fs::path(dir) / "images" / (v.id + ".png");
        if (!fs::exists(img))
            throw Error(ErrorKind::DataError, "missing image file " + img.string());
        v.image = read_png(img.string());
        if (v.image.width != c.width || v.image.height != c.height || v.image.channels != 3)
            throw Error(ErrorKind::DimensionMismatch,
                        "image " + img.string() + " does not match intrinsics");

        fs::path mask = fs::path(dir) / "masks" / (v.id + ".png");
        if (fs::exists(mask)) {
            v.mask = read_png(mask.string());
            if (!v.mask->same_shape(ImageBuffer(c.width, c.height, 1)))
                throw Error(ErrorKind::DimensionMismatch, "mask shape mismatch for " + v.id);
            for (double& m : v.mask->values) m = m > 0.5 ? 1.0 : 0.0;
        }
        fs::path depth = fs::path(dir) / "depth" / (v.id + ".pfm");
        if (fs::exists(depth)) {
            v.gt_depth = read_pfm(depth.string());
            if (v.gt_depth->width != c.width || v.gt_depth->height != c.height)
                throw Error(ErrorKind::DimensionMismatch, "depth shape mismatch for " + v.id);
        }
        ds.views.push_back(std::move(v));
    }
    ds.train_ids = manifest.at("split").at("train").get<std::vector<std::string>>();
    ds.test_ids = manifest.at("split").at("test").get<std::vector<std::string>>();
    for (const auto& id : ds.train_ids)
        for (const auto& tid : ds.test_ids)
            if (id == tid)
                throw Error(ErrorKind::DataError, "train/test splits overlap at " + id);
    return ds;
}

namespace {

json dig(const json& root, const std::string& dotted) {
    json cur = root;
    std::size_t pos = 0;
    while (pos < dotted.size()) {
        std::size_t dot = dotted.find('.', pos);
        std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (!cur.is_object() || !cur.contains(key))
            throw Error(ErrorKind::UnmappedField, "field not found: " + dotted);
        cur = cur[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return cur;
}

std::string stem_of(const std::string& name) {
    return fs::path(name).stem().string();
}

} // namespace

Dataset convert_external(const std::string& manifest_path, const std::string& mapping_path,
                         int downscale_factor) {
    json mapping, labels;
    {
        std::ifstream in(mapping_path);
        if (!in) throw Error(ErrorKind::DataError, "cannot open mapping " + mapping_path);
        in >> mapping;
    }
    {
        std::ifstream in(manifest_path);
        if (!in) throw Error(ErrorKind::MissingManifest, "cannot open " + manifest_path);
        in >> labels;
    }

    if (!mapping.contains("quaternion_order") || !mapping.contains("pose_convention"))
        throw Error(ErrorKind::AmbiguousConvention,
                    "mapping must state quaternion_order and pose_convention explicitly");
    std::string qorder = mapping["quaternion_order"];
    std::string pconv = mapping["pose_convention"];
    if (qorder != "wxyz" && qorder != "xyzw")
        throw Error(ErrorKind::AmbiguousConvention, "quaternion_order must be wxyz or xyzw");
    if (pconv != "world_to_cam" && pconv != "cam_to_world")
        throw Error(ErrorKind::AmbiguousConvention,
                    "pose_convention must be world_to_cam or cam_to_world");

    for (const char* key : {"image_key", "quaternion_key", "translation_key"})
        if (!mapping.contains(key))
            throw Error(ErrorKind::UnmappedField, std::string("mapping lacks ") + key);

    json intr;
    if (mapping.contains("intrinsics"))
        intr = mapping["intrinsics"];
    else if (mapping.contains("intrinsics_key"))
        intr = dig(labels, mapping["intrinsics_key"]);
    else
        throw Error(ErrorKind::UnmappedField, "mapping lacks intrinsics or intrinsics_key");

    json entries;
    std::string views_key = mapping.value("views_key", "");
    entries = views_key.empty() ? labels : dig(labels, views_key);
    if (!entries.is_array())
        throw Error(ErrorKind::UnmappedField, "per-image entry list is not an array");

    fs::path base = fs::path(manifest_path).parent_path();
    fs::path images_dir = base / mapping.value("images_dir", std::string("images"));
    fs::path masks_dir = base / mapping.value("masks_dir", std::string("masks"));

    Dataset ds;
    if (mapping.contains("aabb")) {
        ds.aabb_min = vec3_from(mapping["aabb"]["min"]);
        ds.aabb_max = vec3_from(mapping["aabb"]["max"]);
    }

    for (const auto& entry : entries) {
        DatasetView v;
        json name = dig(entry, mapping["image_key"]);
        std::string file_name = name.get<std::string>();
        v.id = stem_of(file_name);

        Camera& c = v.camera;
        c.fx = intr.at("fx");
        c.fy = intr.at("fy");
        c.cx = intr.at("cx");
        c.cy = intr.at("cy");
        c.width = intr.at("width");
        c.height = intr.at("height");
        c.near = intr.value("near", 0.05);
        c.far = intr.value("far", 100.0);

        json jq = dig(entry, mapping["quaternion_key"]);
        json jt = dig(entry, mapping["translation_key"]);
        Quat q = qorder == "wxyz" ? Quat{jq.at(0), jq.at(1), jq.at(2), jq.at(3)}
                                  : Quat{jq.at(3), jq.at(0), jq.at(1), jq.at(2)};
        if (std::abs(q.norm() - 1.0) > 1e-3)
            throw Error(ErrorKind::BadQuaternion, "pose quaternion for " + v.id + " is not unit");
        q = q.normalized();
        Vec3 t = vec3_from(jt);
        if (pconv == "cam_to_world") {
            // p_world = R p_cam + t -> world_to_cam is the inverse transform.
            Quat qc{q.w, -q.x, -q.y, -q.z};
            c.rotation = qc;
            c.translation = -(qc.to_rotation() * t);
        } else {
            c.rotation = q;
            c.translation = t;
        }

        fs::path img = images_dir / file_name;
        if (!fs::exists(img) && !img.has_extension()) img += ".png";
        if (!fs::exists(img))
            throw Error(ErrorKind::DataError, "missing image file " + img.string());
        v.image = read_png(img.string());
        fs::path mask = masks_dir / (v.id + ".png");
        if (fs::exists(mask)) {
            v.mask = read_png(mask.string());
            for (double& m : v.mask->values) m = m > 0.5 ? 1.0 : 0.0;
        }
        fs::path depth = base / "depth" / (v.id + ".pfm");
        if (fs::exists(depth)) v.gt_depth = read_pfm(depth.string());

        if (downscale_factor > 1) {
            v.image = downscale(v.image, downscale_factor);
            if (v.mask) {
                *v.mask = downscale(*v.mask, downscale_factor);
                for (double& m : v.mask->values) m = m > 0.5 ? 1.0 : 0.0;
            }
            c.fx /= downscale_factor;
            c.fy /= downscale_factor;
            c.cx /= downscale_factor;
            c.cy /= downscale_factor;
            c.width /= downscale_factor;
            c.height /= downscale_factor;
        }
        if (v.image.width != c.width || v.image.height != c.height)
            throw Error(ErrorKind::DimensionMismatch,
                        "image size disagrees with intrinsics for " + v.id);
        c.validate();
        ds.views.push_back(std::move(v));
    }

    if (mapping.contains("train_ids") && mapping.contains("test_ids")) {
        ds.train_ids = mapping["train_ids"].get<std::vector<std::string>>();
        ds.test_ids = mapping["test_ids"].get<std::vector<std::string>>();
    } else if (mapping.contains("train_ids_key") && mapping.contains("test_ids_key")) {
        ds.train_ids = dig(labels, mapping["train_ids_key"]).get<std::vector<std::string>>();
        ds.test_ids = dig(labels, mapping["test_ids_key"]).get<std::vector<std::string>>();
    } else {
        double fraction = mapping.value("train_fraction", 0.8);
        std::size_t n_train = static_cast<std::size_t>(fraction * ds.views.size());
        for (std::size_t i = 0; i < ds.views.size(); ++i)
            (i < n_train ? ds.train_ids : ds.test_ids).push_back(ds.views[i].id);
    }
    return ds;
}

} // namespace splatlab
