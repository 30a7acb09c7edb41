#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "splatlab/dataset.hpp"
#include "splatlab/evaluate.hpp"
#include "splatlab/image_io.hpp"
#include "splatlab/threading.hpp"
#include "splatlab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace splatlab;

namespace {

ToySceneConfig toy_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("bad config JSON: ") + e.what());
    }
    ToySceneConfig cfg;
    cfg.n_train = j.value("n_train", cfg.n_train);
    cfg.n_test = j.value("n_test", cfg.n_test);
    cfg.image_size = j.value("image_size", cfg.image_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.cam_dist_min = j.value("cam_dist_min", cfg.cam_dist_min);
    cfg.cam_dist_max = j.value("cam_dist_max", cfg.cam_dist_max);
    cfg.focal = j.value("focal", cfg.focal);
    cfg.ambient = j.value("ambient", cfg.ambient);
    if (j.contains("illumination")) {
        std::string mode = j["illumination"];
        if (mode == "fixed")
            cfg.illumination = IlluminationMode::Fixed;
        else if (mode == "per_view_directional")
            cfg.illumination = IlluminationMode::PerViewDirectional;
        else
            throw Error(ErrorKind::ConfigError, "unknown illumination mode: " + mode);
    }
    cfg.light_jitter = j.value("light_jitter", cfg.light_jitter);
    if (j.contains("brightness_jitter")) {
        cfg.brightness_min = j["brightness_jitter"].at(0);
        cfg.brightness_max = j["brightness_jitter"].at(1);
    }
    if (j.contains("object")) {
        const json& o = j["object"];
        auto vec = [](const json& a) { return Vec3(a.at(0), a.at(1), a.at(2)); };
        if (o.contains("body_half")) cfg.body_half = vec(o["body_half"]);
        if (o.contains("panel_half")) cfg.panel_half = vec(o["panel_half"]);
        cfg.panel_gap = o.value("panel_gap", cfg.panel_gap);
        cfg.antenna_radius = o.value("antenna_radius", cfg.antenna_radius);
        cfg.antenna_length = o.value("antenna_length", cfg.antenna_length);
    }
    return cfg;
}

std::string model_tag(const Model& model) {
    std::string prefix = model.mode == TrainMode::Vanilla ? "V"
                         : model.mode == TrainMode::Hybrid ? "H"
                                                           : "W";
    switch (model.backend) {
    case Backend::Gaussian: return prefix + "GS";
    case Backend::Convex: return prefix + "CS";
    case Backend::KPlanes: return prefix + "KP";
    }
    return prefix + "GS";
}

std::string final_checkpoint(const std::string& run_dir) {
    return (fs::path(run_dir) / "checkpoints" / "final").string();
}

std::vector<MetricRecord> parse_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::DataError, "cannot open " + path);
    std::vector<MetricRecord> records;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 10)
            throw Error(ErrorKind::DataError, "bad report row in " + path + ": " + line);
        MetricRecord r;
        r.model_tag = fields[0];
        r.iou = std::stod(fields[1]);
        r.tpr = std::stod(fields[2]);
        r.fpr = std::stod(fields[3]);
        r.fdr = std::stod(fields[4]);
        r.psnr_db = std::stod(fields[5]);
        r.ssim_val = std::stod(fields[6]);
        if (!fields[8].empty()) r.n_primitives = std::stoll(fields[8]);
        r.n_parameters = std::stoll(fields[9]);
        records.push_back(std::move(r));
    }
    return records;
}

void dump_view(const Model& model, const DatasetView& view, const AppearanceEmbedding* emb,
               const std::string& out_dir, const EvalConfig& eval_cfg) {
    fs::create_directories(out_dir);
    RenderOutput out = model.render(view.camera, emb);
    write_png((fs::path(out_dir) / (view.id + "_color.png")).string(), out.color);
    write_pfm((fs::path(out_dir) / (view.id + "_depth.pfm")).string(), out.depth);

    // Min-max normalized preview of the depth channel.
    ImageBuffer preview = out.depth;
    double lo = 1e300, hi = -1e300;
    for (double v : preview.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo)
        for (double& v : preview.values) v = (v - lo) / (hi - lo);
    write_png((fs::path(out_dir) / (view.id + "_depth.png")).string(), preview);
    write_png((fs::path(out_dir) / (view.id + "_mask.png")).string(),
              depth_to_mask(out.depth, out.alpha, eval_cfg));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"splatlab: gaussian/convex splatting and tri-plane reconstruction lab"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate the synthetic toy dataset");
    std::string synth_config, synth_out;
    synth->add_option("--config", synth_config, "Toy scene JSON config")->required();
    synth->add_option("--out", synth_out, "Output dataset directory")->required();

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_backend, train_mode = "", train_data, train_config_path, train_out;
    int train_threads = 0;
    train->add_option("--backend", train_backend, "gs | cs | kplanes")->required();
    train->add_option("--mode", train_mode, "vanilla | wild | hybrid");
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--config", train_config_path, "Train config JSON")->required();
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_option("--threads", train_threads, "Worker threads (0 = all cores)");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a trained run");
    std::string eval_run, eval_data, eval_embed = "random", eval_out;
    uint64_t eval_seed = 0;
    bool eval_dump = false;
    eval->add_option("--run", eval_run, "Run directory")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--embed", eval_embed, "random | tuned");
    eval->add_option("--out", eval_out, "Report directory (default RUNDIR/report)");
    eval->add_option("--seed", eval_seed, "Random-embedding seed");
    eval->add_flag("--dump-images", eval_dump, "Write per-view color/depth/mask dumps");

    // render
    auto* render = app.add_subcommand("render", "Render one view of a trained run");
    std::string render_run, render_data, render_view, render_out, render_embed = "none";
    render->add_option("--run", render_run, "Run directory")->required();
    render->add_option("--data", render_data, "Dataset directory")->required();
    render->add_option("--view", render_view, "View id")->required();
    render->add_option("--out", render_out, "Output directory")->required();
    render->add_option("--embed", render_embed, "none | random | tuned");

    // compare
    auto* compare = app.add_subcommand("compare", "Merge evaluated runs into one report");
    std::vector<std::string> compare_runs;
    std::string compare_out;
    compare->add_option("--runs", compare_runs, "Run directories (evaluated)")->required();
    compare->add_option("--out", compare_out, "Output report.md path")->required();

    // convert
    auto* convert = app.add_subcommand("convert", "Convert an external pose-label dataset");
    std::string convert_manifest, convert_mapping, convert_out;
    int convert_downscale = 1;
    convert->add_option("--manifest", convert_manifest, "External pose-label JSON")->required();
    convert->add_option("--mapping", convert_mapping, "Field-mapping JSON")->required();
    convert->add_option("--out", convert_out, "Output dataset directory")->required();
    convert->add_option("--downscale", convert_downscale, "Integer downscale factor");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            Dataset ds = generate_toy_scene(toy_config_from_json_file(synth_config));
            save_dataset(ds, synth_out);
            std::cout << "wrote " << ds.views.size() << " views to " << synth_out << "\n";
        } else if (*train) {
            TrainConfig cfg = train_config_from_json_file(train_config_path);
            if (!train_mode.empty()) cfg.mode = mode_from_string(train_mode);
            if (train_threads > 0) cfg.threads = train_threads;
            Backend backend = backend_from_string(train_backend);
            Dataset ds = load_dataset(train_data);
            fs::create_directories(train_out);
            {
                json run_meta = json::parse(train_config_to_json(cfg));
                run_meta["backend"] = to_string(backend);
                run_meta["data"] = train_data;
                std::ofstream out(fs::path(train_out) / "config.json");
                out << run_meta.dump(2) << "\n";
            }
            auto [model, log] = run_schedule(backend, ds, cfg, train_out);
            std::cout << "trained " << model_tag(model) << ": "
                      << log.rows.back().n_parameters << " parameters, final held-out PSNR "
                      << log.rows.back().psnr << " dB\n";
        } else if (*eval) {
            Model model = load_model(final_checkpoint(eval_run));
            Dataset ds = load_dataset(eval_data);
            EmbedPolicy policy =
                model.has_appearance() ? embed_policy_from_string(eval_embed) : EmbedPolicy::None;
            EvalConfig cfg;
            cfg.seed = eval_seed;
            MetricRecord rec = evaluate_model(model, ds, policy, cfg, model_tag(model));
            std::string out_dir = eval_out.empty() ? (fs::path(eval_run) / "report").string() : eval_out;
            emit_report({rec}, out_dir);
            if (eval_dump) {
                for (const auto& id : ds.test_ids) {
                    const DatasetView& v = ds.view(id);
                    AppearanceEmbedding e;
                    const AppearanceEmbedding* pe = nullptr;
                    if (policy == EmbedPolicy::Random) {
                        e = embedding_for_eval_random(model.appearance, cfg.seed);
                        pe = &e;
                    } else if (policy == EmbedPolicy::Tuned) {
                        e = tune_embedding_for_view(model, v.camera, v.image, {}, cfg.seed);
                        pe = &e;
                    }
                    dump_view(model, v, pe, (fs::path(out_dir) / "images").string(), cfg);
                }
            }
            std::cout << report_csv({rec});
        } else if (*render) {
            Model model = load_model(final_checkpoint(render_run));
            Dataset ds = load_dataset(render_data);
            const DatasetView& v = ds.view(render_view);
            EmbedPolicy policy = embed_policy_from_string(render_embed);
            AppearanceEmbedding e;
            const AppearanceEmbedding* pe = nullptr;
            if (policy == EmbedPolicy::Random) {
                e = embedding_for_eval_random(model.appearance, 0);
                pe = &e;
            } else if (policy == EmbedPolicy::Tuned) {
                e = tune_embedding_for_view(model, v.camera, v.image);
                pe = &e;
            }
            dump_view(model, v, pe, render_out, EvalConfig{});
            std::cout << "rendered " << render_view << " to " << render_out << "\n";
        } else if (*compare) {
            std::vector<MetricRecord> records;
            for (const auto& run : compare_runs) {
                fs::path csv = fs::path(run) / "report" / "report.csv";
                if (!fs::exists(csv)) csv = run; // allow direct csv paths
                auto recs = parse_report_csv(csv.string());
                records.insert(records.end(), recs.begin(), recs.end());
            }
            std::ofstream out(compare_out);
            if (!out) throw Error(ErrorKind::DataError, "cannot write " + compare_out);
            out << report_markdown(records);
            fs::path csv_out = fs::path(compare_out).replace_extension(".csv");
            std::ofstream csv(csv_out);
            csv << report_csv(records);
            std::cout << "wrote " << compare_out << " and " << csv_out.string() << "\n";
        } else if (*convert) {
            Dataset ds = convert_external(convert_manifest, convert_mapping, convert_downscale);
            save_dataset(ds, convert_out);
            std::cout << "converted " << ds.views.size() << " views to " << convert_out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
