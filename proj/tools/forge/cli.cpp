#include "forge.hpp"

#include "commands.hpp"

#include "cvis/error.hpp"

#include "CLI11.hpp"

#include <chrono>

namespace cvis::forge {

namespace {

std::string abs_arg(const std::string& p) { return absolute_path(fs::path(p)); }

// Config from --config (if any) with the shared flags laid over it.
struct ConfigFlags {
    std::string path;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;

    void add(CLI::App* app) {
        app->add_option("--config", path, "Pipeline config (JSON, \"version\": 1)");
        seed_opt = app->add_option("--seed", seed, "Overrides the config seed");
    }

    PipelineConfig load() const {
        PipelineConfig c = path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
        if (seed_opt->count() > 0) c.seed = seed;
        return c;
    }

    fs::path base_dir() const { return path.empty() ? fs::current_path() : fs::absolute(path).parent_path(); }
};

struct Cli {
    CLI::App app{"cvis-forge: synthetic vehicle pose datasets, pose estimation and evaluation", "cvis-forge"};
    std::function<json()> resolve;  // set by the chosen subcommand's callback
    std::ostream* out = nullptr;
    std::function<void()> direct;   // commands that do not go through a manifest

    // Flag storage; lives as long as the parse.
    // Each subcommand has its own slots: CLI11 writes default_val() into the
    // variable when the option is declared, so shared storage would leak defaults.
    std::uint64_t gt_seed = 0, gb_seed = 0, cap_seed = 0, tr_seed = 0;
    int gb_width = 0, gb_height = 0, cap_width = 0, cap_height = 0, syn_width = 0, syn_height = 0, bench_width = 0,
        bench_height = 0;
    int cap_res = 96, bake_res = 96, tr_res = 96, syn_vehicles = 0, bench_vehicles = 0;
    int k = 8, steps = 300, batch = 4, train_atlases = 64, scenes = 0, syn_threads = 0, est_threads = 0;
    double lr = 2e-3, shape_sigma = 1.0, pixel_sigma = 0, point_sigma = 0, outlier_fraction = 0,
           inlier_threshold = 0;
    bool no_relight = false;
    std::string out_path, out_image, out_capture, image, capture, out_atlas, out_mask, atlas, mask, method = "knn",
        net, tmpl = "procedural-0", dataset, predictions, correspondences, camera, manifest, out_dir, inpaint;
    ConfigFlags synth_cfg, est_cfg, bench_cfg;

    Cli() {
        app.require_subcommand(1);
        app.set_help_all_flag("--help-all", "All subcommands' help");

        auto* gt = app.add_subcommand("gen-template", "Write a procedural vehicle template (mesh + PCA sidecar)");
        gt->add_option("--seed", gt_seed, "Template seed")->default_val(0);
        gt->add_option("--out", out_path, "Output mesh path (.mesh)")->required();
        gt->callback([this] {
            resolve = [this] { return json{{"seed", gt_seed}, {"out", abs_arg(out_path)}}; };
        });

        auto* gb = app.add_subcommand("gen-background", "Write a procedural road background descriptor + PNG");
        gb->add_option("--seed", gb_seed, "Background seed")->default_val(0);
        gb->add_option("--width", gb_width, "Image width")->default_val(512);
        gb->add_option("--height", gb_height, "Image height")->default_val(384);
        gb->add_option("--out", out_path, "Descriptor path (.json); the PNG lands next to it")->required();
        gb->callback([this] {
            resolve = [this] {
                return json{{"seed", gb_seed}, {"width", gb_width}, {"height", gb_height}, {"out", abs_arg(out_path)}};
            };
        });

        auto* cap = app.add_subcommand("capture", "Render a studio photo of one painted vehicle");
        cap->add_option("--seed", cap_seed, "Shape, paint and yaw seed")->default_val(0);
        cap->add_option("--template", tmpl, "procedural-<seed> or a mesh path")->default_val("procedural-0");
        cap->add_option("--resolution", cap_res, "Paint atlas resolution (multiple of 6)")->default_val(96);
        cap->add_option("--width", cap_width, "Photo width")->default_val(320);
        cap->add_option("--height", cap_height, "Photo height")->default_val(240);
        cap->add_option("--shape-sigma", shape_sigma, "Shape coefficient spread")->default_val(1.0);
        cap->add_option("--out-image", out_image, "Photo PNG")->required();
        cap->add_option("--out-capture", out_capture, "Capture record (.json)")->required();
        cap->callback([this] {
            resolve = [this] {
                std::string ref = tmpl;
                if (ref.rfind("procedural-", 0) != 0) ref = abs_arg(ref);
                return json{{"seed", cap_seed},
                            {"template", ref},
                            {"resolution", cap_res},
                            {"width", cap_width},
                            {"height", cap_height},
                            {"shape_sigma", shape_sigma},
                            {"out_image", abs_arg(out_image)},
                            {"out_capture", abs_arg(out_capture)}};
            };
        });

        auto* bk = app.add_subcommand("bake", "Bake a captured photo into a texture atlas");
        bk->add_option("--image", image, "Photo PNG")->required();
        bk->add_option("--capture", capture, "Capture record (.json)")->required();
        bk->add_option("--resolution", bake_res, "Atlas resolution (multiple of 6)")->default_val(96);
        bk->add_flag("--no-relight", no_relight, "Keep shading in the colors (real photographs)");
        bk->add_option("--out-atlas", out_atlas, "Atlas color PNG")->required();
        bk->add_option("--out-mask", out_mask, "Atlas validity mask PNG")->required();
        bk->callback([this] {
            resolve = [this] {
                return json{{"image", abs_arg(image)},          {"capture", abs_arg(capture)},
                            {"resolution", bake_res},         {"relight", !no_relight},
                            {"out_atlas", abs_arg(out_atlas)},  {"out_mask", abs_arg(out_mask)}};
            };
        });

        auto* ip = app.add_subcommand("inpaint", "Fill the invalid texels of a baked atlas");
        ip->add_option("--atlas", atlas, "Atlas color PNG")->required();
        ip->add_option("--mask", mask, "Atlas validity mask PNG")->required();
        ip->add_option("--method", method, "pure, knn or net")->default_val("knn");
        ip->add_option("--k", k, "Neighbours for knn")->default_val(8);
        ip->add_option("--net", net, "Trained net (for --method net)");
        ip->add_option("--out-atlas", out_atlas, "Filled atlas color PNG")->required();
        ip->add_option("--out-mask", out_mask, "Filled atlas mask PNG")->required();
        ip->callback([this] {
            resolve = [this] {
                parse_inpaint_method(method);
                json a = {{"atlas", abs_arg(atlas)},         {"mask", abs_arg(mask)},
                          {"method", method},                {"k", k},
                          {"out_atlas", abs_arg(out_atlas)}, {"out_mask", abs_arg(out_mask)}};
                if (!net.empty()) a["net"] = abs_arg(net);
                if (method == "net" && net.empty()) throw UsageError("--method net needs --net");
                return a;
            };
        });

        auto* tr = app.add_subcommand("train-inpaint", "Train the graph inpainting net on procedural atlases");
        tr->add_option("--out", out_path, "Output weights")->required();
        tr->add_option("--resolution", tr_res, "Atlas resolution (multiple of 6)")->default_val(96);
        tr->add_option("--steps", steps, "Optimizer steps")->default_val(300);
        tr->add_option("--batch", batch, "Atlases per step")->default_val(4);
        tr->add_option("--lr", lr, "Adam learning rate")->default_val(2e-3);
        tr->add_option("--train-atlases", train_atlases, "Training set size")->default_val(64);
        tr->add_option("--seed", tr_seed, "Training seed")->default_val(0);
        tr->callback([this] {
            resolve = [this] {
                return json{{"out", abs_arg(out_path)}, {"resolution", tr_res}, {"steps", steps},
                            {"batch", batch},           {"learning_rate", lr},      {"train_atlases", train_atlases},
                            {"seed", tr_seed}};
            };
        });

        auto* sy = app.add_subcommand("synthesize", "Synthesize a dataset of composed road scenes");
        synth_cfg.add(sy);
        sy->add_option("--out", out_path, "Dataset directory (default: config paths.output)");
        auto* count = sy->add_option("--count", scenes, "Number of scenes");
        auto* veh = sy->add_option("--vehicles", syn_vehicles, "Vehicles per scene");
        auto* thr = sy->add_option("--threads", syn_threads, "Worker threads (beats CVIS_FORGE_THREADS)");
        auto* inp = sy->add_option("--inpaint", inpaint, "pure, knn or net");
        auto* wd = sy->add_option("--width", syn_width, "Image width");
        auto* ht = sy->add_option("--height", syn_height, "Image height");
        sy->callback([=, this] {
            resolve = [=, this] {
                PipelineConfig c = synth_cfg.load();
                if (count->count() > 0) c.scenes = scenes;
                if (veh->count() > 0) c.placement.count = syn_vehicles;
                if (inp->count() > 0) c.inpaint = parse_inpaint_method(inpaint);
                if (wd->count() > 0) c.width = syn_width;
                if (ht->count() > 0) c.height = syn_height;
                c.validate();
                const fs::path dir = out_path.empty() ? synth_cfg.base_dir() / c.output : fs::path(out_path);
                json a = {{"config", c.to_json()}, {"out", absolute_path(dir)}};
                if (thr->count() > 0) {
                    if (syn_threads < 1) throw UsageError("--threads must be >= 1");
                    a["threads"] = syn_threads;
                }
                return a;
            };
        });

        auto* es = app.add_subcommand("estimate", "Estimate vehicle poses (dataset or correspondence file)");
        est_cfg.add(es);
        es->add_option("--dataset", dataset, "Dataset directory");
        es->add_option("--correspondences", correspondences, "Text file of \"u v x y z\" rows");
        es->add_option("--camera", camera, "Camera JSON for --correspondences");
        es->add_option("--out", out_path, "Output JSON")->required();
        auto* ethr = es->add_option("--threads", est_threads, "Worker threads (beats CVIS_FORGE_THREADS)");
        auto* ps = es->add_option("--pixel-sigma", pixel_sigma, "Predictor pixel noise");
        auto* qs = es->add_option("--point-sigma", point_sigma, "Predictor 3D point noise (m)");
        auto* of = es->add_option("--outlier-fraction", outlier_fraction, "Predictor outlier fraction");
        auto* it = es->add_option("--inlier-threshold", inlier_threshold, "RANSAC reprojection threshold (px)");
        es->callback([=, this] {
            resolve = [=, this] {
                PipelineConfig c = est_cfg.load();
                if (ps->count() > 0) c.noise.pixel_sigma = pixel_sigma;
                if (qs->count() > 0) c.noise.point_sigma = point_sigma;
                if (of->count() > 0) c.noise.outlier_fraction = outlier_fraction;
                if (it->count() > 0) c.ransac.inlier_threshold = inlier_threshold;
                c.validate();
                json a = {{"config", c.to_json()}, {"out", abs_arg(out_path)}};
                if (!dataset.empty() == !correspondences.empty()) {
                    throw UsageError("give exactly one of --dataset and --correspondences");
                }
                if (!dataset.empty()) {
                    a["mode"] = "dataset";
                    a["dataset"] = abs_arg(dataset);
                } else {
                    if (camera.empty()) throw UsageError("--correspondences needs --camera");
                    a["mode"] = "correspondences";
                    a["correspondences"] = abs_arg(correspondences);
                    a["camera"] = abs_arg(camera);
                }
                if (ethr->count() > 0) {
                    if (est_threads < 1) throw UsageError("--threads must be >= 1");
                    a["threads"] = est_threads;
                }
                return a;
            };
        });

        auto* ev = app.add_subcommand("evaluate", "Score predictions against a dataset (A3DP, box AP)");
        ev->add_option("--dataset", dataset, "Dataset directory")->required();
        ev->add_option("--predictions", predictions, "Predictions JSON from estimate")->required();
        ev->add_option("--out", out_path, "Report JSON")->required();
        ev->callback([this] {
            resolve = [this] {
                return json{{"dataset", abs_arg(dataset)},
                            {"predictions", abs_arg(predictions)},
                            {"out", abs_arg(out_path)}};
            };
        });

        auto* bn = app.add_subcommand("bench", "Time each stage of one synthesized scene");
        bench_cfg.add(bn);
        bn->add_option("--width", bench_width, "Image width")->default_val(512);
        bn->add_option("--height", bench_height, "Image height")->default_val(512);
        bn->add_option("--vehicles", bench_vehicles, "Vehicles in the scene")->default_val(5);
        bn->add_option("--out", out_path, "Timing JSON");
        bn->callback([this] {
            direct = [this] {
                PipelineConfig c = bench_cfg.load();
                c.width = bench_width;
                c.height = bench_height;
                c.placement.count = bench_vehicles;
                c.validate();
                if (!out_path.empty()) require_output_parent(out_path, "--out");
                const fs::path scratch = fs::temp_directory_path() /
                                         ("cvis-forge-bench-" + std::to_string(std::chrono::steady_clock::now()
                                                                                   .time_since_epoch()
                                                                                   .count()));
                BenchResult r;
                try {
                    r = run_bench(c, scratch);
                } catch (...) {
                    std::error_code ec;
                    fs::remove_all(scratch, ec);
                    throw;
                }
                std::error_code ec;
                fs::remove_all(scratch, ec);
                *out << format_bench(r);
                if (!out_path.empty()) write_json_file(out_path, bench_to_json(r));
            };
        });

        auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
        rp->add_option("--manifest", manifest, "Run manifest or dataset manifest.json")->required();
        rp->add_option("--out-dir", out_dir, "Redirect outputs into this directory");
        rp->callback([this] {
            direct = [this] { replay(manifest, out_dir.empty() ? fs::path() : fs::path(abs_arg(out_dir)), *out); };
        });
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Cli cli;
    cli.out = &out;
    std::vector<const char*> argv{"cvis-forge"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        cli.app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = cli.app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        err << "cvis-forge: " << e.what() << "\n";
        return 2;
    }

    std::string name = "cvis-forge";
    for (const CLI::App* sub : cli.app.get_subcommands()) name += " " + sub->get_name();
    try {
        if (cli.direct) {
            cli.direct();
        } else {
            const json a = cli.resolve();
            const std::string command = cli.app.get_subcommands().front()->get_name();
            commands().at(command).fn(a, out);
        }
    } catch (const UsageError& e) {
        err << name << ": " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        err << name << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << name << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace cvis::forge
