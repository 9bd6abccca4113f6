#include "commands.hpp"

#include "pipeline.hpp"

#include "cvis/error.hpp"
#include "cvis/image.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace cvis::forge {

namespace {

void write_manifest(const fs::path& path, const std::string& command, const json& args) {
    write_json_file(path, run_manifest(command, args));
}

fs::path manifest_for(const fs::path& output) { return output.string() + ".manifest.json"; }

fs::path arg_path(const json& a, const char* key) {
    if (!a.contains(key) || !a[key].is_string()) throw UsageError(std::string("missing argument ") + key);
    return a[key].get<std::string>();
}

PipelineConfig config_arg(const json& a) {
    if (!a.contains("config")) return PipelineConfig{};
    return PipelineConfig::from_json(a.at("config"), fs::path("/"));
}

void cmd_gen_template(const json& a, std::ostream& out) {
    const fs::path path = arg_path(a, "out");
    require_output_parent(path, "--out");
    const std::uint64_t seed = a.at("seed").get<std::uint64_t>();
    const VehicleTemplate t = make_procedural_template(seed);
    save_mesh(t, path);
    write_manifest(manifest_for(path), "gen-template", a);
    out << "wrote " << path.string() << " (" << t.vertices.size() << " vertices, " << t.triangles.size()
        << " triangles, " << t.component_count() << " shape components)\n";
}

void cmd_gen_background(const json& a, std::ostream& out) {
    const fs::path path = arg_path(a, "out");
    require_output_parent(path, "--out");
    const int w = a.at("width").get<int>(), h = a.at("height").get<int>();
    if (w <= 0 || h <= 0) throw UsageError("--width and --height must be positive");
    const Background bg = make_road_background(w, h, a.at("seed").get<std::uint64_t>());
    save_background(bg, path);
    write_manifest(manifest_for(path), "gen-background", a);
    out << "wrote " << path.string() << "\n";
}

void cmd_capture(const json& a, std::ostream& out) {
    const fs::path image = arg_path(a, "out_image"), capture = arg_path(a, "out_capture");
    require_output_parent(image, "--out-image");
    require_output_parent(capture, "--out-capture");
    const int res = a.at("resolution").get<int>();
    if (res <= 0 || res % 6 != 0) throw UsageError("--resolution must be a positive multiple of 6");
    const std::string ref = a.at("template").get<std::string>();
    const auto shape = load_template_ref(ref);
    const std::uint64_t seed = a.at("seed").get<std::uint64_t>();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ShapeCoefficients c = ShapeCoefficients::zeros(shape->component_count());
    for (double& v : c.coeffs) v = a.at("shape_sigma").get<double>() * normal(rng);
    const TextureAtlas paint = make_procedural_atlas(res, rng());
    const Capture cap = render_capture(ref, shape, c.clamped(), paint, rng(), a.at("width").get<int>(),
                                       a.at("height").get<int>());
    write_png(image, cap.image);
    write_json_file(capture, capture_to_json(cap));
    write_manifest(manifest_for(capture), "capture", a);
    out << "wrote " << image.string() << " and " << capture.string() << "\n";
}

void cmd_bake(const json& a, std::ostream& out) {
    const fs::path image = arg_path(a, "image"), capture = arg_path(a, "capture");
    const fs::path atlas_out = arg_path(a, "out_atlas"), mask_out = arg_path(a, "out_mask");
    require_input(image, "--image");
    require_input(capture, "--capture");
    require_output_parent(atlas_out, "--out-atlas");
    require_output_parent(mask_out, "--out-mask");
    const int res = a.at("resolution").get<int>();
    if (res <= 0 || res % 6 != 0) throw UsageError("--resolution must be a positive multiple of 6");
    const Capture cap = capture_from_json(read_json_file(capture));
    const auto shape = load_template_ref(cap.template_ref);
    const RgbImage photo = read_png_rgb(image);
    const TexelSurfaceMap texels(*shape, res);
    const PosedVehicle subject{shape, cap.coeffs, cap.pose, nullptr};
    std::optional<DirectionalLight> light;
    if (a.at("relight").get<bool>()) light = cap.light;
    const TextureAtlas atlas = bake(photo, subject, cap.intrinsics, cap.extrinsics, texels, light);
    save_atlas(atlas, atlas_out, mask_out);
    write_manifest(manifest_for(atlas_out), "bake", a);
    char buf[128];
    std::snprintf(buf, sizeof buf, "baked %zu of %zu surface texels (%.1f%%)\n", atlas.valid_count(),
                  texels.surface_texel_count(), 100.0 * atlas.valid_count() / texels.surface_texel_count());
    out << buf;
}

void cmd_inpaint(const json& a, std::ostream& out) {
    const fs::path atlas_in = arg_path(a, "atlas"), mask_in = arg_path(a, "mask");
    const fs::path atlas_out = arg_path(a, "out_atlas"), mask_out = arg_path(a, "out_mask");
    require_input(atlas_in, "--atlas");
    require_input(mask_in, "--mask");
    require_output_parent(atlas_out, "--out-atlas");
    require_output_parent(mask_out, "--out-mask");
    const InpaintMethod method = parse_inpaint_method(a.at("method").get<std::string>());
    const int k = a.at("k").get<int>();
    if (k < 1) throw UsageError("--k must be >= 1");
    std::optional<GraphInpaintNet> net;
    if (method == InpaintMethod::net) {
        const fs::path net_path = arg_path(a, "net");
        require_input(net_path, "--net");
        net = GraphInpaintNet::load(net_path);
    }
    const TextureAtlas atlas = load_atlas(atlas_in, mask_in);
    const TextureAtlas filled = inpaint_atlas(atlas, method, k, net ? &*net : nullptr);
    save_atlas(filled, atlas_out, mask_out);
    write_manifest(manifest_for(atlas_out), "inpaint", a);
    out << "filled " << atlas.texel_count() - atlas.valid_count() << " texels with " << to_string(method) << "\n";
}

void cmd_train_inpaint(const json& a, std::ostream& out) {
    const fs::path path = arg_path(a, "out");
    require_output_parent(path, "--out");
    InpaintBenchmarkConfig cfg;
    cfg.resolution = a.at("resolution").get<int>();
    cfg.steps = a.at("steps").get<int>();
    cfg.batch = a.at("batch").get<int>();
    cfg.learning_rate = a.at("learning_rate").get<double>();
    cfg.train_atlases = a.at("train_atlases").get<int>();
    cfg.seed = a.at("seed").get<std::uint64_t>();
    if (cfg.resolution <= 0 || cfg.resolution % 6 != 0) throw UsageError("--resolution must be a positive multiple of 6");
    if (cfg.steps < 1 || cfg.batch < 1 || cfg.train_atlases < 1 || !(cfg.learning_rate > 0)) {
        throw UsageError("--steps, --batch, --train-atlases and --lr must be positive");
    }
    const InpaintTrainResult r = train_inpaint_net(cfg);
    r.net.save(path);
    write_manifest(manifest_for(path), "train-inpaint", a);
    char buf[160];
    std::snprintf(buf, sizeof buf, "trained %d steps: loss %.5f -> %.5f, wrote %s\n", cfg.steps, r.first_loss,
                  r.last_loss, path.string().c_str());
    out << buf;
}

void cmd_synthesize(const json& a, std::ostream& out) {
    const fs::path dir = arg_path(a, "out");
    const PipelineConfig cfg = config_arg(a);
    const int threads = resolve_threads(a.contains("threads") ? std::optional<int>(a.at("threads").get<int>())
                                                              : std::nullopt,
                                        cfg.threads);
    const SynthesisContext ctx = SynthesisContext::prepare(cfg);
    std::vector<SceneRecord> records(static_cast<std::size_t>(cfg.scenes));
    parallel_for(cfg.scenes, threads, [&](int i) { records[static_cast<std::size_t>(i)] = synthesize_scene(ctx, i); });
    json extra = {{"run", run_manifest("synthesize", a)}};
    export_dataset(records, dir, extra.dump());
    std::size_t instances = 0;
    for (const SceneRecord& r : records) instances += r.annotation.instances.size();
    out << "wrote " << records.size() << " scenes, " << instances << " vehicles to " << dir.string() << "\n";
}

CorrespondenceSet read_correspondences(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::parse_error, "cannot open " + path.string());
    CorrespondenceSet cs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream row(line);
        double v[5];
        int got = 0;
        while (got < 5 && row >> v[got]) ++got;
        std::string rest;
        if (got == 0 && !(row.clear(), row >> rest)) continue;
        if (got != 5 || (row >> rest)) {
            throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(lineno) + ": expected u v x y z");
        }
        cs.pixels.emplace_back(v[0], v[1]);
        cs.points.emplace_back(v[2], v[3], v[4]);
    }
    cs.validate();
    return cs;
}

void cmd_estimate(const json& a, std::ostream& out) {
    const fs::path out_path = arg_path(a, "out");
    require_output_parent(out_path, "--out");
    const PipelineConfig cfg = config_arg(a);
    const std::string mode = a.at("mode").get<std::string>();
    if (mode == "dataset") {
        const fs::path dataset = arg_path(a, "dataset");
        require_input(dataset / "manifest.json", "--dataset");
        const int threads = resolve_threads(
            a.contains("threads") ? std::optional<int>(a.at("threads").get<int>()) : std::nullopt, cfg.threads);
        const EstimateOutput est = estimate_dataset(dataset, cfg.noise, cfg.ransac, cfg.seed, threads);
        write_json_file(out_path, predictions_to_json(est));
        write_manifest(manifest_for(out_path), "estimate", a);
        out << "estimated " << est.predictions.size() << " poses, skipped " << est.skipped.size() << "\n";
        return;
    }
    const fs::path corr = arg_path(a, "correspondences"), camera = arg_path(a, "camera");
    require_input(corr, "--correspondences");
    require_input(camera, "--camera");
    const json cam = read_json_file(camera);
    check_version(cam, "camera");
    CameraIntrinsics k;
    std::optional<CameraExtrinsics> e;
    try {
        k = intrinsics_from_json(cam.at("intrinsics"));
        if (cam.contains("world_to_camera")) e = CameraExtrinsics{pose_from_json(cam.at("world_to_camera"))};
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::parse_error, std::string("camera: ") + ex.what());
    }
    const CorrespondenceSet cs = read_correspondences(corr);
    RansacConfig rc = cfg.ransac;
    rc.seed = cfg.seed;
    const PoseEstimate est = ransac_pnp(cs, k, rc);
    json result = {{"schema", "cvis-forge-pose"},
                   {"version", 1},
                   {"pose_camera", pose_to_json(est.pose)},
                   {"correspondences", cs.size()},
                   {"inliers", est.inlier_count()},
                   {"rms_reprojection", est.rms_reprojection}};
    if (e) result["pose_world"] = pose_to_json(camera_to_world(est.pose, *e));
    write_json_file(out_path, result);
    write_manifest(manifest_for(out_path), "estimate", a);
    char buf[160];
    std::snprintf(buf, sizeof buf, "pose from %zu correspondences, %zu inliers, rms %.3g px\n", cs.size(),
                  est.inlier_count(), est.rms_reprojection);
    out << buf;
}

void cmd_evaluate(const json& a, std::ostream& out) {
    const fs::path dataset = arg_path(a, "dataset"), preds = arg_path(a, "predictions"), out_path = arg_path(a, "out");
    require_input(dataset / "manifest.json", "--dataset");
    require_input(preds, "--predictions");
    require_output_parent(out_path, "--out");
    const json report = evaluate_predictions(dataset, predictions_from_json(read_json_file(preds)));
    write_json_file(out_path, report);
    write_manifest(manifest_for(out_path), "evaluate", a);
    out << format_report_table(report);
}

}  // namespace

json run_manifest(const std::string& command, const json& args) {
    return {{"schema", "cvis-forge-run"},
            {"version", 1},
            {"command", command},
            {"args", args},
            {"created_utc", utc_timestamp()}};
}

BenchResult run_bench(const PipelineConfig& config, const fs::path& scratch) {
    BenchResult r;
    PipelineConfig cfg = config;
    cfg.scenes = 1;
    const auto start = std::chrono::steady_clock::now();
    const SynthesisContext ctx = SynthesisContext::prepare(cfg);
    r.times.background = 0;
    const double setup = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::vector<SceneRecord> records;
    records.push_back(synthesize_scene(ctx, 0, &r.times));
    {
        const auto t0 = std::chrono::steady_clock::now();
        export_dataset(records, scratch, "{}");
        r.times.export_files = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    r.setup = setup;
    r.synthesis = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    estimate_dataset(scratch, cfg.noise, cfg.ransac, cfg.seed, 1, &r.times);
    return r;
}

std::string format_bench(const BenchResult& r) {
    const StageTimes& t = r.times;
    const double per = t.vehicles > 0 ? 1.0 / t.vehicles : 0.0;
    const double per_pose = t.instances_estimated > 0 ? 1.0 / t.instances_estimated : 0.0;
    std::ostringstream out;
    char buf[160];
    out << "stage                      total s   per vehicle s\n";
    auto row = [&](const char* name, double s, double scale) {
        std::snprintf(buf, sizeof buf, "%-26s %8.3f %12.4f\n", name, s, s * scale);
        out << buf;
    };
    row("setup (templates, texels)", r.setup, per);
    row("background", t.background, per);
    row("placement", t.placement, per);
    row("capture render", t.capture, per);
    row("texture bake", t.bake, per);
    row("texture inpainting", t.inpaint, per);
    row("scene render + annotate", t.render, per);
    row("dataset export", t.export_files, per);
    row("pose estimation", t.estimate, per_pose);
    std::snprintf(buf, sizeof buf, "synthesis end to end %8.3f s for %d vehicles (%.3f s per vehicle)\n", r.synthesis,
                  t.vehicles, r.synthesis * per);
    out << buf;
    return out.str();
}

json bench_to_json(const BenchResult& r) {
    const StageTimes& t = r.times;
    return {{"schema", "cvis-forge-bench"},
            {"version", 1},
            {"vehicles", t.vehicles},
            {"instances_estimated", t.instances_estimated},
            {"seconds",
             {{"setup", r.setup},
              {"background", t.background},
              {"placement", t.placement},
              {"capture", t.capture},
              {"bake", t.bake},
              {"inpaint", t.inpaint},
              {"render", t.render},
              {"export", t.export_files},
              {"estimate", t.estimate},
              {"synthesis_total", r.synthesis}}}};
}

const std::map<std::string, CommandSpec>& commands() {
    static const std::map<std::string, CommandSpec> table = {
        {"gen-template", {cmd_gen_template, {"out"}}},
        {"gen-background", {cmd_gen_background, {"out"}}},
        {"capture", {cmd_capture, {"out_image", "out_capture"}}},
        {"bake", {cmd_bake, {"out_atlas", "out_mask"}}},
        {"inpaint", {cmd_inpaint, {"out_atlas", "out_mask"}}},
        {"train-inpaint", {cmd_train_inpaint, {"out"}}},
        {"synthesize", {cmd_synthesize, {}}},
        {"estimate", {cmd_estimate, {"out"}}},
        {"evaluate", {cmd_evaluate, {"out"}}},
    };
    return table;
}

void replay(const fs::path& manifest_path, const fs::path& out_dir, std::ostream& out) {
    require_input(manifest_path, "--manifest");
    json m = read_json_file(manifest_path);
    if (m.value("schema", "") == "cvis-forge-dataset") {
        if (!m.contains("run")) throw Error(ErrorCode::parse_error, "dataset manifest has no run record");
        m = m.at("run");
    }
    check_version(m, "manifest");
    if (m.value("schema", "") != "cvis-forge-run") throw Error(ErrorCode::parse_error, "not a cvis-forge run manifest");
    const std::string command = m.at("command").get<std::string>();
    const auto it = commands().find(command);
    if (it == commands().end()) throw Error(ErrorCode::parse_error, "manifest names unknown command " + command);
    json args = m.at("args");
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (command == "synthesize") {
            args["out"] = absolute_path(out_dir);
        } else {
            for (const std::string& key : it->second.outputs) {
                args[key] = absolute_path(out_dir / fs::path(args.at(key).get<std::string>()).filename());
            }
        }
    }
    it->second.fn(args, out);
}

}  // namespace cvis::forge
