#include "pipeline.hpp"

#include "cvis/error.hpp"
#include "cvis/image.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

namespace cvis::forge {

namespace {

class Stopwatch {
public:
    explicit Stopwatch(double* slot) : slot_(slot), start_(std::chrono::steady_clock::now()) {}
    ~Stopwatch() {
        if (slot_) *slot_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    double* slot_;
    std::chrono::steady_clock::time_point start_;
};

double* slot(StageTimes* t, double StageTimes::*field) { return t ? &(t->*field) : nullptr; }

double lowest_z(const std::vector<Vec3>& v) {
    double z = v.front().z();
    for (const Vec3& p : v) z = std::min(z, p.z());
    return z;
}

}  // namespace

Capture render_capture(const std::string& template_ref, std::shared_ptr<const VehicleTemplate> shape,
                       const ShapeCoefficients& coeffs, const TextureAtlas& paint, std::uint64_t seed, int width,
                       int height) {
    Capture c;
    c.template_ref = template_ref;
    c.coeffs = coeffs;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> yaw(-std::numbers::pi, std::numbers::pi);
    c.pose = Pose::from_ypr(yaw(rng), 0.0, 0.0, Vec3(0.0, 0.0, -lowest_z(deform(*shape, coeffs))));
    c.intrinsics.fx = c.intrinsics.fy = 1.03 * width;
    c.intrinsics.cx = (width - 1) / 2.0;
    c.intrinsics.cy = (height - 1) / 2.0;
    c.intrinsics.width = width;
    c.intrinsics.height = height;
    c.extrinsics = CameraExtrinsics::look_at(Vec3(0.0, -6.5, 2.4), Vec3(0.0, 0.0, 0.6));
    c.light = default_sun();
    Framebuffer fb = Framebuffer::from_image(RgbImage(width, height, {128, 128, 128}));
    const PosedVehicle v{std::move(shape), coeffs, c.pose, std::make_shared<const TextureAtlas>(paint)};
    rasterize(v, c.intrinsics, c.extrinsics, c.light, fb, 1);
    c.image = fb.color_image();
    return c;
}

json capture_to_json(const Capture& c) {
    return {{"schema", "cvis-forge-capture"},
            {"version", 1},
            {"template", c.template_ref},
            {"coeffs", c.coeffs.coeffs},
            {"pose", pose_to_json(c.pose)},
            {"intrinsics", intrinsics_to_json(c.intrinsics)},
            {"world_to_camera", pose_to_json(c.extrinsics.world_to_camera)},
            {"light", light_to_json(c.light)}};
}

Capture capture_from_json(const json& j) {
    check_version(j, "capture");
    try {
        Capture c;
        c.template_ref = j.at("template").get<std::string>();
        c.coeffs.coeffs = j.at("coeffs").get<std::vector<double>>();
        c.pose = pose_from_json(j.at("pose"));
        c.intrinsics = intrinsics_from_json(j.at("intrinsics"));
        c.extrinsics.world_to_camera = pose_from_json(j.at("world_to_camera"));
        c.light = light_from_json(j.at("light"));
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("capture: ") + e.what());
    }
}

TextureAtlas inpaint_atlas(const TextureAtlas& atlas, InpaintMethod method, int knn_k, const GraphInpaintNet* net) {
    switch (method) {
        case InpaintMethod::pure: return fill_pure_color(atlas);
        case InpaintMethod::knn: return fill_knn(atlas, knn_k);
        case InpaintMethod::net:
            if (!net) throw Error(ErrorCode::invalid_argument, "net inpainting without a net");
            return inpaint_with_net(*net, atlas);
    }
    throw Error(ErrorCode::invalid_argument, "unknown inpainting method");
}

SynthesisContext SynthesisContext::prepare(const PipelineConfig& config) {
    SynthesisContext ctx;
    ctx.config = config;
    ctx.template_refs = config.templates.empty() ? std::vector<std::string>{"procedural-0"} : config.templates;
    for (const std::string& ref : ctx.template_refs) {
        ctx.templates.push_back(load_template_ref(ref));
        if (config.texture_source == TextureSource::capture) {
            ctx.texel_maps.push_back(
                std::make_shared<const TexelSurfaceMap>(*ctx.templates.back(), config.atlas_resolution));
        }
    }
    for (const std::string& b : config.backgrounds) ctx.backgrounds.push_back(load_background(b));
    if (config.inpaint == InpaintMethod::net && config.texture_source == TextureSource::capture) {
        ctx.net = GraphInpaintNet::load(config.net);
    }
    return ctx;
}

std::string scene_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", index);
    return buf;
}

SceneRecord synthesize_scene(const SynthesisContext& ctx, int index, StageTimes* times) {
    const PipelineConfig& cfg = ctx.config;
    const std::uint64_t s = cfg.seed + static_cast<std::uint64_t>(index);

    Background bg;
    {
        Stopwatch w(slot(times, &StageTimes::background));
        bg = ctx.backgrounds.empty()
                 ? make_road_background(default_road_intrinsics(cfg.width, cfg.height), default_road_extrinsics(),
                                        default_sun(), s)
                 : ctx.backgrounds[static_cast<std::size_t>(index) % ctx.backgrounds.size()];
    }

    std::mt19937_64 rng(s);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<FleetEntry> fleet;
    std::vector<std::size_t> fleet_template;
    for (int f = 0; f < cfg.fleet_size; ++f) {
        const std::size_t ti = static_cast<std::size_t>(f) % ctx.templates.size();
        ShapeCoefficients c = ShapeCoefficients::zeros(ctx.templates[ti]->component_count());
        for (double& v : c.coeffs) v = cfg.shape_sigma * normal(rng);
        fleet.push_back({ctx.template_refs[ti], ctx.templates[ti], c.clamped()});
        fleet_template.push_back(ti);
    }
    PlacementConfig pc = cfg.placement;
    pc.seed = rng();
    std::vector<Pose> poses;
    {
        Stopwatch w(slot(times, &StageTimes::placement));
        poses = place_vehicles(bg, pc, fleet);
    }

    std::vector<SceneVehicle> vehicles;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const std::size_t f = i % fleet.size();
        const FleetEntry& fe = fleet[f];
        const std::uint64_t paint_seed = rng();
        const std::uint64_t capture_seed = rng();
        TextureAtlas atlas = make_procedural_atlas(cfg.atlas_resolution, paint_seed);
        if (cfg.texture_source == TextureSource::capture) {
            Capture cap;
            {
                Stopwatch w(slot(times, &StageTimes::capture));
                cap = render_capture(fe.template_id, fe.shape, fe.coeffs, atlas, capture_seed);
            }
            TextureAtlas partial;
            {
                Stopwatch w(slot(times, &StageTimes::bake));
                const PosedVehicle subject{fe.shape, fe.coeffs, cap.pose, nullptr};
                partial = bake(cap.image, subject, cap.intrinsics, cap.extrinsics, *ctx.texel_maps[fleet_template[f]],
                               cap.light);
            }
            Stopwatch w(slot(times, &StageTimes::inpaint));
            atlas = inpaint_atlas(partial, cfg.inpaint, cfg.knn_k, ctx.net ? &*ctx.net : nullptr);
        }
        vehicles.push_back({fe.template_id, {fe.shape, fe.coeffs, poses[i], std::make_shared<const TextureAtlas>(std::move(atlas))}});
    }
    if (times) times->vehicles += static_cast<int>(vehicles.size());

    SceneRecord rec;
    {
        Stopwatch w(slot(times, &StageTimes::render));
        ComposedScene composed = compose(bg, vehicles);
        rec.image = composed.image();
        rec.framebuffer = std::move(composed.framebuffer);
        rec.annotation.instances = std::move(composed.instances);
    }
    rec.annotation.name = scene_name(index);
    rec.annotation.intrinsics = bg.intrinsics;
    rec.annotation.extrinsics = bg.extrinsics;
    return rec;
}

Background load_background(const fs::path& descriptor) {
    const json j = read_json_file(descriptor);
    check_version(j, "background " + descriptor.string());
    Background bg;
    try {
        fs::path image = j.at("image").get<std::string>();
        if (image.is_relative()) image = descriptor.parent_path() / image;
        if (!fs::exists(image)) throw Error(ErrorCode::parse_error, "background image missing: " + image.string());
        bg.image = read_png_rgb(image);
        bg.intrinsics = intrinsics_from_json(j.at("intrinsics"));
        bg.extrinsics.world_to_camera = pose_from_json(j.at("world_to_camera"));
        bg.light = j.contains("light") ? light_from_json(j.at("light")) : default_sun();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, descriptor.string() + ": " + e.what());
    }
    bg.ground = ground_plane_from_extrinsics(bg.extrinsics);
    bg.validate();
    return bg;
}

void save_background(const Background& bg, const fs::path& descriptor) {
    const fs::path image = descriptor.parent_path() / (descriptor.stem().string() + ".png");
    write_png(image, bg.image);
    write_json_file(descriptor, {{"schema", "cvis-forge-background"},
                                 {"version", 1},
                                 {"image", image.filename().string()},
                                 {"intrinsics", intrinsics_to_json(bg.intrinsics)},
                                 {"world_to_camera", pose_to_json(bg.extrinsics.world_to_camera)},
                                 {"light", light_to_json(bg.light)}});
}

EstimateOutput estimate_dataset(const fs::path& dataset, const NoiseModel& noise, const RansacConfig& ransac,
                                std::uint64_t seed, int threads, StageTimes* times) {
    const std::vector<SceneAnnotation> scenes = import_annotations(dataset);

    struct Raster {
        int width = 0, height = 0;
        std::vector<Vec3f> points;
    };
    std::vector<Raster> rasters(scenes.size());
    std::map<std::string, std::shared_ptr<const VehicleTemplate>> templates;
    struct Job {
        std::size_t scene, instance;
    };
    std::vector<Job> jobs;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        Raster& r = rasters[si];
        r.points = read_dense_raster(dataset / scenes[si].dense_map_file, r.width, r.height);
        for (std::size_t ii = 0; ii < scenes[si].instances.size(); ++ii) {
            const InstanceAnnotation& a = scenes[si].instances[ii];
            if (a.tiny) continue;
            if (!templates.count(a.template_id)) templates[a.template_id] = load_template_ref(a.template_id);
            jobs.push_back({si, ii});
        }
    }

    std::vector<std::optional<Prediction>> results(jobs.size());
    std::vector<std::string> reasons(jobs.size());
    Stopwatch w(slot(times, &StageTimes::estimate));
    parallel_for(static_cast<int>(jobs.size()), threads, [&](int j) {
        const Job& job = jobs[static_cast<std::size_t>(j)];
        const SceneAnnotation& scene = scenes[job.scene];
        const InstanceAnnotation& a = scene.instances[job.instance];
        const Raster& r = rasters[job.scene];
        const CorrespondenceSet dense = dense_map(a, r.points, r.width, r.height);
        if (dense.size() < static_cast<std::size_t>(kMinPnpPoints)) {
            reasons[static_cast<std::size_t>(j)] = "fewer than 6 visible pixels";
            return;
        }
        const CorrespondenceSet lifted = lift_correspondences(dense, SurfaceLifter(*templates.at(a.template_id), a.coeffs));
        NoiseModel nm = noise;
        nm.seed = derive_seed(seed, job.scene, static_cast<std::uint64_t>(a.instance_id));
        RansacConfig rc = ransac;
        rc.seed = nm.seed;
        try {
            const CorrespondenceSet predicted = simulate_predictor(lifted, nm);
            const PoseEstimate est = ransac_pnp(predicted, scene.intrinsics, rc);
            Prediction p;
            p.scene = scene.name;
            p.instance = a.instance_id;
            p.template_ref = a.template_id;
            p.pose = camera_to_world(est.pose, scene.extrinsics);
            p.dimensions = estimate_dimensions(predicted.points);
            p.correspondences = predicted.size();
            p.inliers = est.inlier_count();
            p.score = static_cast<double>(p.inliers) / static_cast<double>(p.correspondences);
            p.rms_reprojection = est.rms_reprojection;
            // the stand-in detector is the instance segmentation the predictor read
            Box2d box{1e300, 1e300, -1e300, -1e300};
            for (const Vec2& px : dense.pixels) {
                box = {std::min(box[0], px.x() - 0.5), std::min(box[1], px.y() - 0.5), std::max(box[2], px.x() + 0.5),
                       std::max(box[3], px.y() + 0.5)};
            }
            p.bbox2d = box;
            results[static_cast<std::size_t>(j)] = p;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::no_consensus && e.code() != ErrorCode::too_few_points &&
                e.code() != ErrorCode::degenerate_configuration) {
                throw;
            }
            reasons[static_cast<std::size_t>(j)] = e.what();
        }
    });

    EstimateOutput out;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (results[j]) {
            out.predictions.push_back(*results[j]);
        } else {
            out.skipped.push_back({scenes[jobs[j].scene].name, scenes[jobs[j].scene].instances[jobs[j].instance].instance_id,
                                   reasons[j]});
        }
    }
    if (times) times->instances_estimated += static_cast<int>(out.predictions.size());
    return out;
}

json predictions_to_json(const EstimateOutput& out) {
    json preds = json::array(), skipped = json::array();
    for (const Prediction& p : out.predictions) {
        preds.push_back({{"scene", p.scene},
                         {"instance", p.instance},
                         {"template", p.template_ref},
                         {"pose", pose_to_json(p.pose)},
                         {"dimensions", dims_to_json(p.dimensions)},
                         {"score", p.score},
                         {"bbox2d", p.bbox2d},
                         {"correspondences", p.correspondences},
                         {"inliers", p.inliers},
                         {"rms_reprojection", p.rms_reprojection}});
    }
    for (const Skipped& s : out.skipped) {
        skipped.push_back({{"scene", s.scene}, {"instance", s.instance}, {"reason", s.reason}});
    }
    return {{"schema", "cvis-forge-predictions"}, {"version", 1}, {"predictions", preds}, {"skipped", skipped}};
}

std::vector<Prediction> predictions_from_json(const json& j) {
    check_version(j, "predictions");
    std::vector<Prediction> out;
    try {
        for (const json& e : j.at("predictions")) {
            Prediction p;
            p.scene = e.at("scene").get<std::string>();
            p.instance = e.at("instance").get<int>();
            p.template_ref = e.value("template", std::string());
            p.pose = pose_from_json(e.at("pose"));
            p.dimensions = dims_from_json(e.at("dimensions"));
            p.score = e.at("score").get<double>();
            p.bbox2d = e.at("bbox2d").get<Box2d>();
            p.correspondences = e.value("correspondences", std::size_t{0});
            p.inliers = e.value("inliers", std::size_t{0});
            p.rms_reprojection = e.value("rms_reprojection", 0.0);
            out.push_back(p);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("predictions: ") + e.what());
    }
    return out;
}

namespace {

json a3dp_json(const A3dpResult& r) {
    return {{"mean", r.mean}, {"c_l", r.c_l}, {"c_s", r.c_s}, {"levels", r.ap}};
}

json levels_json(const A3dpConfig& c) {
    json out = json::array();
    for (const A3dpLevel& l : c.levels) {
        out.push_back({{"translation", l.translation}, {"rotation", l.rotation}, {"shape_sim", l.shape_sim}});
    }
    return out;
}

}  // namespace

json evaluate_predictions(const fs::path& dataset, const std::vector<Prediction>& predictions) {
    const std::vector<SceneAnnotation> scenes = import_annotations(dataset);
    std::map<std::string, int> scene_index;
    for (std::size_t i = 0; i < scenes.size(); ++i) scene_index[scenes[i].name] = static_cast<int>(i);

    std::vector<PoseGroundTruth> pose_gts;
    std::vector<GroundTruth> box_gts;
    std::map<std::pair<int, int>, const InstanceAnnotation*> by_id;
    int tiny = 0;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        for (const InstanceAnnotation& a : scenes[si].instances) {
            if (a.tiny) {
                ++tiny;
                continue;
            }
            const double distance = scenes[si].extrinsics.world_to_camera.apply(a.pose.translation).norm();
            pose_gts.push_back({static_cast<int>(si), a.pose, a.dimensions, distance});
            box_gts.push_back({static_cast<int>(si), a.bbox2d, std::nullopt});
            by_id[{static_cast<int>(si), a.instance_id}] = &a;
        }
    }
    std::vector<PoseDetection> pose_dets;
    std::vector<Detection> box_dets;
    double t_err = 0, r_err = 0, sim = 0, dim_loss = 0;
    int paired = 0;
    for (const Prediction& p : predictions) {
        const auto it = scene_index.find(p.scene);
        if (it == scene_index.end()) throw Error(ErrorCode::parse_error, "prediction for unknown scene " + p.scene);
        pose_dets.push_back({it->second, p.pose, p.dimensions, p.score});
        box_dets.push_back({it->second, p.bbox2d, std::nullopt, p.score});
        const auto gt = by_id.find({it->second, p.instance});
        if (gt == by_id.end()) continue;
        const PoseErrors e = pose_error(p.pose, p.dimensions, gt->second->pose, gt->second->dimensions);
        t_err += e.translation;
        r_err += e.rotation;
        sim += e.shape_sim;
        const std::array<double, 3> pd = {p.dimensions.w, p.dimensions.h, p.dimensions.l};
        const std::array<double, 3> gd = {gt->second->dimensions.w, gt->second->dimensions.h, gt->second->dimensions.l};
        dim_loss += smooth_l1(pd, gd);
        ++paired;
    }
    const A3dpConfig abs = A3dpConfig::absolute(), rel = A3dpConfig::relative();
    const A3dpResult ra = a3dp(pose_dets, pose_gts, abs), rr = a3dp(pose_dets, pose_gts, rel);
    const ApResult box = average_precision(box_dets, box_gts, coco_iou_thresholds());
    const double n = paired > 0 ? paired : 1;
    return {
        {"schema", "cvis-forge-report"},
        {"version", 1},
        {"note",
         "A3DP threshold ramps and the c-l / c-s level indices are reconstructions, not the reference benchmark's "
         "published values; shape similarity is the aligned-box 3D IoU of the dimensions"},
        {"counts",
         {{"scenes", scenes.size()},
          {"ground_truth", pose_gts.size()},
          {"tiny_ignored", tiny},
          {"predictions", predictions.size()},
          {"paired", paired}}},
        {"a3dp_abs", a3dp_json(ra)},
        {"a3dp_rel", a3dp_json(rr)},
        {"box_map", box.map},
        {"box_ap", box.ap},
        {"mean_errors",
         {{"translation_m", t_err / n},
          {"rotation_deg", r_err / n * 180.0 / std::numbers::pi},
          {"shape_sim", sim / n},
          {"dimension_smooth_l1", dim_loss / n}}},
        {"thresholds", {{"abs", levels_json(abs)}, {"rel", levels_json(rel)}, {"loose_index", abs.loose_index},
                        {"strict_index", abs.strict_index}}},
    };
}

std::string format_report_table(const json& r) {
    char buf[512];
    std::ostringstream out;
    out << "            A3DP-Abs                 A3DP-Rel                 2D box\n";
    out << "            mean    c-l     c-s      mean    c-l     c-s      mAP\n";
    std::snprintf(buf, sizeof buf, "cvis-forge  %-7.3f %-7.3f %-7.3f  %-7.3f %-7.3f %-7.3f  %.3f\n",
                  r["a3dp_abs"]["mean"].get<double>(), r["a3dp_abs"]["c_l"].get<double>(),
                  r["a3dp_abs"]["c_s"].get<double>(), r["a3dp_rel"]["mean"].get<double>(),
                  r["a3dp_rel"]["c_l"].get<double>(), r["a3dp_rel"]["c_s"].get<double>(), r["box_map"].get<double>());
    out << buf;
    const json& e = r["mean_errors"];
    std::snprintf(buf, sizeof buf, "mean error: %.4f m, %.4f deg, shape sim %.3f (%d pairs, %d tiny ignored)\n",
                  e["translation_m"].get<double>(), e["rotation_deg"].get<double>(), e["shape_sim"].get<double>(),
                  r["counts"]["paired"].get<int>(), r["counts"]["tiny_ignored"].get<int>());
    out << buf;
    return out.str();
}

}  // namespace cvis::forge
