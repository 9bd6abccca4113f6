#include "cvis/scene.hpp"

#include "cvis/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace cvis {

using nlohmann::json;

namespace {

bool same_pose(const Pose& a, const Pose& b) {
    return a.rotation.coeffs() == b.rotation.coeffs() && a.translation == b.translation;
}

bool same_box(const OrientedBox& a, const OrientedBox& b) {
    return a.center == b.center && a.half_extents == b.half_extents && a.rotation.coeffs() == b.rotation.coeffs();
}

bool same_intrinsics(const CameraIntrinsics& a, const CameraIntrinsics& b) {
    return a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy && a.width == b.width &&
           a.height == b.height && a.skew == b.skew;
}

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform in [-1, 1] per integer lattice cell.
double cell_noise(std::uint64_t seed, std::int64_t i, std::int64_t j) {
    const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(i) ^ mix(static_cast<std::uint64_t>(j))));
    return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 52) - 1.0;
}

Rgb to_rgb(const Vec3& c) {
    Rgb out;
    for (int ch = 0; ch < 3; ++ch) out[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(c[ch]), 0L, 255L));
    return out;
}

Vec3 ground_color(double x, double y, std::uint64_t seed) {
    const double ax = std::abs(x);
    if (ax > 12.0) {
        const double n = cell_noise(seed + 3, std::llround(std::floor(x / 0.4)), std::llround(std::floor(y / 0.4)));
        return Vec3(72, 108, 58) + 10.0 * n * Vec3::Ones();
    }
    if (ax > 7.5) {
        const bool seam = std::fmod(std::abs(y), 1.5) < 0.04 || std::fmod(ax - 7.5, 1.5) < 0.04;
        const double n = cell_noise(seed + 2, std::llround(std::floor(x / 1.5)), std::llround(std::floor(y / 1.5)));
        return seam ? Vec3(118, 114, 110) : Vec3(152, 147, 140) + 6.0 * n * Vec3::Ones();
    }
    const bool edge_line = std::abs(ax - 7.0) < 0.1;
    const bool dash = std::abs(ax - 3.5) < 0.075 && std::fmod(y + 1000.0, 6.0) < 3.0;
    const bool center = ax < 0.075;
    if (edge_line || dash) return Vec3(222, 222, 212);
    if (center) return Vec3(214, 180, 60);
    const double fine = cell_noise(seed, std::llround(std::floor(x / 0.2)), std::llround(std::floor(y / 0.2)));
    const double coarse = cell_noise(seed + 1, std::llround(std::floor(x / 2.0)), std::llround(std::floor(y / 2.0)));
    return Vec3(90, 91, 95) + (7.0 * fine + 5.0 * coarse) * Vec3::Ones();
}

}  // namespace

void Background::validate() const {
    intrinsics.validate();
    light.validate();
    if (image.width != intrinsics.width || image.height != intrinsics.height) {
        throw Error(ErrorCode::shape_mismatch, "background image " + std::to_string(image.width) + "x" +
                                                   std::to_string(image.height) + " vs intrinsics " +
                                                   std::to_string(intrinsics.width) + "x" +
                                                   std::to_string(intrinsics.height));
    }
}

CameraExtrinsics default_road_extrinsics() {
    return CameraExtrinsics::look_at(Vec3(0.0, -20.0, 8.0), Vec3(0.0, 5.0, 0.0));
}

CameraIntrinsics default_road_intrinsics(int width, int height) {
    CameraIntrinsics k;
    k.fx = k.fy = 1.2 * width;
    k.cx = (width - 1) / 2.0;
    k.cy = (height - 1) / 2.0;
    k.width = width;
    k.height = height;
    return k;
}

DirectionalLight default_sun() {
    DirectionalLight l;
    l.direction = Vec3(0.35, 0.5, -1.0).normalized();
    l.shadow_strength = 0.5;
    return l;
}

Background make_road_background(const CameraIntrinsics& k, const CameraExtrinsics& e, const DirectionalLight& light,
                                std::uint64_t seed) {
    k.validate();
    Background bg;
    bg.intrinsics = k;
    bg.extrinsics = e;
    bg.ground = ground_plane_from_extrinsics(e);
    bg.light = light;
    bg.image = RgbImage(k.width, k.height);
    const Mat3 cam_to_world = e.world_to_camera.rotation_matrix().transpose();
    const Vec3 eye = e.camera_center();
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const Vec3 d = cam_to_world * pixel_ray(Vec2(x, y), k);
            Vec3 c;
            if (d.z() < -1e-9 && eye.z() > 0) {
                const double t = -eye.z() / d.z();
                const Vec3 p = eye + t * d;
                const double haze = std::min(1.0, t / 400.0);
                c = (1.0 - haze) * ground_color(p.x(), p.y(), seed) + haze * Vec3(180, 190, 200);
            } else {
                const double up = std::clamp(d.normalized().z(), 0.0, 1.0);
                c = (1.0 - up) * Vec3(182, 200, 220) + up * Vec3(105, 150, 215);
            }
            bg.image.at(x, y) = to_rgb(c);
        }
    }
    return bg;
}

Background make_road_background(int width, int height, std::uint64_t seed) {
    return make_road_background(default_road_intrinsics(width, height), default_road_extrinsics(), default_sun(),
                                seed);
}

void PlacementConfig::validate() const {
    if (count < 0) throw Error(ErrorCode::invalid_argument, "count must be >= 0");
    if (!(region.x_max > region.x_min) || !(region.y_max > region.y_min)) {
        throw Error(ErrorCode::invalid_argument, "placement region is degenerate");
    }
    if (!(yaw_max >= yaw_min)) throw Error(ErrorCode::invalid_argument, "yaw range is inverted");
    if (!(min_gap >= 0.0)) throw Error(ErrorCode::invalid_argument, "min_gap must be >= 0");
    if (max_attempts < count) throw Error(ErrorCode::invalid_argument, "max_attempts must be >= count");
}

OrientedBox vehicle_box(const VehicleTemplate& t, const ShapeCoefficients& c, const Pose& pose) {
    const std::vector<Vec3> v = deform(t, c);
    const Dimensions d = canonical_dimensions(v);
    OrientedBox b;
    b.center = pose.apply(bbox_center(v));
    b.half_extents = d.as_xyz() / 2.0;
    b.rotation = pose.rotation;
    return b;
}

std::vector<Pose> place_vehicles(const Background& bg, const PlacementConfig& cfg, std::span<const FleetEntry> fleet) {
    cfg.validate();
    if (cfg.count > 0 && fleet.empty()) throw Error(ErrorCode::invalid_argument, "empty fleet");
    const Vec3 n = bg.ground.normal.normalized();
    if (n.z() < 1.0 - 1e-9) {
        throw Error(ErrorCode::invalid_argument, "vehicles rest on a horizontal ground plane only");
    }
    const double ground_z = bg.ground.offset / bg.ground.normal.norm();

    struct Footprint {
        double lift;  // translation z that puts the lowest vertex on the ground
        Vec3 center;  // object-frame box center
        Vec3 half;
    };
    std::vector<Footprint> prints;
    for (const FleetEntry& f : fleet) {
        const std::vector<Vec3> v = deform(*f.shape, f.coeffs);
        double zmin = v.front().z();
        for (const Vec3& p : v) zmin = std::min(zmin, p.z());
        prints.push_back({ground_z - zmin, bbox_center(v), canonical_dimensions(v).as_xyz() / 2.0});
    }

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> ux(cfg.region.x_min, cfg.region.x_max);
    std::uniform_real_distribution<double> uy(cfg.region.y_min, cfg.region.y_max);
    std::uniform_real_distribution<double> uyaw(cfg.yaw_min, cfg.yaw_max);

    std::vector<Pose> poses;
    std::vector<OrientedBox> boxes;
    int failures = 0;
    while (static_cast<int>(poses.size()) < cfg.count) {
        const Footprint& fp = prints[poses.size() % prints.size()];
        const double x = ux(rng), y = uy(rng), yaw = uyaw(rng);
        const Pose pose = Pose::from_ypr(yaw, 0.0, 0.0, Vec3(x, y, fp.lift));
        OrientedBox box;
        box.center = pose.apply(fp.center);
        box.half_extents = fp.half;
        box.rotation = pose.rotation;
        box = box.inflated(cfg.min_gap / 2.0);
        const bool clear = std::none_of(boxes.begin(), boxes.end(),
                                        [&](const OrientedBox& other) { return obb_intersect(box, other); });
        if (clear) {
            poses.push_back(pose);
            boxes.push_back(box);
            continue;
        }
        if (++failures >= cfg.max_attempts) {
            throw Error(ErrorCode::placement_exhausted, "placed " + std::to_string(poses.size()) + " of " +
                                                            std::to_string(cfg.count) + " vehicles after " +
                                                            std::to_string(failures) + " rejected samples");
        }
    }
    return poses;
}

bool InstanceAnnotation::operator==(const InstanceAnnotation& o) const {
    return instance_id == o.instance_id && template_id == o.template_id && coeffs == o.coeffs &&
           same_pose(pose, o.pose) && dimensions == o.dimensions && bbox2d == o.bbox2d && mask == o.mask &&
           same_box(bbox3d, o.bbox3d) && tiny == o.tiny;
}

bool SceneAnnotation::operator==(const SceneAnnotation& o) const {
    return name == o.name && image_file == o.image_file && dense_map_file == o.dense_map_file &&
           same_intrinsics(intrinsics, o.intrinsics) && same_pose(extrinsics.world_to_camera, o.extrinsics.world_to_camera) &&
           instances == o.instances;
}

ComposedScene compose(const Background& bg, std::span<const SceneVehicle> vehicles) {
    bg.validate();
    ComposedScene scene;
    Framebuffer& fb = scene.framebuffer;
    fb = Framebuffer::from_image(bg.image);
    if (vehicles.empty()) return scene;

    std::vector<PosedVehicle> posed;
    for (const SceneVehicle& v : vehicles) posed.push_back(v.vehicle);
    shadow_pass(posed, bg.light, bg.ground, bg.intrinsics, bg.extrinsics, fb);
    for (std::size_t i = 0; i < posed.size(); ++i) {
        rasterize(posed[i], bg.intrinsics, bg.extrinsics, bg.light, fb, static_cast<std::int32_t>(i + 1));
    }

    std::vector<std::uint8_t> bitmap(fb.instance_id.size());
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
        const auto id = static_cast<std::int32_t>(i + 1);
        for (std::size_t p = 0; p < bitmap.size(); ++p) bitmap[p] = fb.instance_id[p] == id ? 1 : 0;
        const PosedVehicle& v = vehicles[i].vehicle;
        InstanceAnnotation a;
        a.instance_id = id;
        a.template_id = vehicles[i].template_id;
        a.coeffs = v.coeffs;
        a.pose = v.pose;
        a.dimensions = canonical_dimensions(v.object_vertices());
        a.mask = RleMask::encode(bitmap, fb.width, fb.height);
        a.bbox2d = mask_bbox(a.mask);
        a.bbox3d = vehicle_box(*v.shape, v.coeffs, v.pose);
        a.tiny = a.mask.area() < kTinyMaskArea;
        scene.instances.push_back(std::move(a));
    }
    return scene;
}

CorrespondenceSet dense_map(const InstanceAnnotation& instance, std::span<const Vec3f> raster, int width, int height) {
    if (instance.mask.width != width || instance.mask.height != height ||
        raster.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error(ErrorCode::shape_mismatch, "dense raster does not match the instance mask");
    }
    const std::vector<std::uint8_t> bits = instance.mask.decode();
    CorrespondenceSet cs;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            if (!bits[i] || !raster[i].allFinite()) continue;
            cs.pixels.emplace_back(x, y);
            cs.points.push_back(raster[i].cast<double>());
        }
    }
    return cs;
}

CorrespondenceSet dense_map(const InstanceAnnotation& instance, const Framebuffer& fb) {
    return dense_map(instance, fb.canon_point, fb.width, fb.height);
}

// ---- dataset I/O ----

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json quat_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

Vec3 json_vec(const json& j) {
    if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::parse_error, "expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Quat json_quat(const json& j) {
    if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::parse_error, "expected a quaternion [w, x, y, z]");
    return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

json pose_json(const Pose& p) {
    return {{"rotation", quat_json(p.rotation)}, {"translation", vec_json(p.translation)}, {"ypr", vec_json(p.ypr())}};
}

Pose json_pose(const json& j) {
    Pose p;
    p.rotation = json_quat(j.at("rotation"));
    p.translation = json_vec(j.at("translation"));
    return p;
}

json instance_json(const InstanceAnnotation& a) {
    return {
        {"id", a.instance_id},
        {"template", a.template_id},
        {"coeffs", a.coeffs.coeffs},
        {"pose", pose_json(a.pose)},
        {"dimensions", {{"w", a.dimensions.w}, {"h", a.dimensions.h}, {"l", a.dimensions.l}}},
        {"bbox2d", a.bbox2d},
        {"bbox3d",
         {{"center", vec_json(a.bbox3d.center)},
          {"half_extents", vec_json(a.bbox3d.half_extents)},
          {"rotation", quat_json(a.bbox3d.rotation)}}},
        {"mask", {{"size", {a.mask.height, a.mask.width}}, {"counts", a.mask.counts}}},
        {"area", a.mask.area()},
        {"tiny", a.tiny},
    };
}

InstanceAnnotation json_instance(const json& j) {
    InstanceAnnotation a;
    a.instance_id = j.at("id").get<int>();
    a.template_id = j.at("template").get<std::string>();
    a.coeffs.coeffs = j.at("coeffs").get<std::vector<double>>();
    a.pose = json_pose(j.at("pose"));
    const json& d = j.at("dimensions");
    a.dimensions = {d.at("w").get<double>(), d.at("h").get<double>(), d.at("l").get<double>()};
    a.bbox2d = j.at("bbox2d").get<std::array<double, 4>>();
    const json& b = j.at("bbox3d");
    a.bbox3d.center = json_vec(b.at("center"));
    a.bbox3d.half_extents = json_vec(b.at("half_extents"));
    a.bbox3d.rotation = json_quat(b.at("rotation"));
    const json& m = j.at("mask");
    const auto size = m.at("size").get<std::array<int, 2>>();
    a.mask.height = size[0];
    a.mask.width = size[1];
    a.mask.counts = m.at("counts").get<std::vector<std::uint32_t>>();
    a.mask.validate();
    a.tiny = j.at("tiny").get<bool>();
    return a;
}

json scene_json(const SceneAnnotation& s) {
    const CameraIntrinsics& k = s.intrinsics;
    json inst = json::array();
    for (const InstanceAnnotation& a : s.instances) inst.push_back(instance_json(a));
    return {
        {"version", kSceneSchemaVersion},
        {"name", s.name},
        {"image", s.image_file},
        {"dense_map", s.dense_map_file},
        {"camera",
         {{"intrinsics",
           {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"skew", k.skew}, {"width", k.width},
            {"height", k.height}}},
          {"world_to_camera",
           {{"rotation", quat_json(s.extrinsics.world_to_camera.rotation)},
            {"translation", vec_json(s.extrinsics.world_to_camera.translation)}}}}},
        {"instances", inst},
    };
}

void check_version(const json& j, const std::string& what) {
    if (!j.contains("version") || !j["version"].is_number_integer()) {
        throw Error(ErrorCode::parse_error, what + ": missing integer version");
    }
    const int v = j["version"].get<int>();
    if (v != kSceneSchemaVersion) {
        throw Error(ErrorCode::schema_version_mismatch,
                    what + ": version " + std::to_string(v) + ", expected " + std::to_string(kSceneSchemaVersion));
    }
}

SceneAnnotation json_scene(const json& j) {
    check_version(j, "annotation");
    SceneAnnotation s;
    s.name = j.at("name").get<std::string>();
    s.image_file = j.at("image").get<std::string>();
    s.dense_map_file = j.at("dense_map").get<std::string>();
    const json& k = j.at("camera").at("intrinsics");
    s.intrinsics.fx = k.at("fx").get<double>();
    s.intrinsics.fy = k.at("fy").get<double>();
    s.intrinsics.cx = k.at("cx").get<double>();
    s.intrinsics.cy = k.at("cy").get<double>();
    s.intrinsics.skew = k.at("skew").get<double>();
    s.intrinsics.width = k.at("width").get<int>();
    s.intrinsics.height = k.at("height").get<int>();
    const json& e = j.at("camera").at("world_to_camera");
    s.extrinsics.world_to_camera.rotation = json_quat(e.at("rotation"));
    s.extrinsics.world_to_camera.translation = json_vec(e.at("translation"));
    for (const json& a : j.at("instances")) s.instances.push_back(json_instance(a));
    return s;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::parse_error, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::io_error, "write failed: " + path.string());
}

}  // namespace

void export_dataset(std::span<const SceneRecord> scenes, const std::filesystem::path& dir,
                    const std::string& manifest_extra) {
    json extra;
    try {
        extra = json::parse(manifest_extra);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("manifest extra: ") + e.what());
    }
    if (!extra.is_object()) throw Error(ErrorCode::parse_error, "manifest extra must be a JSON object");

    std::set<std::string> names;
    for (const SceneRecord& s : scenes) {
        if (s.annotation.name.empty() || !names.insert(s.annotation.name).second) {
            throw Error(ErrorCode::invalid_argument, "scene names must be unique and nonempty");
        }
    }
    std::error_code ec;
    for (const char* sub : {"images", "dense", "annotations"}) {
        std::filesystem::create_directories(dir / sub, ec);
        if (ec) throw Error(ErrorCode::io_error, "cannot create " + (dir / sub).string() + ": " + ec.message());
    }

    json list = json::array();
    for (const SceneRecord& s : scenes) {
        SceneAnnotation a = s.annotation;
        a.image_file = "images/" + a.name + ".png";
        a.dense_map_file = "dense/" + a.name + ".cvdm";
        write_png(dir / a.image_file, s.image);
        write_dense_raster(dir / a.dense_map_file, s.framebuffer);
        const std::string file = "annotations/" + a.name + ".json";
        write_text(dir / file, scene_json(a).dump(1) + "\n");
        list.push_back({{"name", a.name}, {"annotation", file}});
    }
    json manifest = {{"schema", "cvis-forge-dataset"}, {"version", kSceneSchemaVersion}, {"scenes", list}};
    for (auto it = extra.begin(); it != extra.end(); ++it) {
        if (!manifest.contains(it.key())) manifest[it.key()] = it.value();
    }
    write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

std::vector<SceneAnnotation> import_annotations(const std::filesystem::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    check_version(manifest, "manifest");
    std::vector<SceneAnnotation> out;
    try {
        for (const json& entry : manifest.at("scenes")) {
            const std::filesystem::path file = dir / entry.at("annotation").get<std::string>();
            SceneAnnotation s = json_scene(read_json(file));
            for (const std::string& ref : {s.image_file, s.dense_map_file}) {
                if (!std::filesystem::is_regular_file(dir / ref)) {
                    throw Error(ErrorCode::parse_error, file.string() + " references missing file " + ref);
                }
            }
            out.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("malformed dataset record: ") + e.what());
    }
    return out;
}

}  // namespace cvis
