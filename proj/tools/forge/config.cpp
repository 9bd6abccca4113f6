#include "config.hpp"

#include "cvis/error.hpp"

#include <set>

namespace cvis::forge {

namespace {

// Typed access to one JSON object that remembers which keys were read, so
// leftovers (typos) can be reported.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw UsageError(where_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw UsageError(where_ + "." + key + ": wrong type");
        }
    }

    void get(const char* key, Vec3& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = vec_from_json(j_.at(key));
        } catch (const std::exception&) {
            throw UsageError(where_ + "." + key + ": expected [x, y, z]");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw UsageError(where_ + ": unknown key \"" + it.key() + "\"");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string resolve_input(const std::string& p, const fs::path& base, const std::string& what) {
    if (p.rfind("procedural-", 0) == 0) return p;
    fs::path path(p);
    if (path.is_relative()) path = base / path;
    require_input(path, what);
    return absolute_path(path);
}

}  // namespace

InpaintMethod parse_inpaint_method(const std::string& s) {
    if (s == "pure") return InpaintMethod::pure;
    if (s == "knn") return InpaintMethod::knn;
    if (s == "net") return InpaintMethod::net;
    throw UsageError("inpaint method must be pure, knn or net, got \"" + s + "\"");
}

std::string to_string(InpaintMethod m) {
    switch (m) {
        case InpaintMethod::pure: return "pure";
        case InpaintMethod::knn: return "knn";
        case InpaintMethod::net: return "net";
    }
    return "?";
}

PipelineConfig::PipelineConfig() {
    placement.count = 4;
    noise.subsample = 500;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    Fields top(j, "config");
    int version = 0;
    top.get("version", version);
    if (version != 1) throw UsageError("config: \"version\": 1 required");
    top.get("seed", c.seed);
    top.get("threads", c.threads);
    top.get("scenes", c.scenes);
    if (const json* img = top.child("image")) {
        Fields f(*img, "config.image");
        f.get("width", c.width);
        f.get("height", c.height);
        f.finish();
    }
    if (const json* paths = top.child("paths")) {
        Fields f(*paths, "config.paths");
        f.get("templates", c.templates);
        f.get("backgrounds", c.backgrounds);
        f.get("output", c.output);
        f.finish();
    }
    if (const json* p = top.child("placement")) {
        Fields f(*p, "config.placement");
        f.get("vehicles", c.placement.count);
        f.get("yaw_min", c.placement.yaw_min);
        f.get("yaw_max", c.placement.yaw_max);
        f.get("min_gap", c.placement.min_gap);
        f.get("max_attempts", c.placement.max_attempts);
        if (const json* r = f.child("region")) {
            Fields g(*r, "config.placement.region");
            g.get("x_min", c.placement.region.x_min);
            g.get("x_max", c.placement.region.x_max);
            g.get("y_min", c.placement.region.y_min);
            g.get("y_max", c.placement.region.y_max);
            g.finish();
        }
        f.finish();
    }
    if (const json* fl = top.child("fleet")) {
        Fields f(*fl, "config.fleet");
        f.get("size", c.fleet_size);
        f.get("shape_sigma", c.shape_sigma);
        f.finish();
    }
    if (const json* t = top.child("texture")) {
        Fields f(*t, "config.texture");
        std::string source = "capture", method = to_string(c.inpaint);
        f.get("source", source);
        if (source == "capture") {
            c.texture_source = TextureSource::capture;
        } else if (source == "procedural") {
            c.texture_source = TextureSource::procedural;
        } else {
            throw UsageError("config.texture.source must be capture or procedural");
        }
        f.get("resolution", c.atlas_resolution);
        f.get("inpaint", method);
        c.inpaint = parse_inpaint_method(method);
        f.get("knn_k", c.knn_k);
        f.get("net", c.net);
        f.finish();
    }
    if (const json* n = top.child("noise")) {
        Fields f(*n, "config.noise");
        f.get("pixel_sigma", c.noise.pixel_sigma);
        f.get("point_sigma", c.noise.point_sigma);
        f.get("outlier_fraction", c.noise.outlier_fraction);
        f.get("outlier_min", c.noise.outlier_min);
        f.get("outlier_max", c.noise.outlier_max);
        f.get("subsample", c.noise.subsample);
        f.finish();
    }
    if (const json* r = top.child("ransac")) {
        Fields f(*r, "config.ransac");
        f.get("iterations", c.ransac.iterations);
        f.get("inlier_threshold", c.ransac.inlier_threshold);
        f.get("confidence", c.ransac.confidence);
        f.finish();
    }
    if (const json* a = top.child("a3dp")) {
        Fields f(*a, "config.a3dp");
        std::string mode = "absolute";
        f.get("mode", mode);
        if (mode == "absolute") {
            c.a3dp_mode = A3dpMode::absolute;
        } else if (mode == "relative") {
            c.a3dp_mode = A3dpMode::relative;
        } else {
            throw UsageError("config.a3dp.mode must be absolute or relative");
        }
        f.finish();
    }
    top.finish();

    for (std::string& t : c.templates) t = resolve_input(t, base_dir, "config.paths.templates");
    for (std::string& b : c.backgrounds) b = resolve_input(b, base_dir, "config.paths.backgrounds");
    if (!c.net.empty()) c.net = resolve_input(c.net, base_dir, "config.texture.net");
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    require_input(path, "--config");
    json j;
    try {
        j = read_json_file(path);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return from_json(j, fs::absolute(path).parent_path());
}

void PipelineConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw UsageError("config: " + what);
    };
    need(scenes >= 0, "scenes must be >= 0");
    need(threads >= 1, "threads must be >= 1");
    need(width > 0 && height > 0, "image size must be positive");
    need(fleet_size >= 1, "fleet.size must be >= 1");
    need(shape_sigma >= 0, "fleet.shape_sigma must be >= 0");
    need(atlas_resolution > 0 && atlas_resolution % 6 == 0, "texture.resolution must be a positive multiple of 6");
    need(knn_k >= 1, "texture.knn_k must be >= 1");
    need(inpaint != InpaintMethod::net || !net.empty(), "texture.net is required for the net inpainting method");
    need(placement.count >= 0, "placement.vehicles must be >= 0");
    try {
        placement.validate();
        noise.validate();
        ransac.validate();
    } catch (const Error& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
}

json PipelineConfig::to_json() const {
    const GroundRect& r = placement.region;
    return {
        {"version", 1},
        {"seed", seed},
        {"threads", threads},
        {"scenes", scenes},
        {"image", {{"width", width}, {"height", height}}},
        {"paths", {{"templates", templates}, {"backgrounds", backgrounds}, {"output", output}}},
        {"placement",
         {{"vehicles", placement.count},
          {"yaw_min", placement.yaw_min},
          {"yaw_max", placement.yaw_max},
          {"min_gap", placement.min_gap},
          {"max_attempts", placement.max_attempts},
          {"region", {{"x_min", r.x_min}, {"x_max", r.x_max}, {"y_min", r.y_min}, {"y_max", r.y_max}}}}},
        {"fleet", {{"size", fleet_size}, {"shape_sigma", shape_sigma}}},
        {"texture",
         {{"source", texture_source == TextureSource::capture ? "capture" : "procedural"},
          {"resolution", atlas_resolution},
          {"inpaint", to_string(inpaint)},
          {"knn_k", knn_k},
          {"net", net}}},
        {"noise",
         {{"pixel_sigma", noise.pixel_sigma},
          {"point_sigma", noise.point_sigma},
          {"outlier_fraction", noise.outlier_fraction},
          {"outlier_min", vec_to_json(noise.outlier_min)},
          {"outlier_max", vec_to_json(noise.outlier_max)},
          {"subsample", noise.subsample}}},
        {"ransac",
         {{"iterations", ransac.iterations},
          {"inlier_threshold", ransac.inlier_threshold},
          {"confidence", ransac.confidence}}},
        {"a3dp", {{"mode", a3dp_mode == A3dpMode::absolute ? "absolute" : "relative"}}},
    };
}

}  // namespace cvis::forge
