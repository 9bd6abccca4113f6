#include "common.hpp"

#include "cvis/error.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

namespace cvis::forge {

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::parse_error, "expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json pose_to_json(const Pose& p) {
    const Quat& q = p.rotation;
    return {{"rotation", {q.w(), q.x(), q.y(), q.z()}}, {"translation", vec_to_json(p.translation)}};
}

Pose pose_from_json(const json& j) {
    const json& r = j.at("rotation");
    if (!r.is_array() || r.size() != 4) throw Error(ErrorCode::parse_error, "expected a quaternion [w, x, y, z]");
    Pose p;
    p.rotation = Quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()).normalized();
    p.translation = vec_from_json(j.at("translation"));
    return p;
}

json intrinsics_to_json(const CameraIntrinsics& k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"skew", k.skew}, {"width", k.width},
            {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.skew = j.value("skew", 0.0);
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
}

json light_to_json(const DirectionalLight& l) {
    return {{"direction", vec_to_json(l.direction)}, {"shadow_strength", l.shadow_strength}, {"ambient", l.ambient}};
}

DirectionalLight light_from_json(const json& j) {
    DirectionalLight l;
    l.direction = vec_from_json(j.at("direction"));
    l.shadow_strength = j.value("shadow_strength", l.shadow_strength);
    l.ambient = j.value("ambient", l.ambient);
    l.validate();
    return l;
}

json dims_to_json(const Dimensions& d) { return {{"w", d.w}, {"h", d.h}, {"l", d.l}}; }

Dimensions dims_from_json(const json& j) {
    return {j.at("w").get<double>(), j.at("h").get<double>(), j.at("l").get<double>()};
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::parse_error, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::io_error, "write failed: " + path.string());
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(1) + "\n"); }

void check_version(const json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer()) {
        throw Error(ErrorCode::parse_error, what + ": missing integer version");
    }
    if (j["version"].get<int>() != 1) {
        throw Error(ErrorCode::schema_version_mismatch,
                    what + ": version " + std::to_string(j["version"].get<int>()) + ", expected 1");
    }
}

void require_input(const fs::path& p, const std::string& flag) {
    if (p.empty()) throw UsageError(flag + " is required");
    if (!fs::exists(p)) throw UsageError(flag + ": no such file: " + p.string());
}

void require_output_parent(const fs::path& p, const std::string& flag) {
    if (p.empty()) throw UsageError(flag + " is required");
    const fs::path parent = fs::absolute(p).parent_path();
    if (!fs::is_directory(parent)) throw UsageError(flag + ": directory does not exist: " + parent.string());
}

std::string absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::shared_ptr<const VehicleTemplate> load_template_ref(const std::string& ref) {
    const std::string prefix = "procedural-";
    if (ref.rfind(prefix, 0) == 0) {
        try {
            std::size_t used = 0;
            const unsigned long long seed = std::stoull(ref.substr(prefix.size()), &used);
            if (used == ref.size() - prefix.size()) {
                return std::make_shared<const VehicleTemplate>(make_procedural_template(seed));
            }
        } catch (const std::exception&) {
        }
        throw Error(ErrorCode::parse_error, "bad template reference: " + ref);
    }
    return std::make_shared<const VehicleTemplate>(load_mesh(ref));
}

int resolve_threads(std::optional<int> flag, int config_value) {
    int n = config_value;
    if (flag) {
        n = *flag;
    } else if (const char* env = std::getenv("CVIS_FORGE_THREADS"); env && *env) {
        try {
            std::size_t used = 0;
            n = std::stoi(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument(env);
        } catch (const std::exception&) {
            throw UsageError(std::string("CVIS_FORGE_THREADS is not an integer: ") + env);
        }
    }
    if (n < 1) throw UsageError("thread count must be at least 1");
    return n;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int workers = std::min(threads, n);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<int> next{0};
        std::atomic<bool> failed{false};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int i = next++; i < n && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[static_cast<std::size_t>(i)] = std::current_exception();
                        failed = true;
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(seed ^ mix(a ^ mix(b)));
}

}  // namespace cvis::forge
