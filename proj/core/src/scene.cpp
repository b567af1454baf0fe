#include "vicsim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"

namespace vicsim::scene {

using nlohmann::json;

geo::CameraParams build_camera(const CameraSpec& spec, int image_w, int image_h,
                               double capture_time) {
    const double yaw = spec.yaw_deg * M_PI / 180.0;
    const double pitch = spec.pitch_deg * M_PI / 180.0;
    const Eigen::Vector3d forward(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch),
                                  -std::sin(pitch));
    Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);

    geo::CameraParams cam;
    cam.R.row(0) = right;
    cam.R.row(1) = down;
    cam.R.row(2) = forward;
    cam.t = -cam.R * spec.position;
    cam.K << spec.focal_px, 0, image_w / 2.0, 0, spec.focal_px, image_h / 2.0, 0, 0, 1;
    cam.capture_time = capture_time;
    geo::validate_camera(cam);
    return cam;
}

ScenarioConfig default_config() {
    ScenarioConfig cfg;
    cfg.veh_cam = CameraSpec{{0.0, 0.0, 1.6}, 0.0, 2.0, 48.0};
    // Roadside camera: elevated, looking back down at the spawn region.
    cfg.inf_cam = CameraSpec{{30.0, 10.0, 6.0}, -144.5, 11.0, 48.0};
    cfg.grid.origin = Eigen::Vector3d(4.0, -8.0, 0.0);
    cfg.grid.voxel_size = Eigen::Vector3d(0.8, 0.8, 1.0);
    cfg.grid.counts = {28, 20, 2};
    cfg.model.channels = 16;
    cfg.model.scales = 4;
    cfg.model.c2 = 64;
    cfg.model.grid_nz = 2;
    cfg.link_cfg.bandwidth_bps = 1e7;
    cfg.link_cfg.latency_s = 0.01;
    return cfg;
}

void validate_scenario(const ScenarioConfig& cfg) {
    if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects)
        throw ConfigError("scenario: bad object count range");
    if (cfg.spawn_x_max <= cfg.spawn_x_min || cfg.spawn_y_max <= cfg.spawn_y_min)
        throw ConfigError("scenario: degenerate spawn region");
    if (cfg.speed_max < cfg.speed_min || cfg.speed_min < 0)
        throw ConfigError("scenario: bad speed range");
    if (cfg.image_h % 32 != 0 || cfg.image_w % 32 != 0)
        throw ConfigError("scenario: image size must be divisible by 32");
    geo::validate_grid(cfg.grid);
    emiff::validate_config(cfg.model);
    if (cfg.model.grid_nz != cfg.grid.counts[2])
        throw ConfigError("scenario: model grid_nz " + std::to_string(cfg.model.grid_nz) +
                          " != grid N_z " + std::to_string(cfg.grid.counts[2]));
}

namespace {

json cam_to_json(const CameraSpec& c) {
    return json{{"position", {c.position.x(), c.position.y(), c.position.z()}},
                {"yaw_deg", c.yaw_deg},
                {"pitch_deg", c.pitch_deg},
                {"focal_px", c.focal_px}};
}

CameraSpec cam_from_json(const json& j, CameraSpec base) {
    if (j.contains("position")) {
        auto p = j.at("position");
        base.position = Eigen::Vector3d(p.at(0), p.at(1), p.at(2));
    }
    base.yaw_deg = j.value("yaw_deg", base.yaw_deg);
    base.pitch_deg = j.value("pitch_deg", base.pitch_deg);
    base.focal_px = j.value("focal_px", base.focal_px);
    return base;
}

} // namespace

std::string config_to_json_text(const ScenarioConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["objects"] = {{"min", cfg.min_objects}, {"max", cfg.max_objects}};
    j["spawn"] = {{"x_min", cfg.spawn_x_min},
                  {"x_max", cfg.spawn_x_max},
                  {"y_min", cfg.spawn_y_min},
                  {"y_max", cfg.spawn_y_max}};
    j["speed"] = {{"min", cfg.speed_min}, {"max", cfg.speed_max}};
    j["image"] = {{"h", cfg.image_h}, {"w", cfg.image_w}};
    j["delta_t"] = cfg.delta_t;
    j["pose_noise"] = {{"rot_deg", cfg.rot_noise_deg}, {"trans_m", cfg.trans_noise_m}};
    j["veh_cam"] = cam_to_json(cfg.veh_cam);
    j["inf_cam"] = cam_to_json(cfg.inf_cam);
    j["grid"] = {{"origin", {cfg.grid.origin.x(), cfg.grid.origin.y(), cfg.grid.origin.z()}},
                 {"voxel_size",
                  {cfg.grid.voxel_size.x(), cfg.grid.voxel_size.y(), cfg.grid.voxel_size.z()}},
                 {"counts", {cfg.grid.counts[0], cfg.grid.counts[1], cfg.grid.counts[2]}}};
    j["model"] = {{"channels", cfg.model.channels},
                  {"scales", cfg.model.scales},
                  {"c2", cfg.model.c2},
                  {"ccr", cfg.model.ccr},
                  {"scr", cfg.model.scr},
                  {"score_thresh", cfg.model.score_thresh},
                  {"nms_iou", cfg.model.nms_iou}};
    j["fusion"] = cfg.fusion == FusionLevel::Voxel ? "voxel" : "bev";
    j["link"] = {{"bandwidth_bps", cfg.link_cfg.bandwidth_bps}, {"latency_s", cfg.link_cfg.latency_s}};
    j["wire_dtype"] = cfg.wire_dtype == link::WireDtype::F32 ? "f32" : "f16";
    j["train"] = {{"scenes", cfg.train_scenes}, {"steps", cfg.train_steps}, {"lr", cfg.learn_rate}};
    return j.dump(2);
}

ScenarioConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ScenarioConfig cfg = default_config();
    try {
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("objects")) {
            cfg.min_objects = j["objects"].value("min", cfg.min_objects);
            cfg.max_objects = j["objects"].value("max", cfg.max_objects);
        }
        if (j.contains("spawn")) {
            cfg.spawn_x_min = j["spawn"].value("x_min", cfg.spawn_x_min);
            cfg.spawn_x_max = j["spawn"].value("x_max", cfg.spawn_x_max);
            cfg.spawn_y_min = j["spawn"].value("y_min", cfg.spawn_y_min);
            cfg.spawn_y_max = j["spawn"].value("y_max", cfg.spawn_y_max);
        }
        if (j.contains("speed")) {
            cfg.speed_min = j["speed"].value("min", cfg.speed_min);
            cfg.speed_max = j["speed"].value("max", cfg.speed_max);
        }
        if (j.contains("image")) {
            cfg.image_h = j["image"].value("h", cfg.image_h);
            cfg.image_w = j["image"].value("w", cfg.image_w);
        }
        cfg.delta_t = j.value("delta_t", cfg.delta_t);
        if (j.contains("pose_noise")) {
            cfg.rot_noise_deg = j["pose_noise"].value("rot_deg", cfg.rot_noise_deg);
            cfg.trans_noise_m = j["pose_noise"].value("trans_m", cfg.trans_noise_m);
        }
        if (j.contains("veh_cam")) cfg.veh_cam = cam_from_json(j["veh_cam"], cfg.veh_cam);
        if (j.contains("inf_cam")) cfg.inf_cam = cam_from_json(j["inf_cam"], cfg.inf_cam);
        if (j.contains("grid")) {
            const json& g = j["grid"];
            if (g.contains("origin"))
                cfg.grid.origin =
                    Eigen::Vector3d(g["origin"].at(0), g["origin"].at(1), g["origin"].at(2));
            if (g.contains("voxel_size"))
                cfg.grid.voxel_size = Eigen::Vector3d(g["voxel_size"].at(0), g["voxel_size"].at(1),
                                                      g["voxel_size"].at(2));
            if (g.contains("counts"))
                cfg.grid.counts = {g["counts"].at(0), g["counts"].at(1), g["counts"].at(2)};
        }
        if (j.contains("model")) {
            const json& m = j["model"];
            cfg.model.channels = m.value("channels", cfg.model.channels);
            cfg.model.scales = m.value("scales", cfg.model.scales);
            cfg.model.c2 = m.value("c2", cfg.model.c2);
            cfg.model.ccr = m.value("ccr", cfg.model.ccr);
            cfg.model.scr = m.value("scr", cfg.model.scr);
            cfg.model.score_thresh = m.value("score_thresh", cfg.model.score_thresh);
            cfg.model.nms_iou = m.value("nms_iou", cfg.model.nms_iou);
        }
        if (j.contains("fusion")) {
            const std::string f = j["fusion"];
            if (f == "voxel")
                cfg.fusion = FusionLevel::Voxel;
            else if (f == "bev")
                cfg.fusion = FusionLevel::Bev;
            else
                throw ConfigError("config: fusion must be \"voxel\" or \"bev\", got \"" + f + "\"");
        }
        if (j.contains("link")) {
            cfg.link_cfg.bandwidth_bps = j["link"].value("bandwidth_bps", cfg.link_cfg.bandwidth_bps);
            cfg.link_cfg.latency_s = j["link"].value("latency_s", cfg.link_cfg.latency_s);
        }
        if (j.contains("wire_dtype")) {
            const std::string d = j["wire_dtype"];
            if (d == "f32")
                cfg.wire_dtype = link::WireDtype::F32;
            else if (d == "f16")
                cfg.wire_dtype = link::WireDtype::F16;
            else
                throw ConfigError("config: wire_dtype must be \"f32\" or \"f16\"");
        }
        if (j.contains("train")) {
            cfg.train_scenes = j["train"].value("scenes", cfg.train_scenes);
            cfg.train_steps = j["train"].value("steps", cfg.train_steps);
            cfg.learn_rate = j["train"].value("lr", cfg.learn_rate);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.model.grid_nz = cfg.grid.counts[2];
    validate_scenario(cfg);
    return cfg;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_fingerprint(const ScenarioConfig& cfg) {
    const std::string text = config_to_json_text(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

Scene generate_scene(const ScenarioConfig& cfg, std::uint64_t seed) {
    validate_scenario(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);

    Scene sc;
    sc.veh_cam = build_camera(cfg.veh_cam, cfg.image_w, cfg.image_h, 0.0);
    sc.inf_cam = build_camera(cfg.inf_cam, cfg.image_w, cfg.image_h, -cfg.delta_t);

    const int count = count_dist(rng);
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            geo::SceneObject obj;
            obj.center.x() = cfg.spawn_x_min + uni(rng) * (cfg.spawn_x_max - cfg.spawn_x_min);
            obj.center.y() = cfg.spawn_y_min + uni(rng) * (cfg.spawn_y_max - cfg.spawn_y_min);
            obj.size = Eigen::Vector3d(3.5 + 0.8 * uni(rng), 1.5 + 0.3 * uni(rng),
                                       1.4 + 0.3 * uni(rng));
            obj.center.z() = obj.size.z() / 2.0;
            // Road-aligned heading, half the traffic oncoming.
            obj.yaw = geo::wrap_angle((uni(rng) < 0.5 ? 0.0 : M_PI) + (uni(rng) - 0.5) * 0.4);
            const double speed = cfg.speed_min + uni(rng) * (cfg.speed_max - cfg.speed_min);
            obj.velocity = Eigen::Vector2d(speed * std::cos(obj.yaw), speed * std::sin(obj.yaw));
            obj.class_id = 0;

            // Disjoint BEV footprints, with a clearance margin.
            eval::Box3D candidate = to_box(obj);
            candidate.l += 0.6;
            candidate.w += 0.6;
            bool overlaps = false;
            for (const auto& other : sc.objects)
                if (eval::iou_bev(candidate, to_box(other)) > 0.0) {
                    overlaps = true;
                    break;
                }
            if (!overlaps) {
                sc.objects.push_back(obj);
                placed = true;
            }
        }
        if (!placed)
            throw ConfigError("generate_scene: spawn region too small for " +
                              std::to_string(count) + " objects");
    }
    return sc;
}

eval::Box3D to_box(const geo::SceneObject& obj) {
    eval::Box3D b;
    b.x = obj.center.x();
    b.y = obj.center.y();
    b.z = obj.center.z();
    b.l = obj.size.x();
    b.w = obj.size.y();
    b.h = obj.size.z();
    b.yaw = obj.yaw;
    return b;
}

namespace {

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k > 1 ? k - 1 : k);
    return hull;
}

bool inside_hull(const std::vector<Eigen::Vector2d>& hull, double x, double y) {
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Eigen::Vector2d& a = hull[i];
        const Eigen::Vector2d& b = hull[(i + 1) % hull.size()];
        if ((b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x()) < 0) return false;
    }
    return true;
}

} // namespace

Tensor<float> rasterize(const std::vector<geo::SceneObject>& objects, const geo::CameraParams& cam,
                        int image_h, int image_w) {
    // Zero background: with zero-initialized conv biases the extracted
    // features stay localized to object pixels, which keeps the voxel
    // classification task well-conditioned at toy scale.
    Tensor<float> img({3, image_h, image_w});

    // Far-to-near painter's order by center depth.
    std::vector<std::size_t> order(objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double za = (cam.R * objects[a].center + cam.t).z();
        const double zb = (cam.R * objects[b].center + cam.t).z();
        return za > zb;
    });

    for (std::size_t i : order) {
        const geo::SceneObject& obj = objects[i];
        const double depth = (cam.R * obj.center + cam.t).z();
        if (depth <= geo::kDepthEpsilon) continue; // behind the camera

        // Project the eight box corners.
        std::vector<Eigen::Vector3d> corners;
        const double c = std::cos(obj.yaw), s = std::sin(obj.yaw);
        for (int dx = -1; dx <= 1; dx += 2)
            for (int dy = -1; dy <= 1; dy += 2)
                for (int dz = -1; dz <= 1; dz += 2) {
                    const double lx = dx * obj.size.x() / 2, ly = dy * obj.size.y() / 2;
                    corners.emplace_back(obj.center.x() + c * lx - s * ly,
                                         obj.center.y() + s * lx + c * ly,
                                         obj.center.z() + dz * obj.size.z() / 2);
                }
        const geo::ProjectionResult proj = geo::project_points(corners, cam);
        bool all_front = true;
        std::vector<Eigen::Vector2d> pts;
        for (std::size_t kcorner = 0; kcorner < corners.size(); ++kcorner) {
            if (!proj.valid[kcorner]) {
                all_front = false;
                break;
            }
            pts.push_back(proj.pixels[kcorner]);
        }
        if (!all_front) continue;

        const std::vector<Eigen::Vector2d> hull = convex_hull(std::move(pts));
        if (hull.size() < 3) continue;
        double xmin = 1e9, xmax = -1e9, ymin = 1e9, ymax = -1e9;
        for (const auto& p : hull) {
            xmin = std::min(xmin, p.x());
            xmax = std::max(xmax, p.x());
            ymin = std::min(ymin, p.y());
            ymax = std::max(ymax, p.y());
        }
        const int x0 = std::max(0, static_cast<int>(std::floor(xmin)));
        const int x1 = std::min(image_w - 1, static_cast<int>(std::ceil(xmax)));
        const int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
        const int y1 = std::min(image_h - 1, static_cast<int>(std::ceil(ymax)));

        const float shade = static_cast<float>(0.9 / (1.0 + 0.04 * depth));
        const float ch[3] = {shade, 0.7f * shade, 0.25f + 0.4f * shade};
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (inside_hull(hull, x + 0.5, y + 0.5))
                    for (int cidx = 0; cidx < 3; ++cidx) img.at(cidx, y, x) = ch[cidx];
    }
    return img;
}

} // namespace vicsim::scene
