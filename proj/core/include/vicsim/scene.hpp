#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vicsim/emiff.hpp"
#include "vicsim/geometry.hpp"
#include "vicsim/link.hpp"

namespace vicsim::scene {

// Pose + intrinsics spec from which a CameraParams is built. Camera looks
// along +x at yaw 0; pitch > 0 tilts down.
struct CameraSpec {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
    double focal_px = 48.0;
};

geo::CameraParams build_camera(const CameraSpec& spec, int image_w, int image_h,
                               double capture_time = 0.0);

enum class FusionLevel { Voxel, Bev };

// Every experiment knob: scene content, cameras, asynchrony and pose noise,
// voxel grid, model and compression settings, link model.
struct ScenarioConfig {
    std::uint64_t seed = 0;

    int min_objects = 2;
    int max_objects = 4;
    double spawn_x_min = 6.0, spawn_x_max = 26.0;
    double spawn_y_min = -8.0, spawn_y_max = 8.0;
    double speed_min = 0.0, speed_max = 8.0;

    int image_h = 64, image_w = 64; // divisible by 32

    double delta_t = 0.0;          // capture-time gap (s), infrastructure earlier
    double rot_noise_deg = 0.0;    // infrastructure pose noise
    double trans_noise_m = 0.0;

    CameraSpec veh_cam;
    CameraSpec inf_cam;

    geo::VoxelGridSpec grid;
    emiff::ModelConfig model;
    FusionLevel fusion = FusionLevel::Voxel;
    link::LinkConfig link_cfg;
    link::WireDtype wire_dtype = link::WireDtype::F32;

    int train_scenes = 4;
    int train_steps = 300;
    double learn_rate = 0.06;
};

// Small CPU-trainable defaults; the paper-scale channel counts (C=64,
// C2=256) are reachable by overriding `model` in the config file.
ScenarioConfig default_config();

void validate_scenario(const ScenarioConfig& cfg);

ScenarioConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ScenarioConfig& cfg);
ScenarioConfig load_config(const std::string& path);

// FNV-1a hash of the canonical JSON dump; identifies the inputs of a run.
std::string config_fingerprint(const ScenarioConfig& cfg);

struct Scene {
    std::vector<geo::SceneObject> objects;
    geo::CameraParams veh_cam;
    geo::CameraParams inf_cam;
};

// Deterministic per seed. Objects are placed with disjoint BEV footprints;
// throws ConfigError when the spawn region cannot host the requested count.
Scene generate_scene(const ScenarioConfig& cfg, std::uint64_t seed);

// Painter's-order blob rasterizer: each visible object is a filled convex
// footprint whose brightness decays with depth over a zero background.
Tensor<float> rasterize(const std::vector<geo::SceneObject>& objects, const geo::CameraParams& cam,
                        int image_h, int image_w);

eval::Box3D to_box(const geo::SceneObject& obj);

} // namespace vicsim::scene
