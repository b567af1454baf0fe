#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vicsim/scene.hpp"

namespace vicsim::harness {

struct ExperimentResult {
    std::map<std::string, double> ap_3d;  // per bucket; absent = undefined
    std::map<std::string, double> ap_bev;
    double ab_total_bytes = 0;   // header + payload
    double ab_payload_bytes = 0;
    double arrival_delay_s = 0;
    double wall_time_s = 0;      // informational, never written to CSV
    std::string fingerprint;
    std::vector<std::uint8_t> packet; // transmitted frame, .vicf layout (single-scene runs)
    std::vector<eval::Detection> detections;
    std::vector<eval::Box3D> ground_truth;
};

// One full cooperative inference pass in the transmission order:
// extract -> compress -> serialize -> transmit -> deserialize -> decompress
// -> cross attention -> channel masking -> voxel sampling -> fusion -> BEV
// neck -> head -> decode/NMS -> AP. With `dump_shapes`, stage tensor shapes
// go to stderr.
ExperimentResult run_pipeline(const scene::ScenarioConfig& cfg,
                              const ckpt::Params<float>& params, bool dump_shapes = false);

// Multi-scene evaluation with a pooled precision-recall curve.
ExperimentResult run_pipeline_multi(const scene::ScenarioConfig& cfg,
                                    const ckpt::Params<float>& params, int num_scenes);

struct TrainResult {
    ckpt::Params<float> params;
    std::vector<double> loss_trace;
};

// Full-batch gradient descent on the combined detection loss over a fixed
// seeded scene set (no link stage; the f32 wire round trip is bit-exact).
// Throws NumericError naming the step on non-finite loss.
TrainResult train_toy(const scene::ScenarioConfig& cfg, int steps, double lr, std::uint64_t seed);

struct CompressionRow {
    int ccr = 1, scr = 1;
    double ap3d_overall = -1; // < 0 = undefined
    double ab_total_bytes = 0;
    double ab_payload_bytes = 0;
    bool per_rate_trained = false;
};

// One row per (ccr, scr) pair; weights fine-tuned per rate when
// train_steps > 0 (flagged in the row).
std::vector<CompressionRow> sweep_compression(const scene::ScenarioConfig& cfg,
                                              const std::vector<int>& ccr_list,
                                              const std::vector<int>& scr_list, int train_steps,
                                              int eval_scenes = 8);

struct PoseNoiseRow {
    double rot_noise_deg = 0;
    double mean_ap3d = 0;
    double std_ap3d = 0;
    int seeds = 0;
};

std::vector<PoseNoiseRow> sweep_pose_noise(const scene::ScenarioConfig& cfg,
                                           const ckpt::Params<float>& params,
                                           const std::vector<double>& noise_deg,
                                           int seeds_per_point);

// Spearman rank correlation with average ranks; 0 when either side has zero
// rank variance.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// ---- output files -----------------------------------------------------------

// Column order: fingerprint,seed,ccr,scr,fusion,ab_total_bytes,
// ab_payload_bytes,arrival_delay_s,ap3d_overall,ap3d_0_30,ap3d_30_50,
// ap3d_50_100,apbev_overall,apbev_0_30,apbev_30_50,apbev_50_100
std::string result_csv(const scene::ScenarioConfig& cfg, const ExperimentResult& r);

// Column order: ccr,scr,rate,ap3d_overall,ab_total_bytes,ab_payload_bytes,per_rate_trained
std::string compression_csv(const std::vector<CompressionRow>& rows);

// Column order: rot_noise_deg,mean_ap3d,std_ap3d,seeds
std::string pose_noise_csv(const std::vector<PoseNoiseRow>& rows);

std::string loss_trace_csv(const std::vector<double>& trace);

// Minimal SVG line plot of (x, y) series.
std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                          const std::string& x_label, const std::string& y_label);

void write_file(const std::string& path, const std::string& content);

} // namespace vicsim::harness
