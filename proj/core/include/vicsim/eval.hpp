#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vicsim/geometry.hpp"

namespace vicsim::eval {

struct Box3D {
    double x = 0, y = 0, z = 0; // center (m)
    double l = 1, w = 1, h = 1; // size (m)
    double yaw = 0;             // rad

    double bev_distance() const { return std::sqrt(x * x + y * y); }
};

struct Detection {
    Box3D box;
    double score = 0;
    int class_id = 0;
};

enum class Metric { BEV, ThreeD };

// BEV footprint corners, counter-clockwise.
std::array<Eigen::Vector2d, 4> bev_corners(const Box3D& b);

// Rotated-rectangle IoU via convex polygon clipping.
double iou_bev(const Box3D& a, const Box3D& b);

// BEV intersection x vertical overlap over union of volumes.
double iou_3d(const Box3D& a, const Box3D& b);

struct RangeBucket {
    std::string name;
    double min_m = 0, max_m = 0; // [min, max)
};

// The evaluation range buckets: Overall (0-100m), 0-30m, 30-50m, 50-100m.
std::vector<RangeBucket> default_buckets();

// Per-bucket AP at a fixed IoU threshold. Greedy matching in descending
// score, each ground truth matched at most once, 40-point recall
// interpolation. Buckets key on ground-truth BEV distance from the origin;
// unmatched detections bucket by their own distance. Buckets without ground
// truth are absent from the result.
std::map<std::string, double> ap_compute(const std::vector<Detection>& dets,
                                         const std::vector<Box3D>& gts, Metric metric,
                                         double iou_thresh = 0.5,
                                         const std::vector<RangeBucket>& buckets = default_buckets());

// Multi-scene variant: detections and ground truths per scene, matching done
// per scene, the precision-recall curve pooled across scenes.
std::map<std::string, double> ap_compute_scenes(
    const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Box3D>>& gts,
    Metric metric, double iou_thresh = 0.5,
    const std::vector<RangeBucket>& buckets = default_buckets());

// Greedy rotated-IoU NMS in BEV; input need not be sorted.
std::vector<Detection> nms_bev(std::vector<Detection> dets, double iou_thresh);

} // namespace vicsim::eval
