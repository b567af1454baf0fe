#include "vicsim/eval.hpp"

#include <algorithm>
#include <cmath>

namespace vicsim::eval {

namespace {

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
    double a = 0;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        a += p.x() * q.y() - q.x() * p.y();
    }
    return std::abs(a) / 2.0;
}

// Sutherland-Hodgman clip of convex subject against convex clip polygon
// (both counter-clockwise).
std::vector<Eigen::Vector2d> clip_convex(std::vector<Eigen::Vector2d> subject,
                                         const std::array<Eigen::Vector2d, 4>& clip) {
    for (std::size_t e = 0; e < 4 && !subject.empty(); ++e) {
        const Eigen::Vector2d a = clip[e];
        const Eigen::Vector2d b = clip[(e + 1) % 4];
        const Eigen::Vector2d edge = b - a;
        auto inside = [&](const Eigen::Vector2d& p) {
            return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()) >= -1e-12;
        };
        auto intersect = [&](const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
            const Eigen::Vector2d d = q - p;
            const double denom = edge.x() * d.y() - edge.y() * d.x();
            const double t = (edge.x() * (a.y() - p.y()) - edge.y() * (a.x() - p.x())) / denom;
            return Eigen::Vector2d(p + t * d);
        };
        std::vector<Eigen::Vector2d> out;
        const std::size_t n = subject.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::Vector2d& cur = subject[i];
            const Eigen::Vector2d& nxt = subject[(i + 1) % n];
            const bool ci = inside(cur), ni = inside(nxt);
            if (ci) {
                out.push_back(cur);
                if (!ni) out.push_back(intersect(cur, nxt));
            } else if (ni) {
                out.push_back(intersect(cur, nxt));
            }
        }
        subject = std::move(out);
    }
    return subject;
}

// KITTI-style 40-point interpolated AP from pooled (score, tp) labels.
double ap_from_labels(std::vector<std::pair<double, bool>> labels, int num_gt) {
    if (num_gt <= 0) return 0.0;
    std::stable_sort(labels.begin(), labels.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& [score, is_tp] : labels) {
        (void)score;
        is_tp ? ++tp : ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / num_gt);
    }
    double ap = 0;
    for (int i = 1; i <= 40; ++i) {
        const double r = static_cast<double>(i) / 40.0;
        double best = 0;
        for (std::size_t k = 0; k < recall.size(); ++k)
            if (recall[k] >= r) best = std::max(best, precision[k]);
        ap += best;
    }
    return ap / 40.0;
}

} // namespace

std::array<Eigen::Vector2d, 4> bev_corners(const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = b.l / 2, hw = b.w / 2;
    std::array<Eigen::Vector2d, 4> out;
    const double lx[4] = {hl, -hl, -hl, hl};
    const double ly[4] = {hw, hw, -hw, -hw};
    for (int i = 0; i < 4; ++i)
        out[static_cast<std::size_t>(i)] =
            Eigen::Vector2d(b.x + c * lx[i] - s * ly[i], b.y + s * lx[i] + c * ly[i]);
    return out;
}

double iou_bev(const Box3D& a, const Box3D& b) {
    if (a.l <= 0 || a.w <= 0 || b.l <= 0 || b.w <= 0) throw ConfigError("iou_bev: non-positive size");
    const auto ca = bev_corners(a);
    const auto cb = bev_corners(b);
    std::vector<Eigen::Vector2d> subject(ca.begin(), ca.end());
    const double inter = polygon_area(clip_convex(std::move(subject), cb));
    const double areas = a.l * a.w + b.l * b.w - inter;
    return areas > 0 ? inter / areas : 0.0;
}

double iou_3d(const Box3D& a, const Box3D& b) {
    const auto ca = bev_corners(a);
    const auto cb = bev_corners(b);
    std::vector<Eigen::Vector2d> subject(ca.begin(), ca.end());
    const double bev_inter = polygon_area(clip_convex(std::move(subject), cb));
    const double za0 = a.z - a.h / 2, za1 = a.z + a.h / 2;
    const double zb0 = b.z - b.h / 2, zb1 = b.z + b.h / 2;
    const double dz = std::max(0.0, std::min(za1, zb1) - std::max(za0, zb0));
    const double inter = bev_inter * dz;
    const double uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::vector<RangeBucket> default_buckets() {
    return {{"overall", 0.0, 100.0}, {"0-30m", 0.0, 30.0}, {"30-50m", 30.0, 50.0},
            {"50-100m", 50.0, 100.0}};
}

std::map<std::string, double> ap_compute(const std::vector<Detection>& dets,
                                         const std::vector<Box3D>& gts, Metric metric,
                                         double iou_thresh, const std::vector<RangeBucket>& buckets) {
    return ap_compute_scenes({dets}, {gts}, metric, iou_thresh, buckets);
}

std::map<std::string, double> ap_compute_scenes(const std::vector<std::vector<Detection>>& dets,
                                                const std::vector<std::vector<Box3D>>& gts,
                                                Metric metric, double iou_thresh,
                                                const std::vector<RangeBucket>& buckets) {
    if (dets.size() != gts.size()) throw ConfigError("ap_compute: scene count mismatch");
    auto iou = [&](const Box3D& a, const Box3D& b) {
        return metric == Metric::BEV ? iou_bev(a, b) : iou_3d(a, b);
    };

    struct Labeled {
        double score;
        bool tp;
        double dist; // matched GT distance if tp, own distance otherwise
    };
    std::vector<Labeled> labeled;
    std::vector<double> gt_dists;
    for (std::size_t s = 0; s < dets.size(); ++s) {
        for (const auto& g : gts[s]) gt_dists.push_back(g.bev_distance());
        std::vector<std::size_t> order(dets[s].size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return dets[s][a].score > dets[s][b].score;
        });
        std::vector<bool> taken(gts[s].size(), false);
        for (std::size_t i : order) {
            const Detection& d = dets[s][i];
            int best = -1;
            double best_iou = iou_thresh;
            for (std::size_t g = 0; g < gts[s].size(); ++g) {
                if (taken[g]) continue;
                const double v = iou(d.box, gts[s][g]);
                if (v >= best_iou) {
                    best_iou = v;
                    best = static_cast<int>(g);
                }
            }
            if (best >= 0) {
                taken[static_cast<std::size_t>(best)] = true;
                labeled.push_back({d.score, true, gts[s][static_cast<std::size_t>(best)].bev_distance()});
            } else {
                labeled.push_back({d.score, false, d.box.bev_distance()});
            }
        }
    }

    std::map<std::string, double> result;
    for (const auto& bucket : buckets) {
        int num_gt = 0;
        for (double d : gt_dists)
            if (d >= bucket.min_m && d < bucket.max_m) ++num_gt;
        if (num_gt == 0) continue; // AP undefined, bucket absent
        std::vector<std::pair<double, bool>> labels;
        for (const auto& l : labeled)
            if (l.dist >= bucket.min_m && l.dist < bucket.max_m) labels.emplace_back(l.score, l.tp);
        result[bucket.name] = ap_from_labels(std::move(labels), num_gt);
    }
    return result;
}

std::vector<Detection> nms_bev(std::vector<Detection> dets, double iou_thresh) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> keep;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : keep)
            if (iou_bev(d.box, k.box) >= iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) keep.push_back(d);
    }
    return keep;
}

} // namespace vicsim::eval
