#include "vicsim/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace vicsim::harness {

namespace {

struct SceneData {
    scene::Scene sc;
    Tensor<float> veh_img;
    Tensor<float> inf_img;
    geo::CameraParams inf_cam_tx; // pose after error injection; what goes on the wire
    std::vector<eval::Box3D> gts;
    emiff::Targets targets;
};

SceneData make_scene_data(const scene::ScenarioConfig& cfg, std::uint64_t seed) {
    SceneData sd;
    sd.sc = scene::generate_scene(cfg, seed);
    sd.veh_img = scene::rasterize(sd.sc.objects, sd.sc.veh_cam, cfg.image_h, cfg.image_w);
    // The infrastructure frame was captured delta_t earlier: render the
    // objects rolled back along their velocities.
    const std::vector<geo::SceneObject> inf_objects =
        geo::displace_objects(sd.sc.objects, -cfg.delta_t);
    sd.inf_img = scene::rasterize(inf_objects, sd.sc.inf_cam, cfg.image_h, cfg.image_w);
    sd.inf_cam_tx =
        geo::inject_pose_error(sd.sc.inf_cam, cfg.rot_noise_deg, cfg.trans_noise_m, seed ^ 0x9e3779b9ull);
    for (const auto& o : sd.sc.objects) sd.gts.push_back(scene::to_box(o));
    sd.targets = emiff::assign_targets(cfg.model, cfg.grid, sd.gts);
    return sd;
}

struct LinkStats {
    double ab_total = 0;
    double ab_payload = 0;
    double delay = 0;
    std::vector<std::uint8_t> packet;
};

void dump_shape(bool on, const char* stage, const Tensor<float>& t) {
    if (on) std::cerr << stage << " " << Tensor<float>::shape_str(t.shape) << "\n";
}

// One cooperative forward pass on an existing tape. With use_link the
// compressed feature is serialized, transmitted and deserialized, and the
// receiver works from the decoded packet (camera included); without it the
// link is bypassed and gradients flow end to end.
emiff::HeadOut forward_scene(emiff::Bound<float>& b, const scene::ScenarioConfig& cfg,
                             const SceneData& sd, bool use_link, LinkStats* stats,
                             bool dump = false) {
    Tape<float>& t = *b.tape;

    Var veh_img = t.push(sd.veh_img);
    Var inf_img = t.push(sd.inf_img);
    const std::vector<Var> veh_pyr = emiff::extract_features(b, veh_img, emiff::Side::Veh);
    const std::vector<Var> inf_pyr_src = emiff::extract_features(b, inf_img, emiff::Side::Inf);
    dump_shape(dump, "extract.veh", t.val(veh_pyr[0]));
    dump_shape(dump, "extract.inf", t.val(inf_pyr_src[0]));

    Var ft = emiff::fc_compress(b, inf_pyr_src[0]);
    dump_shape(dump, "fc_compress", t.val(ft));

    Var rx = ft;
    geo::CameraParams rx_cam = sd.inf_cam_tx;
    if (use_link) {
        const link::Packet pkt = link::serialize(t.val(ft), sd.inf_cam_tx, cfg.model.ccr,
                                                 cfg.model.scr, cfg.wire_dtype);
        const link::Delivery dv = link::transmit(pkt, cfg.link_cfg);
        const link::DecodedPacket dec = link::deserialize(pkt);
        rx = t.push(dec.tensor);
        rx_cam = dec.cam;
        if (stats) {
            stats->ab_total = static_cast<double>(pkt.size());
            stats->ab_payload = static_cast<double>(pkt.payload_bytes());
            stats->delay = dv.arrival_delay_s;
            stats->packet = pkt.bytes;
        }
    } else if (stats) {
        const std::size_t payload =
            static_cast<std::size_t>(t.val(ft).numel()) * link::element_size(cfg.wire_dtype);
        stats->ab_payload = static_cast<double>(payload);
        stats->ab_total = static_cast<double>(payload + link::kHeaderSize);
        link::Packet fake;
        fake.bytes.resize(payload + link::kHeaderSize);
        stats->delay = link::transmit(fake, cfg.link_cfg).arrival_delay_s;
    }

    const std::vector<Var> inf_pyr = emiff::fc_decompress(b, rx);
    dump_shape(dump, "fc_decompress", t.val(inf_pyr[0]));

    const emiff::McaOut att = emiff::mca(b, veh_pyr, inf_pyr);
    dump_shape(dump, "mca.f_veh", t.val(att.f_veh));
    dump_shape(dump, "mca.weights", t.val(att.weights));

    const emiff::CcmOut veh_masked = emiff::ccm(b, att.f_veh, sd.sc.veh_cam, emiff::Side::Veh);
    const emiff::CcmOut inf_masked = emiff::ccm(b, att.f_inf, rx_cam, emiff::Side::Inf);
    dump_shape(dump, "ccm.veh", t.val(veh_masked.out));

    auto [v_veh, m_veh] = geo::sample_voxel_features(t, veh_masked.out, sd.sc.veh_cam, cfg.grid,
                                                     cfg.model.feature_stride);
    auto [v_inf, m_inf] =
        geo::sample_voxel_features(t, inf_masked.out, rx_cam, cfg.grid, cfg.model.feature_stride);
    dump_shape(dump, "voxels.veh", t.val(v_veh));

    Var bev{-1};
    if (cfg.fusion == scene::FusionLevel::Voxel) {
        Var fused = emiff::fuse_voxels(t, v_veh, m_veh, v_inf, m_inf);
        bev = emiff::bev_reduce(b, fused);
    } else {
        // BEV-level fusion: the shared neck runs on each grid, the maps are
        // averaged afterwards.
        Var bev_veh = emiff::bev_reduce(b, v_veh);
        Var bev_inf = emiff::bev_reduce(b, v_inf);
        bev = ops::mean_list(t, std::vector<Var>{bev_veh, bev_inf});
    }
    dump_shape(dump, "bev", t.val(bev));

    emiff::HeadOut head = emiff::detect_head(b, bev);
    dump_shape(dump, "head.cls", t.val(head.cls));
    return head;
}

std::vector<eval::Detection> detections_of(const scene::ScenarioConfig& cfg, Tape<float>& t,
                                           const emiff::HeadOut& head) {
    return emiff::decode_and_nms(cfg.model, cfg.grid, t.val(head.cls), t.val(head.reg),
                                 t.val(head.dir), cfg.model.score_thresh, cfg.model.nms_iou);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

double bucket_or(const std::map<std::string, double>& ap, const std::string& key, double fallback) {
    auto it = ap.find(key);
    return it == ap.end() ? fallback : it->second;
}

} // namespace

ExperimentResult run_pipeline(const scene::ScenarioConfig& cfg, const ckpt::Params<float>& params,
                              bool dump_shapes) {
    const auto t0 = std::chrono::steady_clock::now();
    SceneData sd = make_scene_data(cfg, cfg.seed);
    Tape<float> tape;
    emiff::Bound<float> b = emiff::bind(tape, cfg.model, params);
    LinkStats ls;
    emiff::HeadOut head = forward_scene(b, cfg, sd, /*use_link=*/true, &ls, dump_shapes);
    if (!tape.val(head.cls).all_finite() || !tape.val(head.reg).all_finite())
        throw NumericError("run_pipeline: non-finite head output");
    ExperimentResult r;
    r.detections = detections_of(cfg, tape, head);
    r.ground_truth = sd.gts;
    r.ap_3d = eval::ap_compute(r.detections, r.ground_truth, eval::Metric::ThreeD);
    r.ap_bev = eval::ap_compute(r.detections, r.ground_truth, eval::Metric::BEV);
    r.ab_total_bytes = ls.ab_total;
    r.ab_payload_bytes = ls.ab_payload;
    r.arrival_delay_s = ls.delay;
    r.fingerprint = scene::config_fingerprint(cfg);
    r.packet = std::move(ls.packet);
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

ExperimentResult run_pipeline_multi(const scene::ScenarioConfig& cfg,
                                    const ckpt::Params<float>& params, int num_scenes) {
    if (num_scenes < 1) throw ConfigError("run_pipeline_multi: num_scenes < 1");
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult r;
    std::vector<std::vector<eval::Detection>> dets;
    std::vector<std::vector<eval::Box3D>> gts;
    for (int i = 0; i < num_scenes; ++i) {
        SceneData sd = make_scene_data(cfg, cfg.seed + static_cast<std::uint64_t>(i));
        Tape<float> tape;
        emiff::Bound<float> b = emiff::bind(tape, cfg.model, params);
        LinkStats ls;
        emiff::HeadOut head = forward_scene(b, cfg, sd, /*use_link=*/true, &ls);
        if (!tape.val(head.cls).all_finite())
            throw NumericError("run_pipeline_multi: non-finite head output in scene " +
                               std::to_string(i));
        dets.push_back(detections_of(cfg, tape, head));
        gts.push_back(sd.gts);
        r.ab_total_bytes += ls.ab_total / num_scenes;
        r.ab_payload_bytes += ls.ab_payload / num_scenes;
        r.arrival_delay_s += ls.delay / num_scenes;
        if (i == 0) {
            r.detections = dets.back();
            r.ground_truth = gts.back();
        }
    }
    r.ap_3d = eval::ap_compute_scenes(dets, gts, eval::Metric::ThreeD);
    r.ap_bev = eval::ap_compute_scenes(dets, gts, eval::Metric::BEV);
    r.fingerprint = scene::config_fingerprint(cfg);
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

TrainResult train_toy(const scene::ScenarioConfig& cfg, int steps, double lr, std::uint64_t seed) {
    if (steps < 0) throw ConfigError("train_toy: negative step count");
    const int n = std::max(1, cfg.train_scenes);
    std::vector<SceneData> scenes;
    scenes.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        scenes.push_back(make_scene_data(cfg, seed + static_cast<std::uint64_t>(i)));

    TrainResult res;
    res.params = emiff::init_params<float>(cfg.model, seed);
    for (int step = 0; step < steps; ++step) {
        ckpt::Params<float> grads;
        double loss = 0;
        for (const SceneData& sd : scenes) {
            Tape<float> tape;
            emiff::Bound<float> b = emiff::bind(tape, cfg.model, res.params);
            emiff::HeadOut head = forward_scene(b, cfg, sd, /*use_link=*/false, nullptr);
            emiff::LossBundle l = emiff::losses(b, head, sd.targets);
            loss += static_cast<double>(tape.val(l.total).data[0]) / n;
            tape.backward(l.total);
            ckpt::Params<float> g = emiff::collect_grads(b);
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (auto& [name, gt] : grads) {
                    const Tensor<float>& src = g.at(name);
                    for (std::size_t k = 0; k < gt.data.size(); ++k) gt.data[k] += src.data[k];
                }
            }
        }
        if (!std::isfinite(loss))
            throw NumericError("train_toy: non-finite loss at step " + std::to_string(step));
        res.loss_trace.push_back(loss);
        const float s = static_cast<float>(lr / n);
        for (auto& [name, p] : res.params) {
            const Tensor<float>& g = grads.at(name);
            if (!g.all_finite())
                throw NumericError("train_toy: non-finite gradient for " + name + " at step " +
                                   std::to_string(step));
            for (std::size_t k = 0; k < p.data.size(); ++k) p.data[k] -= s * g.data[k];
        }
    }
    return res;
}

std::vector<CompressionRow> sweep_compression(const scene::ScenarioConfig& cfg,
                                              const std::vector<int>& ccr_list,
                                              const std::vector<int>& scr_list, int train_steps,
                                              int eval_scenes) {
    if (ccr_list.empty() || scr_list.empty())
        throw ConfigError("sweep_compression: empty rate list");
    std::vector<CompressionRow> rows;
    for (int ccr : ccr_list)
        for (int scr : scr_list) {
            scene::ScenarioConfig c = cfg;
            c.model.ccr = ccr;
            c.model.scr = scr;
            scene::validate_scenario(c);
            CompressionRow row;
            row.ccr = ccr;
            row.scr = scr;
            ckpt::Params<float> params;
            if (train_steps > 0) {
                row.per_rate_trained = true;
                params = train_toy(c, train_steps, c.learn_rate, c.seed).params;
            } else {
                params = emiff::init_params<float>(c.model, c.seed);
            }
            const ExperimentResult r = run_pipeline_multi(c, params, eval_scenes);
            row.ap3d_overall = bucket_or(r.ap_3d, "overall", -1.0);
            row.ab_total_bytes = r.ab_total_bytes;
            row.ab_payload_bytes = r.ab_payload_bytes;
            rows.push_back(row);
        }
    return rows;
}

std::vector<PoseNoiseRow> sweep_pose_noise(const scene::ScenarioConfig& cfg,
                                           const ckpt::Params<float>& params,
                                           const std::vector<double>& noise_deg,
                                           int seeds_per_point) {
    if (noise_deg.empty()) throw ConfigError("sweep_pose_noise: empty noise list");
    if (seeds_per_point < 1) throw ConfigError("sweep_pose_noise: seeds_per_point < 1");
    std::vector<PoseNoiseRow> rows;
    for (double nd : noise_deg) {
        PoseNoiseRow row;
        row.rot_noise_deg = nd;
        row.seeds = seeds_per_point;
        std::vector<double> aps;
        for (int s = 0; s < seeds_per_point; ++s) {
            scene::ScenarioConfig c = cfg;
            c.rot_noise_deg = nd;
            c.seed = cfg.seed + static_cast<std::uint64_t>(s) * 97u;
            const ExperimentResult r = run_pipeline_multi(c, params, std::max(2, cfg.train_scenes));
            aps.push_back(bucket_or(r.ap_3d, "overall", 0.0));
        }
        const double mean = std::accumulate(aps.begin(), aps.end(), 0.0) / aps.size();
        double var = 0;
        for (double v : aps) var += (v - mean) * (v - mean);
        row.mean_ap3d = mean;
        row.std_ap3d = std::sqrt(var / aps.size());
        rows.push_back(row);
    }
    return rows;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("spearman: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va <= 0 || vb <= 0) return 0.0;
    return cov / std::sqrt(va * vb);
}

std::string result_csv(const scene::ScenarioConfig& cfg, const ExperimentResult& r) {
    std::ostringstream os;
    os << "fingerprint,seed,ccr,scr,fusion,ab_total_bytes,ab_payload_bytes,arrival_delay_s,"
          "ap3d_overall,ap3d_0_30,ap3d_30_50,ap3d_50_100,"
          "apbev_overall,apbev_0_30,apbev_30_50,apbev_50_100\n";
    os << r.fingerprint << "," << cfg.seed << "," << cfg.model.ccr << "," << cfg.model.scr << ","
       << (cfg.fusion == scene::FusionLevel::Voxel ? "voxel" : "bev") << ","
       << fmt(r.ab_total_bytes) << "," << fmt(r.ab_payload_bytes) << ","
       << fmt(r.arrival_delay_s);
    for (const auto* ap : {&r.ap_3d, &r.ap_bev})
        for (const char* k : {"overall", "0-30m", "30-50m", "50-100m"}) {
            os << ",";
            auto it = ap->find(k);
            if (it != ap->end()) os << fmt(it->second);
        }
    os << "\n";
    return os.str();
}

std::string compression_csv(const std::vector<CompressionRow>& rows) {
    std::ostringstream os;
    os << "ccr,scr,rate,ap3d_overall,ab_total_bytes,ab_payload_bytes,per_rate_trained\n";
    for (const auto& r : rows) {
        os << r.ccr << "," << r.scr << "," << r.ccr * r.scr << ",";
        if (r.ap3d_overall >= 0) os << fmt(r.ap3d_overall);
        os << "," << fmt(r.ab_total_bytes) << "," << fmt(r.ab_payload_bytes) << ","
           << (r.per_rate_trained ? 1 : 0) << "\n";
    }
    return os.str();
}

std::string pose_noise_csv(const std::vector<PoseNoiseRow>& rows) {
    std::ostringstream os;
    os << "rot_noise_deg,mean_ap3d,std_ap3d,seeds\n";
    for (const auto& r : rows)
        os << fmt(r.rot_noise_deg) << "," << fmt(r.mean_ap3d) << "," << fmt(r.std_ap3d) << ","
           << r.seeds << "\n";
    return os.str();
}

std::string loss_trace_csv(const std::vector<double>& trace) {
    std::ostringstream os;
    os << "step,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) os << i << "," << fmt(trace[i]) << "\n";
    return os.str();
}

std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                          const std::string& x_label, const std::string& y_label) {
    const int w = 640, h = 480, margin = 56;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << h - margin << "\" x2=\"" << w - margin
       << "\" y2=\"" << h - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
       << h - margin << "\" stroke=\"black\"/>\n";
    if (!xs.empty() && xs.size() == ys.size()) {
        double x0 = *std::min_element(xs.begin(), xs.end());
        double x1 = *std::max_element(xs.begin(), xs.end());
        double y0 = *std::min_element(ys.begin(), ys.end());
        double y1 = *std::max_element(ys.begin(), ys.end());
        if (x1 <= x0) x1 = x0 + 1;
        if (y1 <= y0) y1 = y0 + 1;
        os << "<polyline fill=\"none\" stroke=\"#1f6feb\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double px = margin + (xs[i] - x0) / (x1 - x0) * (w - 2.0 * margin);
            const double py = h - margin - (ys[i] - y0) / (y1 - y0) * (h - 2.0 * margin);
            os << px << "," << py << " ";
        }
        os << "\"/>\n";
        os << "<text x=\"" << margin << "\" y=\"" << h - margin + 18 << "\" font-size=\"12\">"
           << fmt(x0) << "</text>\n";
        os << "<text x=\"" << w - margin - 24 << "\" y=\"" << h - margin + 18
           << "\" font-size=\"12\">" << fmt(x1) << "</text>\n";
        os << "<text x=\"4\" y=\"" << h - margin << "\" font-size=\"12\">" << fmt(y0)
           << "</text>\n";
        os << "<text x=\"4\" y=\"" << margin + 6 << "\" font-size=\"12\">" << fmt(y1)
           << "</text>\n";
    }
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
       << "\" font-size=\"14\" text-anchor=\"middle\">" << x_label << "</text>\n";
    os << "<text x=\"16\" y=\"" << h / 2 << "\" font-size=\"14\" transform=\"rotate(-90 16 "
       << h / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

} // namespace vicsim::harness
