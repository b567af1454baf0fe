// vicsim: cooperative-detection simulator CLI.
//
// Subcommands: gen, train, run, eval, sweep-compression, sweep-pose,
// gradcheck. Exit codes: 0 ok, 2 config error, 3 protocol error, 4 numeric
// failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "vicsim/gradsuite.hpp"
#include "vicsim/harness.hpp"

namespace {

using namespace vicsim;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "Scenario config JSON file");
    cmd->add_option("--seed", a.seed, "Override the config seed");
    cmd->add_option("--out", a.out, "Output directory");
}

scene::ScenarioConfig load(const CommonArgs& a) {
    scene::ScenarioConfig cfg =
        a.config_path.empty() ? scene::default_config() : scene::load_config(a.config_path);
    if (a.seed) cfg.seed = *a.seed;
    scene::validate_scenario(cfg);
    return cfg;
}

std::string path_in(const CommonArgs& a, const std::string& name) {
    return (std::filesystem::path(a.out) / name).string();
}

ckpt::Params<float> weights_or_init(const scene::ScenarioConfig& cfg,
                                    const std::string& weights_path) {
    if (weights_path.empty()) return emiff::init_params<float>(cfg.model, cfg.seed);
    return ckpt::load_checkpoint(weights_path);
}

std::string detections_csv(const harness::ExperimentResult& r) {
    std::ostringstream os;
    os << "x,y,z,l,w,h,yaw,score\n";
    os.precision(10);
    for (const auto& d : r.detections)
        os << d.box.x << "," << d.box.y << "," << d.box.z << "," << d.box.l << "," << d.box.w
           << "," << d.box.h << "," << d.box.yaw << "," << d.score << "\n";
    return os.str();
}

int cmd_gen(const CommonArgs& a, int num_scenes) {
    const scene::ScenarioConfig cfg = load(a);
    nlohmann::json scenes = nlohmann::json::array();
    for (int i = 0; i < num_scenes; ++i) {
        const scene::Scene sc = scene::generate_scene(cfg, cfg.seed + static_cast<std::uint64_t>(i));
        nlohmann::json js;
        js["seed"] = cfg.seed + static_cast<std::uint64_t>(i);
        js["objects"] = nlohmann::json::array();
        for (const auto& o : sc.objects)
            js["objects"].push_back({{"center", {o.center.x(), o.center.y(), o.center.z()}},
                                     {"size", {o.size.x(), o.size.y(), o.size.z()}},
                                     {"yaw", o.yaw},
                                     {"velocity", {o.velocity.x(), o.velocity.y()}}});
        scenes.push_back(js);
    }
    nlohmann::json out;
    out["fingerprint"] = scene::config_fingerprint(cfg);
    out["scenes"] = scenes;
    harness::write_file(path_in(a, "scenes.json"), out.dump(2) + "\n");
    harness::write_file(path_in(a, "config.json"), scene::config_to_json_text(cfg) + "\n");
    std::cout << "wrote " << num_scenes << " scenes to " << path_in(a, "scenes.json") << "\n";
    return 0;
}

int cmd_train(const CommonArgs& a) {
    const scene::ScenarioConfig cfg = load(a);
    const harness::TrainResult tr =
        harness::train_toy(cfg, cfg.train_steps, cfg.learn_rate, cfg.seed);
    ckpt::save_checkpoint(path_in(a, "weights.vicw"), tr.params);
    harness::write_file(path_in(a, "loss_trace.csv"), harness::loss_trace_csv(tr.loss_trace));
    std::vector<double> xs(tr.loss_trace.size());
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
    harness::write_file(path_in(a, "loss.svg"),
                        harness::svg_line_plot(xs, tr.loss_trace, "step", "loss"));
    std::cout << "trained " << cfg.train_steps << " steps, final loss "
              << (tr.loss_trace.empty() ? 0.0 : tr.loss_trace.back()) << "\n";
    return 0;
}

int cmd_run(const CommonArgs& a, const std::string& weights_path, bool dump_shapes) {
    const scene::ScenarioConfig cfg = load(a);
    const ckpt::Params<float> params = weights_or_init(cfg, weights_path);
    const harness::ExperimentResult r = harness::run_pipeline(cfg, params, dump_shapes);
    harness::write_file(path_in(a, "result.csv"), harness::result_csv(cfg, r));
    harness::write_file(path_in(a, "detections.csv"), detections_csv(r));
    if (!r.packet.empty())
        harness::write_file(path_in(a, "feature.vicf"),
                            std::string(r.packet.begin(), r.packet.end()));
    std::cout << "detections=" << r.detections.size() << " ab_total=" << r.ab_total_bytes
              << "B delay=" << r.arrival_delay_s << "s\n";
    return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& weights_path, int num_scenes) {
    const scene::ScenarioConfig cfg = load(a);
    const ckpt::Params<float> params = weights_or_init(cfg, weights_path);
    const harness::ExperimentResult r = harness::run_pipeline_multi(cfg, params, num_scenes);
    harness::write_file(path_in(a, "result.csv"), harness::result_csv(cfg, r));
    auto it = r.ap_3d.find("overall");
    std::cout << "scenes=" << num_scenes << " ap3d_overall="
              << (it == r.ap_3d.end() ? -1.0 : it->second) << "\n";
    return 0;
}

int cmd_sweep_compression(const CommonArgs& a, const std::vector<int>& ccr,
                          const std::vector<int>& scr, int train_steps, int eval_scenes) {
    const scene::ScenarioConfig cfg = load(a);
    const std::vector<harness::CompressionRow> rows =
        harness::sweep_compression(cfg, ccr, scr, train_steps, eval_scenes);
    harness::write_file(path_in(a, "compression.csv"), harness::compression_csv(rows));
    std::vector<double> xs, ys;
    for (const auto& r : rows)
        if (r.ap3d_overall >= 0) {
            xs.push_back(r.ab_total_bytes);
            ys.push_back(r.ap3d_overall);
        }
    harness::write_file(path_in(a, "ab_vs_ap.svg"),
                        harness::svg_line_plot(xs, ys, "average byte (total)", "AP3D overall"));
    std::cout << "swept " << rows.size() << " rate pairs\n";
    return 0;
}

int cmd_sweep_pose(const CommonArgs& a, const std::string& weights_path,
                   const std::vector<double>& noise, int seeds_per_point) {
    const scene::ScenarioConfig cfg = load(a);
    const ckpt::Params<float> params = weights_or_init(cfg, weights_path);
    const std::vector<harness::PoseNoiseRow> rows =
        harness::sweep_pose_noise(cfg, params, noise, seeds_per_point);
    harness::write_file(path_in(a, "pose_noise.csv"), harness::pose_noise_csv(rows));
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
        xs.push_back(r.rot_noise_deg);
        ys.push_back(r.mean_ap3d);
    }
    harness::write_file(path_in(a, "ap_vs_noise.svg"),
                        harness::svg_line_plot(xs, ys, "rotation noise (deg)", "mean AP3D"));
    std::cout << "swept " << rows.size() << " noise levels\n";
    return 0;
}

int cmd_gradcheck(const CommonArgs& a, double tol) {
    const std::uint64_t seed = a.seed.value_or(7);
    const std::vector<gradsuite::NamedCheck> checks = gradsuite::run_suite(seed, 1e-5, tol);
    std::ostringstream os;
    os << "name,max_rel_err,elements,pass\n";
    bool all_ok = true;
    for (const auto& c : checks) {
        os << c.name << "," << c.rep.max_rel_err << "," << c.rep.elements_checked << ","
           << (c.rep.ok ? 1 : 0) << "\n";
        std::cout << (c.rep.ok ? "PASS " : "FAIL ") << c.name
                  << " max_rel_err=" << c.rep.max_rel_err << "\n";
        all_ok = all_ok && c.rep.ok;
    }
    harness::write_file(path_in(a, "gradcheck.csv"), os.str());
    if (!all_ok) throw NumericError("gradcheck: at least one check exceeded tolerance " +
                                    std::to_string(tol));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vehicle-infrastructure cooperative detection simulator"};
    app.require_subcommand(1);

    CommonArgs gen_a, train_a, run_a, eval_a, swc_a, swp_a, gc_a;
    int gen_scenes = 4;
    std::string run_weights, eval_weights, swp_weights;
    bool dump_shapes = false;
    int eval_scenes = 4;
    std::vector<int> ccr_list{1, 2, 4};
    std::vector<int> scr_list{1, 4, 16};
    int swc_train_steps = 0, swc_eval_scenes = 4;
    std::vector<double> noise_list{0.0, 0.5, 1.0, 2.0, 4.0};
    int seeds_per_point = 3;
    double gc_tol = 1e-4;

    CLI::App* gen = app.add_subcommand("gen", "Generate scenes and dump their description");
    add_common(gen, gen_a);
    gen->add_option("--scenes", gen_scenes, "Number of scenes");

    CLI::App* train = app.add_subcommand("train", "Full-batch gradient descent on toy scenes");
    add_common(train, train_a);

    CLI::App* run = app.add_subcommand("run", "Single-scene cooperative inference over the link");
    add_common(run, run_a);
    run->add_option("--weights", run_weights, "Checkpoint (.vicw); fresh init when omitted");
    run->add_flag("--dump-shapes", dump_shapes, "Print per-stage tensor shapes to stderr");

    CLI::App* ev = app.add_subcommand("eval", "Multi-scene evaluation with pooled AP");
    add_common(ev, eval_a);
    ev->add_option("--weights", eval_weights, "Checkpoint (.vicw); fresh init when omitted");
    ev->add_option("--scenes", eval_scenes, "Number of scenes");

    CLI::App* swc = app.add_subcommand("sweep-compression", "AP and Average Byte per rate pair");
    add_common(swc, swc_a);
    swc->add_option("--ccr", ccr_list, "Channel compression rates");
    swc->add_option("--scr", scr_list, "Spatial compression rates (perfect squares)");
    swc->add_option("--train-steps", swc_train_steps, "Per-rate fine-tuning steps (0 = none)");
    swc->add_option("--eval-scenes", swc_eval_scenes, "Scenes per evaluation");

    CLI::App* swp = app.add_subcommand("sweep-pose", "AP degradation vs pose noise");
    add_common(swp, swp_a);
    swp->add_option("--weights", swp_weights, "Checkpoint (.vicw); fresh init when omitted");
    swp->add_option("--noise", noise_list, "Rotation noise levels (deg)");
    swp->add_option("--seeds-per-point", seeds_per_point, "Seeds averaged per level");

    CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks (float64)");
    add_common(gc, gc_a);
    gc->add_option("--tol", gc_tol, "Max relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(gen_a, gen_scenes);
        if (train->parsed()) return cmd_train(train_a);
        if (run->parsed()) return cmd_run(run_a, run_weights, dump_shapes);
        if (ev->parsed()) return cmd_eval(eval_a, eval_weights, eval_scenes);
        if (swc->parsed())
            return cmd_sweep_compression(swc_a, ccr_list, scr_list, swc_train_steps,
                                         swc_eval_scenes);
        if (swp->parsed()) return cmd_sweep_pose(swp_a, swp_weights, noise_list, seeds_per_point);
        if (gc->parsed()) return cmd_gradcheck(gc_a, gc_tol);
    } catch (const vicsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const vicsim::ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return 3;
    } catch (const vicsim::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
