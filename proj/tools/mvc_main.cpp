// Command-line entry point: training, evaluation, data generation and
// diagnostics over the multi-view completion engine.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvc/checkpoint.hpp"
#include "mvc/config.hpp"
#include "mvc/errors.hpp"
#include "mvc/evals.hpp"
#include "mvc/io.hpp"
#include "mvc/masking.hpp"
#include "mvc/probe.hpp"
#include "mvc/train.hpp"

namespace {

using mvc::ConfigMap;

// Shared flags: an optional config file plus free-form "--section.key value"
// overrides collected from the unparsed remainder.
struct CommonArgs {
    std::string config_path;
    std::vector<std::string> override_keys;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Config file (key = value with [sections])");
    cmd->allow_extras();
}

ConfigMap build_config(CLI::App* cmd, CommonArgs& args) {
    ConfigMap cfg;
    if (!args.config_path.empty()) cfg = ConfigMap::from_file(args.config_path);
    const std::vector<std::string> extras = cmd->remaining();
    for (size_t i = 0; i < extras.size(); ++i) {
        std::string token = extras[i];
        if (token.rfind("--", 0) != 0)
            throw mvc::ConfigError("unexpected argument '" + token +
                                   "' (overrides look like --section.key value)");
        token = token.substr(2);
        std::string value;
        const size_t eq = token.find('=');
        if (eq != std::string::npos) {
            value = token.substr(eq + 1);
            token = token.substr(0, eq);
        } else {
            if (i + 1 >= extras.size())
                throw mvc::ConfigError("override --" + token + " is missing a value");
            value = extras[++i];
        }
        if (token.empty() || token.find('.') == std::string::npos)
            throw mvc::ConfigError("override key '" + token +
                                   "' must be dotted as section.key");
        cfg.set(token, value);
        args.override_keys.push_back(token);
    }
    return cfg;
}

// Overrides that no code path read are typos; fail loudly. Unread keys from
// a config file only warn, so one file can serve several subcommands.
void check_consumption(const ConfigMap& cfg, const CommonArgs& args) {
    const std::vector<std::string> unused = cfg.unused();
    for (const std::string& key : unused) {
        const bool from_cli = std::find(args.override_keys.begin(), args.override_keys.end(),
                                        key) != args.override_keys.end();
        if (from_cli)
            throw mvc::ConfigError("unknown override --" + key);
        std::cerr << "warning: config key " << key << " was not used by this command\n";
    }
}

nlohmann::json track_metrics_json(const mvc::TrackMetrics& m) {
    nlohmann::json acc_px = nlohmann::json::object();
    for (const auto& [t, p] : m.acc_px) acc_px[mvc::format_double(t)] = p;
    nlohmann::json acc_cm = nlohmann::json::object();
    for (const auto& [t, p] : m.acc_cm) acc_cm[mvc::format_double(t)] = p;
    return {{"ate2d_px", m.ate2d},   {"acc_px", acc_px},
            {"ate3d_cm", m.ate3d_cm}, {"acc_cm", acc_cm},
            {"scored", m.scored},     {"depth_clamped", m.depth_clamped}};
}

nlohmann::json pose_metrics_json(const mvc::PoseMetrics& m) {
    nlohmann::json r = nlohmann::json::object(), t = nlohmann::json::object(),
                   auc = nlohmann::json::object();
    for (const auto& [k, v] : m.r_at) r[mvc::format_double(k)] = v;
    for (const auto& [k, v] : m.t_at) t[mvc::format_double(k)] = v;
    for (const auto& [k, v] : m.auc_at) auc[mvc::format_double(k)] = v;
    return {{"r_at", r}, {"t_at", t}, {"auc_at", auc}, {"pairs", m.pairs},
            {"skipped", m.skipped}};
}

mvc::TrackEvalConfig track_eval_from_config(const ConfigMap& cfg) {
    mvc::TrackEvalConfig e;
    e.method = mvc::track_method_from_string(cfg.get_str("eval.method", "attention"));
    e.n_scenes = cfg.get_int("eval.n_scenes", e.n_scenes);
    e.seeds_per_scene = cfg.get_int("eval.seeds_per_scene", e.seeds_per_scene);
    e.seed = mvc::resolve_seed(cfg, "eval.seed", e.seed);
    e.context_views = cfg.get_int("eval.context_views", e.context_views);
    e.track.temperature = cfg.get_double("eval.temperature", e.track.temperature);
    e.track.attention_block = cfg.get_int("eval.attention_block", e.track.attention_block);
    e.track.floor_scale = cfg.get_double("eval.floor_scale", e.track.floor_scale);
    e.stream = mvc::stream_from_config(cfg);
    return e;
}

int cmd_pretrain(CLI::App* cmd, CommonArgs& args) {
    ConfigMap cfg = build_config(cmd, args);
    const mvc::TrainConfig tc = mvc::train_from_config(cfg);
    check_consumption(cfg, args);
    const mvc::TrainOutput out = mvc::pretrain(tc);
    nlohmann::json j{{"steps_completed", out.summary.steps_completed},
                     {"aborted", out.summary.aborted},
                     {"final_loss", out.summary.final_loss},
                     {"val_mse", out.summary.val_mse},
                     {"baseline_mse", out.summary.baseline_mse},
                     {"checkpoint", out.summary.checkpoint_path},
                     {"log", out.summary.log_path}};
    std::cout << j.dump() << "\n";
    return out.summary.aborted ? 2 : 0;
}

int cmd_eval_tracks(CLI::App* cmd, CommonArgs& args, const std::string& checkpoint,
                    const std::string& scene_dir) {
    ConfigMap cfg = build_config(cmd, args);
    mvc::LoadedModel lm = mvc::load_model(checkpoint);
    mvc::TrackEvalConfig ec = track_eval_from_config(cfg);
    check_consumption(cfg, args);

    nlohmann::json j;
    if (!scene_dir.empty()) {
        const mvc::SceneFiles sf = mvc::load_scene_dir(scene_dir);
        if (sf.tracks.empty())
            throw mvc::IoError("scene directory " + scene_dir +
                               " has no tracks.txt to take seeds from");
        std::vector<Eigen::Vector2d> seeds;
        for (const auto& per_view : sf.tracks)
            seeds.emplace_back(per_view.at(0).u, per_view.at(0).v);
        const mvc::TrackMetrics m = mvc::eval_tracks_scene(
            *lm.bundle.tape, lm.bundle.model, sf.images, sf.depths, sf.cams, seeds, ec);
        j = track_metrics_json(m);
        j["scenes"] = 1;
    } else {
        const mvc::TrackEvalResult res =
            mvc::eval_tracks_stream(*lm.bundle.tape, lm.bundle.model, ec);
        j = track_metrics_json(res.pooled);
        j["scenes"] = res.scenes;
    }
    j["method"] = ec.method == mvc::TrackMethod::attention ? "attention" : "nn_features";
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_probe(CLI::App* cmd, CommonArgs& args, const std::string& checkpoint) {
    ConfigMap cfg = build_config(cmd, args);
    mvc::LoadedModel lm = mvc::load_model(checkpoint);
    mvc::ProbeConfig pc;
    pc.decoder_blocks = cfg.get_int("probe.decoder_blocks", pc.decoder_blocks);
    pc.steps = cfg.get_int("probe.steps", pc.steps);
    pc.train_scenes = cfg.get_int("probe.train_scenes", pc.train_scenes);
    pc.eval_scenes = cfg.get_int("probe.eval_scenes", pc.eval_scenes);
    pc.seed = mvc::resolve_seed(cfg, "probe.seed", pc.seed);
    pc.feature_block = cfg.get_int("probe.feature_block", pc.feature_block);
    pc.pose_weight = cfg.get_double("probe.pose_weight", pc.pose_weight);
    pc.optim = mvc::optim_from_config(cfg);
    pc.optim.lr_peak = cfg.get_double("probe.lr_peak", 1e-3);
    pc.stream = mvc::stream_from_config(cfg);
    check_consumption(cfg, args);

    const mvc::ProbeReport rep =
        mvc::train_and_eval_probe(*lm.bundle.tape, lm.bundle.model, pc);
    nlohmann::json j{{"pointmap",
                      {{"accuracy", rep.pointmap.accuracy},
                       {"completeness", rep.pointmap.completeness},
                       {"overall", rep.pointmap.overall},
                       {"l1", rep.pointmap.l1}}},
                     {"pose", pose_metrics_json(rep.pose)},
                     {"final_loss", rep.final_loss},
                     {"eval_scenes", rep.eval_scenes}};
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_bench(CLI::App* cmd, CommonArgs& args, const std::string& checkpoint,
              std::vector<int64_t>& views, int64_t repeats) {
    ConfigMap cfg = build_config(cmd, args);
    mvc::ModelBundle mb;
    if (!checkpoint.empty()) {
        mb = mvc::load_model(checkpoint).bundle;
    } else {
        const mvc::BackboneConfig bc = mvc::backbone_from_config(cfg);
        mb = mvc::make_model(bc, mvc::resolve_seed(cfg, "bench.seed", 1));
    }
    const mvc::StreamConfig stream = mvc::stream_from_config(cfg);
    const uint64_t seed = mvc::resolve_seed(cfg, "bench.scene_seed", 3);
    check_consumption(cfg, args);
    if (views.empty()) views = {2, 4, 8, 16};

    const std::vector<mvc::BenchRow> table =
        mvc::bench_forward(*mb.tape, mb.model, views, repeats, stream, seed);
    for (const mvc::BenchRow& row : table) {
        nlohmann::json j{{"views", row.views},
                         {"median_ms", row.median_ms},
                         {"min_ms", row.min_ms},
                         {"repeats", row.repeats}};
        std::cout << j.dump() << "\n";
    }
    return 0;
}

int cmd_dump_pca(CLI::App* cmd, CommonArgs& args, const std::string& checkpoint,
                 const std::string& scene_dir, const std::string& out_dir, int64_t block) {
    ConfigMap cfg = build_config(cmd, args);
    check_consumption(cfg, args);
    mvc::LoadedModel lm = mvc::load_model(checkpoint);
    const mvc::SceneFiles sf = mvc::load_scene_dir(scene_dir);
    const mvc::PcaResult pca =
        mvc::dump_pca(*lm.bundle.tape, lm.bundle.model, sf.images, block, out_dir);
    nlohmann::json j{{"views", pca.n_views},
                     {"patches_per_view", pca.patches_per_view},
                     {"components", pca.components},
                     {"rank_deficient", pca.rank_deficient},
                     {"out_dir", out_dir}};
    std::cout << j.dump() << "\n";
    if (pca.rank_deficient)
        std::cerr << "warning: features span fewer than 3 principal directions; "
                     "missing channels are zero\n";
    return 0;
}

int cmd_gen_scenes(CLI::App* cmd, CommonArgs& args, const std::string& out_dir,
                   int64_t count, int64_t tracks_per_scene) {
    ConfigMap cfg = build_config(cmd, args);
    const mvc::StreamConfig stream = mvc::stream_from_config(cfg);
    const uint64_t seed = mvc::resolve_seed(cfg, "gen.seed", 5);
    check_consumption(cfg, args);

    mvc::SceneStream scenes(stream, seed);
    mvc::Rng seed_rng(mvc::splitmix64(seed ^ 0x5345454453ull));
    for (int64_t i = 0; i < count; ++i) {
        const mvc::Scene scene = scenes.next();
        std::vector<mvc::Image> images;
        std::vector<mvc::DepthMap> depths;
        std::vector<mvc::Camera> cams;
        for (const mvc::SceneView& v : scene.views) {
            images.push_back(v.image);
            depths.push_back(v.depth);
            cams.push_back(v.cam);
        }
        std::vector<std::vector<mvc::TrackPoint>> tracks;
        if (tracks_per_scene > 0) {
            const std::vector<Eigen::Vector2d> seeds =
                mvc::sample_seed_pixels(scene, tracks_per_scene, seed_rng);
            tracks = mvc::gt_tracks(cams, depths, seeds);
        }
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04lld", static_cast<long long>(i));
        mvc::export_scene_dir(out_dir + "/" + name, images, depths, cams, tracks);
    }
    nlohmann::json j{{"scenes", count}, {"out_dir", out_dir}};
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_mask_stats(CLI::App* cmd, CommonArgs& args, int64_t samples, int64_t image_h,
                   int64_t image_w) {
    ConfigMap cfg = build_config(cmd, args);
    const mvc::MaskConfig mc = mvc::mask_from_config(cfg);
    const mvc::BackboneConfig bc = mvc::backbone_from_config(cfg);
    const uint64_t seed = mvc::resolve_seed(cfg, "mask.seed", 17);
    check_consumption(cfg, args);

    const mvc::PatchGrid grid(image_h, image_w, bc.patch_size);
    const mvc::MaskStats stats = mvc::mask_statistics(mc, grid, samples, seed);
    auto strategy_json = [](const mvc::StrategyStats& s) {
        return nlohmann::json{{"samples", s.samples},
                              {"ratio_mean", s.ratio_mean},
                              {"ratio_std", s.ratio_std},
                              {"connected_violations", s.connected_violations}};
    };
    nlohmann::json j{{"random", strategy_json(stats.random)},
                     {"rectangle", strategy_json(stats.rectangle)},
                     {"ellipse", strategy_json(stats.ellipse)},
                     {"block_fallbacks", stats.block_fallbacks}};
    std::cout << j.dump() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view completion: pretraining, correspondence and probing"};
    app.require_subcommand(1);

    CommonArgs args;

    CLI::App* pretrain = app.add_subcommand("pretrain", "Run masked multi-view pretraining");
    add_common(pretrain, args);

    std::string checkpoint, scene_dir, out_dir;
    CLI::App* eval_tracks =
        app.add_subcommand("eval-tracks", "Score zero-shot correspondence quality");
    eval_tracks->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    eval_tracks->add_option("--scene-dir", scene_dir,
                            "Evaluate one exported scene instead of generated ones");
    add_common(eval_tracks, args);

    CLI::App* probe = app.add_subcommand(
        "probe-pointmap", "Fit a frozen-backbone probe and report pointmap/pose metrics");
    probe->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    add_common(probe, args);

    std::vector<int64_t> bench_views;
    int64_t bench_repeats = 5;
    CLI::App* bench = app.add_subcommand("bench", "Time forward passes per view count");
    bench->add_option("--checkpoint", checkpoint, "Model checkpoint (optional)");
    bench->add_option("--views", bench_views, "View counts to time");
    bench->add_option("--repeats", bench_repeats, "Repeats per view count");
    add_common(bench, args);

    int64_t pca_block = -1;
    CLI::App* dump_pca =
        app.add_subcommand("dump-pca", "Write PCA feature visualizations for a scene");
    dump_pca->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    dump_pca->add_option("--scene-dir", scene_dir, "Exported scene directory")->required();
    dump_pca->add_option("--out", out_dir, "Output directory")->required();
    dump_pca->add_option("--block", pca_block, "Feature block (-1 = default)");
    add_common(dump_pca, args);

    int64_t gen_count = 10, gen_tracks = 16;
    CLI::App* gen = app.add_subcommand("gen-scenes", "Export synthetic scenes to disk");
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--count", gen_count, "Number of scenes");
    gen->add_option("--tracks", gen_tracks, "Ground-truth tracks per scene (0 = none)");
    add_common(gen, args);

    int64_t stat_samples = 10000, stat_h = 64, stat_w = 64;
    CLI::App* mask_stats =
        app.add_subcommand("mask-stats", "Sample masks and report ratio statistics");
    mask_stats->add_option("--samples", stat_samples, "Number of masks to draw");
    mask_stats->add_option("--image-h", stat_h, "Image height");
    mask_stats->add_option("--image-w", stat_w, "Image width");
    add_common(mask_stats, args);

    try {
        app.parse(argc, argv);
        if (pretrain->parsed()) return cmd_pretrain(pretrain, args);
        if (eval_tracks->parsed()) return cmd_eval_tracks(eval_tracks, args, checkpoint, scene_dir);
        if (probe->parsed()) return cmd_probe(probe, args, checkpoint);
        if (bench->parsed()) return cmd_bench(bench, args, checkpoint, bench_views, bench_repeats);
        if (dump_pca->parsed())
            return cmd_dump_pca(dump_pca, args, checkpoint, scene_dir, out_dir, pca_block);
        if (gen->parsed()) return cmd_gen_scenes(gen, args, out_dir, gen_count, gen_tracks);
        if (mask_stats->parsed()) return cmd_mask_stats(mask_stats, args, stat_samples, stat_h, stat_w);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const mvc::Error& e) {
        std::cerr << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "E_INTERNAL: " << e.what() << "\n";
        return 1;
    }
}
