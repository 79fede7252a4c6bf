#include "mvc/evals.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mvc/errors.hpp"
#include "mvc/io.hpp"

namespace mvc {

namespace {

constexpr uint64_t kEvalSceneSalt = 0x4556414cull;
constexpr uint64_t kEvalSeedSalt = 0x53454544ull;

std::vector<std::vector<TrackPoint>> predict_tracks(Tape& tape, const Backbone& model,
                                                    const std::vector<Image>& images,
                                                    const std::vector<Eigen::Vector2d>& seeds,
                                                    const TrackEvalConfig& cfg) {
    if (cfg.method == TrackMethod::attention)
        return attention_tracks(tape, model, images, seeds, cfg.track);
    NoGradGuard guard(tape);
    const PatchGrid grid(images[0].h, images[0].w, model.cfg.patch_size);
    const Tensor features = backbone_features(
        model, images, empty_mask_plan(static_cast<int64_t>(images.size()), grid));
    return nn_feature_tracks(features, seeds, grid);
}

// Restrict tracks/cameras/depths to the first k views so only those are
// scored; predictions for the dropped context views are discarded.
template <typename T>
std::vector<T> take_first(const std::vector<T>& in, size_t k) {
    return std::vector<T>(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(k));
}

// Pool per-scene metrics weighted by their scored-pair counts.
TrackMetrics pool_metrics(const std::vector<TrackMetrics>& per_scene) {
    TrackMetrics pooled;
    int64_t total = 0;
    for (const TrackMetrics& m : per_scene) total += m.scored;
    if (total == 0) throw DomainError("track evaluation scored no pairs");
    pooled.scored = total;
    const double denom = static_cast<double>(total);
    for (const TrackMetrics& m : per_scene) {
        const double w = static_cast<double>(m.scored) / denom;
        pooled.ate2d += w * m.ate2d;
        pooled.ate3d_cm += w * m.ate3d_cm;
        pooled.depth_clamped += m.depth_clamped;
        if (pooled.acc_px.empty()) {
            pooled.acc_px.resize(m.acc_px.size());
            pooled.acc_cm.resize(m.acc_cm.size());
            for (size_t i = 0; i < m.acc_px.size(); ++i)
                pooled.acc_px[i] = {m.acc_px[i].first, 0.0};
            for (size_t i = 0; i < m.acc_cm.size(); ++i)
                pooled.acc_cm[i] = {m.acc_cm[i].first, 0.0};
        }
        for (size_t i = 0; i < m.acc_px.size(); ++i)
            pooled.acc_px[i].second += w * m.acc_px[i].second;
        for (size_t i = 0; i < m.acc_cm.size(); ++i)
            pooled.acc_cm[i].second += w * m.acc_cm[i].second;
    }
    return pooled;
}

} // namespace

TrackMethod track_method_from_string(const std::string& s) {
    if (s == "attention") return TrackMethod::attention;
    if (s == "nn_features") return TrackMethod::nn_features;
    throw ConfigError("unknown track method: " + s + " (expected attention or nn_features)");
}

TrackMetrics eval_tracks_scene(Tape& tape, const Backbone& model,
                               const std::vector<Image>& images,
                               const std::vector<DepthMap>& depths,
                               const std::vector<Camera>& cams,
                               const std::vector<Eigen::Vector2d>& seeds,
                               const TrackEvalConfig& cfg) {
    if (images.size() != depths.size() || images.size() != cams.size())
        throw DimensionError("eval_tracks_scene: view count mismatch");
    if (images.size() < 2) throw DomainError("eval_tracks_scene: need at least two views");

    const std::vector<std::vector<TrackPoint>> pred =
        predict_tracks(tape, model, images, seeds, cfg);
    const std::vector<std::vector<TrackPoint>> gt = gt_tracks(cams, depths, seeds);

    size_t scored_views = images.size();
    if (cfg.context_views >= 0) scored_views = 2; // pair mode: context is unscored
    std::vector<std::vector<TrackPoint>> pred_scored, gt_scored;
    pred_scored.reserve(pred.size());
    gt_scored.reserve(gt.size());
    for (size_t s = 0; s < pred.size(); ++s) {
        pred_scored.push_back(take_first(pred[s], scored_views));
        gt_scored.push_back(take_first(gt[s], scored_views));
    }
    return track_metrics(pred_scored, gt_scored, take_first(cams, scored_views),
                         take_first(depths, scored_views), cfg.px_thresholds,
                         cfg.cm_thresholds);
}

TrackEvalResult eval_tracks_stream(Tape& tape, const Backbone& model,
                                   const TrackEvalConfig& cfg) {
    StreamConfig stream = cfg.stream;
    if (cfg.context_views >= 0) {
        // Pair mode pins the view count: the scored pair plus the context.
        stream.min_views = 2 + cfg.context_views;
        stream.max_views = 2 + cfg.context_views;
    }
    SceneStream scenes(stream, splitmix64(cfg.seed ^ kEvalSceneSalt));
    Rng seed_rng(splitmix64(cfg.seed ^ kEvalSeedSalt));

    TrackEvalResult result;
    for (int64_t i = 0; i < cfg.n_scenes; ++i) {
        const Scene scene = scenes.next();
        std::vector<Image> images;
        std::vector<DepthMap> depths;
        std::vector<Camera> cams;
        for (const SceneView& v : scene.views) {
            images.push_back(v.image);
            depths.push_back(v.depth);
            cams.push_back(v.cam);
        }
        const std::vector<Eigen::Vector2d> seeds =
            sample_seed_pixels(scene, cfg.seeds_per_scene, seed_rng);
        result.per_scene.push_back(
            eval_tracks_scene(tape, model, images, depths, cams, seeds, cfg));
    }
    result.scenes = cfg.n_scenes;
    result.pooled = pool_metrics(result.per_scene);
    return result;
}

std::vector<BenchRow> bench_forward(Tape& tape, const Backbone& model,
                                    const std::vector<int64_t>& view_counts, int64_t repeats,
                                    const StreamConfig& stream, uint64_t seed) {
    if (repeats < 1) throw ConfigError("bench: repeats must be at least 1");
    NoGradGuard guard(tape);
    std::vector<BenchRow> table;
    for (int64_t vc : view_counts) {
        if (vc < 1) throw ConfigError("bench: view counts must be positive");
        StreamConfig sc = stream;
        sc.min_views = vc;
        sc.max_views = vc;
        SceneStream scenes(sc, splitmix64(seed ^ kEvalSceneSalt));
        const Scene scene = scenes.next();
        std::vector<Image> images;
        for (const SceneView& v : scene.views) images.push_back(v.image);
        const PatchGrid grid(scene.spec.image_h, scene.spec.image_w, model.cfg.patch_size);
        const MaskPlan plan = empty_mask_plan(vc, grid);

        std::vector<double> times;
        times.reserve(static_cast<size_t>(repeats));
        for (int64_t r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const ForwardResult res = backbone_forward(model, images, plan);
            (void)res;
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        BenchRow row;
        row.views = vc;
        row.repeats = repeats;
        row.min_ms = times.front();
        const size_t mid = times.size() / 2;
        row.median_ms = times.size() % 2 == 1 ? times[mid]
                                              : 0.5 * (times[mid - 1] + times[mid]);
        table.push_back(row);
    }
    return table;
}

PcaResult dump_pca(Tape& tape, const Backbone& model, const std::vector<Image>& views,
                   int64_t block, const std::string& out_dir) {
    if (views.empty()) throw DomainError("dump_pca: no views");
    NoGradGuard guard(tape);
    const PatchGrid grid(views[0].h, views[0].w, model.cfg.patch_size);
    const Tensor features = backbone_features(
        model, views, empty_mask_plan(static_cast<int64_t>(views.size()), grid), block);
    const PcaResult pca = pca_project(features);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

    for (size_t v = 0; v < views.size(); ++v) {
        Image img;
        img.h = grid.grid_h();
        img.w = grid.grid_w();
        img.rgb.resize(static_cast<size_t>(img.h * img.w * 3));
        for (int64_t j = 0; j < grid.count(); ++j) {
            const auto& rgb = pca.rgb[v * static_cast<size_t>(grid.count()) +
                                      static_cast<size_t>(j)];
            for (int c = 0; c < 3; ++c)
                img.rgb[static_cast<size_t>(j * 3 + c)] = rgb[static_cast<size_t>(c)];
        }
        char name[32];
        std::snprintf(name, sizeof name, "pca_view_%03zu.ppm", v);
        write_ppm(out_dir + "/" + name, img);
    }
    return pca;
}

} // namespace mvc
