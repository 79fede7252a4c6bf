#include "mvc/probe.hpp"

#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

namespace {

constexpr uint64_t kProbeTrainSalt = 0x50545241ull;
constexpr uint64_t kProbeEvalSalt = 0x50455641ull;

// x / ||x|| over the last axis of a [V, 3] tensor, kept differentiable.
Tensor normalize_rows(const Tensor& x) {
    const Tensor n = sum_axis(square(x), 1);
    const Tensor inv = pow_const(add_const(n, 1e-12), -0.5);
    return mul(x, expand_last(inv, 3));
}

Tensor cross_rows(const Tensor& a, const Tensor& b) {
    const Tensor ax = slice(a, 1, 0, 1), ay = slice(a, 1, 1, 1), az = slice(a, 1, 2, 1);
    const Tensor bx = slice(b, 1, 0, 1), by = slice(b, 1, 1, 1), bz = slice(b, 1, 2, 1);
    return concat({sub(mul(ay, bz), mul(az, by)), sub(mul(az, bx), mul(ax, bz)),
                   sub(mul(ax, by), mul(ay, bx))},
                  1);
}

struct SceneSample {
    Tensor features;  // detached [V, N, dim]
    PatchGrid grid;
    Tensor gt_points; // [V, N, 3], zeros where invalid
    Tensor gt_mask;   // [V, N, 3], 1 where valid
    int64_t n_valid = 0;
    Tensor gt_rot;    // [V, 3, 3]
    Tensor gt_trans;  // [V, 3]
    std::vector<Eigen::Vector3d> gt_cloud;
    std::vector<uint8_t> gt_cloud_valid;
    std::vector<Eigen::Matrix4d> gt_poses;
    int64_t n_views = 0;
};

SceneSample cache_scene(Tape& backbone_tape, const Backbone& backbone, const Scene& scene,
                        int64_t feature_block) {
    NoGradGuard guard(backbone_tape);
    SceneSample s;
    s.grid = PatchGrid(scene.spec.image_h, scene.spec.image_w, backbone.cfg.patch_size);
    s.n_views = static_cast<int64_t>(scene.views.size());
    const int64_t N = s.grid.count();

    std::vector<Image> images;
    for (const SceneView& v : scene.views) images.push_back(v.image);
    const Tensor feats = backbone_features(
        backbone, images, empty_mask_plan(s.n_views, s.grid), feature_block);
    s.features = Tensor::constant(feats.shape(), feats.data());

    const PointmapGt gt = gt_pointmap(scene, backbone.cfg.patch_size);
    std::vector<double> pts(static_cast<size_t>(s.n_views * N * 3), 0.0);
    std::vector<double> mask(static_cast<size_t>(s.n_views * N * 3), 0.0);
    for (int64_t i = 0; i < s.n_views * N; ++i) {
        if (!gt.valid[static_cast<size_t>(i)]) continue;
        ++s.n_valid;
        for (int c = 0; c < 3; ++c) {
            pts[static_cast<size_t>(i * 3 + c)] = gt.points[static_cast<size_t>(i)][c];
            mask[static_cast<size_t>(i * 3 + c)] = 1.0;
        }
    }
    s.gt_points = Tensor::constant({s.n_views, N, 3}, std::move(pts));
    s.gt_mask = Tensor::constant({s.n_views, N, 3}, std::move(mask));
    s.gt_cloud = gt.points;
    s.gt_cloud_valid = gt.valid;

    s.gt_poses = relative_poses(scene);
    std::vector<double> rot(static_cast<size_t>(s.n_views * 9));
    std::vector<double> trans(static_cast<size_t>(s.n_views * 3));
    for (int64_t v = 0; v < s.n_views; ++v) {
        const Eigen::Matrix4d& p = s.gt_poses[static_cast<size_t>(v)];
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                rot[static_cast<size_t>(v * 9 + r * 3 + c)] = p(r, c);
            trans[static_cast<size_t>(v * 3 + r)] = p(r, 3);
        }
    }
    s.gt_rot = Tensor::constant({s.n_views, 3, 3}, std::move(rot));
    s.gt_trans = Tensor::constant({s.n_views, 3}, std::move(trans));
    return s;
}

PointmapMetrics average_pointmap(const std::vector<PointmapMetrics>& per_scene) {
    PointmapMetrics avg;
    const double n = static_cast<double>(per_scene.size());
    for (const PointmapMetrics& m : per_scene) {
        avg.accuracy += m.accuracy / n;
        avg.completeness += m.completeness / n;
        avg.overall += m.overall / n;
        avg.l1 += m.l1 / n;
        avg.pred_used += m.pred_used;
        avg.gt_used += m.gt_used;
    }
    return avg;
}

PoseMetrics average_pose(const std::vector<PoseMetrics>& per_scene) {
    PoseMetrics avg;
    const double n = static_cast<double>(per_scene.size());
    for (const PoseMetrics& m : per_scene) {
        if (avg.r_at.empty()) {
            for (const auto& [k, v] : m.r_at) avg.r_at.push_back({k, 0.0});
            for (const auto& [k, v] : m.t_at) avg.t_at.push_back({k, 0.0});
            for (const auto& [k, v] : m.auc_at) avg.auc_at.push_back({k, 0.0});
        }
        for (size_t i = 0; i < m.r_at.size(); ++i) avg.r_at[i].second += m.r_at[i].second / n;
        for (size_t i = 0; i < m.t_at.size(); ++i) avg.t_at[i].second += m.t_at[i].second / n;
        for (size_t i = 0; i < m.auc_at.size(); ++i)
            avg.auc_at[i].second += m.auc_at[i].second / n;
        avg.pairs += m.pairs;
        avg.skipped += m.skipped;
    }
    return avg;
}

} // namespace

void ProbeConfig::validate() const {
    if (decoder_blocks < 1) throw ConfigError("probe: decoder_blocks must be at least 1");
    if (steps < 0) throw ConfigError("probe: steps must be non-negative");
    if (train_scenes < 1) throw ConfigError("probe: train_scenes must be at least 1");
    if (eval_scenes < 1) throw ConfigError("probe: eval_scenes must be at least 1");
}

ProbeModel init_probe(const BackboneConfig& backbone_cfg, int64_t decoder_blocks,
                      uint64_t seed) {
    ProbeModel p;
    p.tape = std::make_shared<Tape>();
    p.cfg = backbone_cfg;
    Rng rng(seed);
    p.blocks = init_block_stack(*p.tape, p.cfg, decoder_blocks, "probe", p.params, rng);

    const int64_t d = p.cfg.dim;
    auto weight = [&](const std::string& name, Shape shape) {
        std::vector<double> w(static_cast<size_t>(numel(shape)));
        for (double& x : w) x = rng.trunc_normal(0.02);
        Tensor t = p.tape->leaf(std::move(shape), std::move(w));
        p.params.add(name, t);
        return t;
    };
    auto bias = [&](const std::string& name, int64_t n) {
        Tensor t = p.tape->leaf({n}, std::vector<double>(static_cast<size_t>(n), 0.0));
        p.params.add(name, t);
        return t;
    };
    p.point_w = weight("probe.point_head.weight", {d, 3});
    p.point_b = bias("probe.point_head.bias", 3);
    p.pose_w = weight("probe.pose_head.weight", {d, 9});
    p.pose_b = bias("probe.pose_head.bias", 9);
    return p;
}

ProbeForward probe_forward(const ProbeModel& probe, const Tensor& features,
                           const PatchGrid& grid) {
    const Shape& fs = features.shape();
    if (fs.size() != 3 || fs[2] != probe.cfg.dim)
        throw DimensionError("probe_forward: features must be [views, patches, " +
                             std::to_string(probe.cfg.dim) + "]");
    const int64_t V = fs[0], N = fs[1];
    const std::vector<std::array<int, 2>> coords = patch_coords(grid);

    Tensor x = features;
    for (size_t i = 0; i < probe.blocks.size(); ++i)
        x = aa_block_forward(probe.blocks[i], x, i % 2 == 1, probe.cfg, coords, nullptr);

    ProbeForward out;
    out.points = add_rowvec(matmul(x, probe.point_w), probe.point_b);

    const Tensor pooled = scale(sum_axis(x, 1), 1.0 / static_cast<double>(N)); // [V, dim]
    const Tensor pose = add_rowvec(matmul(pooled, probe.pose_w), probe.pose_b); // [V, 9]
    const Tensor b1 = normalize_rows(slice(pose, 1, 0, 3));
    const Tensor a2 = slice(pose, 1, 3, 3);
    const Tensor d = sum_axis(mul(b1, a2), 1);
    const Tensor b2 = normalize_rows(sub(a2, mul(b1, expand_last(d, 3))));
    const Tensor b3 = cross_rows(b1, b2);
    out.rotations = reshape(concat({b1, b2, b3}, 1), {V, 3, 3});
    out.translations = slice(pose, 1, 6, 3);
    return out;
}

ProbeReport train_and_eval_probe(Tape& backbone_tape, const Backbone& backbone,
                                 const ProbeConfig& cfg) {
    cfg.validate();

    SceneStream train_stream(cfg.stream, splitmix64(cfg.seed ^ kProbeTrainSalt));
    std::vector<SceneSample> train;
    for (int64_t i = 0; i < cfg.train_scenes; ++i)
        train.push_back(cache_scene(backbone_tape, backbone, train_stream.next(),
                                    cfg.feature_block));

    ProbeModel probe = init_probe(backbone.cfg, cfg.decoder_blocks, splitmix64(cfg.seed));
    Tape& tape = *probe.tape;
    OptimConfig ocfg = cfg.optim;
    ocfg.total_steps = std::max<int64_t>(cfg.steps, 1);
    AdamW opt(probe.params.tensors(), ocfg);

    ProbeReport report;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const SceneSample& s = train[static_cast<size_t>(step % cfg.train_scenes)];
        const ProbeForward fwd = probe_forward(probe, s.features, s.grid);

        const Tensor point_diff = mul(sub(fwd.points, s.gt_points), s.gt_mask);
        Tensor loss = scale(sum_all(square(point_diff)),
                            1.0 / static_cast<double>(std::max<int64_t>(3 * s.n_valid, 1)));
        const Tensor rot_loss = sum_all(square(sub(fwd.rotations, s.gt_rot)));
        const Tensor trans_loss = sum_all(square(sub(fwd.translations, s.gt_trans)));
        loss = add(loss, scale(add(rot_loss, trans_loss),
                               cfg.pose_weight / static_cast<double>(s.n_views)));

        report.final_loss = loss.item();
        if (!std::isfinite(report.final_loss))
            throw DomainError("probe training diverged: non-finite loss at step " +
                              std::to_string(step));
        tape.backward(loss);
        opt.step();
        tape.reset();
        tape.zero_grad();
    }

    std::vector<PointmapMetrics> pointmaps;
    std::vector<PoseMetrics> poses;
    NoGradGuard guard(tape);
    auto eval_one = [&](const SceneSample& s) {
        const ProbeForward fwd = probe_forward(probe, s.features, s.grid);

        const std::vector<double>& pv = fwd.points.data();
        std::vector<Eigen::Vector3d> pred_cloud(static_cast<size_t>(s.n_views) *
                                                static_cast<size_t>(s.grid.count()));
        for (size_t j = 0; j < pred_cloud.size(); ++j)
            pred_cloud[j] = {pv[j * 3], pv[j * 3 + 1], pv[j * 3 + 2]};
        const std::vector<uint8_t> pred_valid(pred_cloud.size(), 1);
        pointmaps.push_back(
            pointmap_metrics(pred_cloud, pred_valid, s.gt_cloud, s.gt_cloud_valid, true));

        const std::vector<double>& rv = fwd.rotations.data();
        const std::vector<double>& tv = fwd.translations.data();
        std::vector<Eigen::Matrix4d> pred_poses(static_cast<size_t>(s.n_views),
                                                Eigen::Matrix4d::Identity());
        for (int64_t v = 0; v < s.n_views; ++v) {
            Eigen::Matrix4d& m = pred_poses[static_cast<size_t>(v)];
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c)
                    m(r, c) = rv[static_cast<size_t>(v * 9 + r * 3 + c)];
                m(r, 3) = tv[static_cast<size_t>(v * 3 + r)];
            }
        }
        poses.push_back(pose_metrics(pred_poses, s.gt_poses));
    };
    if (cfg.eval_on_train) {
        for (const SceneSample& s : train) eval_one(s);
    } else {
        SceneStream eval_stream(cfg.stream, splitmix64(cfg.seed ^ kProbeEvalSalt));
        for (int64_t i = 0; i < cfg.eval_scenes; ++i)
            eval_one(cache_scene(backbone_tape, backbone, eval_stream.next(),
                                 cfg.feature_block));
    }
    report.pointmap = average_pointmap(pointmaps);
    report.pose = average_pose(poses);
    report.eval_scenes = static_cast<int64_t>(pointmaps.size());
    return report;
}

} // namespace mvc
