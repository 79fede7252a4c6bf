#include "mvc/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mvc/checkpoint.hpp"
#include "mvc/errors.hpp"
#include "mvc/io.hpp"

namespace mvc {

namespace {

// Stream salts: one independent substream per consumer so adding a consumer
// never shifts another's draws.
constexpr uint64_t kTrainStreamSalt = 0x5452414953ull;
constexpr uint64_t kValStreamSalt = 0x56414c5353ull;
constexpr uint64_t kMeanColorSalt = 0x4d45414eull;
constexpr uint64_t kMaskSalt = 0x4d41534bull;
constexpr uint64_t kValMaskSalt = 0x564d41534bull;

nlohmann::json backbone_json(const BackboneConfig& b) {
    return {{"dim", b.dim},           {"heads", b.n_heads},
            {"blocks", b.n_blocks},   {"patch_size", b.patch_size},
            {"mlp_ratio", b.mlp_ratio}, {"rope_base", b.rope_base}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
    BackboneConfig b;
    b.dim = j.at("dim").get<int64_t>();
    b.n_heads = j.at("heads").get<int64_t>();
    b.n_blocks = j.at("blocks").get<int64_t>();
    b.patch_size = j.at("patch_size").get<int64_t>();
    b.mlp_ratio = j.at("mlp_ratio").get<int64_t>();
    b.rope_base = j.at("rope_base").get<double>();
    b.validate();
    return b;
}

} // namespace

void TrainConfig::validate() const {
    backbone.validate();
    if (steps < 0) throw ConfigError("train: steps must be non-negative");
    if (batch_scenes < 1) throw ConfigError("train: batch_scenes must be at least 1");
    if (val_scenes < 1) throw ConfigError("train: val_scenes must be at least 1");
    if (log_interval < 1) throw ConfigError("train: log_interval must be at least 1");
    OptimConfig o = optim;
    o.total_steps = std::max<int64_t>(steps, 1);
    o.validate();
}

TrainConfig train_from_config(const ConfigMap& cfg) {
    TrainConfig t;
    t.backbone = backbone_from_config(cfg);
    t.mask = mask_from_config(cfg);
    t.stream = stream_from_config(cfg);
    t.optim = optim_from_config(cfg);
    t.loss.eps = cfg.get_double("loss.eps", t.loss.eps);
    t.loss.lambda = cfg.get_double("loss.lambda", t.loss.lambda);
    t.steps = cfg.get_int("train.steps", t.steps);
    t.batch_scenes = cfg.get_int("train.batch_scenes", t.batch_scenes);
    t.seed = resolve_seed(cfg, "train.seed", t.seed);
    t.log_interval = cfg.get_int("train.log_interval", t.log_interval);
    t.eval_interval = cfg.get_int("train.eval_interval", t.eval_interval);
    t.checkpoint_interval = cfg.get_int("train.checkpoint_interval", t.checkpoint_interval);
    t.val_scenes = cfg.get_int("train.val_scenes", t.val_scenes);
    t.out_dir = cfg.get_str("train.out_dir", t.out_dir);
    t.validate();
    return t;
}

ModelBundle make_model(const BackboneConfig& cfg, uint64_t seed) {
    ModelBundle mb;
    mb.tape = std::make_shared<Tape>();
    mb.model = Backbone::init(*mb.tape, cfg, seed);
    return mb;
}

Eigen::Vector3d dataset_mean_color(const StreamConfig& stream, uint64_t seed,
                                   int64_t n_scenes) {
    SceneStream s(stream, seed);
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int64_t count = 0;
    for (int64_t i = 0; i < n_scenes; ++i) {
        const Scene scene = s.next();
        for (const SceneView& v : scene.views) {
            for (size_t px = 0; px < v.image.rgb.size(); px += 3) {
                sum.x() += v.image.rgb[px];
                sum.y() += v.image.rgb[px + 1];
                sum.z() += v.image.rgb[px + 2];
                ++count;
            }
        }
    }
    if (count == 0) throw DomainError("dataset_mean_color: no pixels sampled");
    return sum / static_cast<double>(count);
}

MaskedEval eval_masked_mse(Tape& tape, const Backbone& model,
                           const std::vector<Scene>& scenes, const MaskConfig& mask,
                           uint64_t plan_seed, const Eigen::Vector3d& mean_rgb) {
    NoGradGuard guard(tape);
    Rng plan_rng(plan_seed);
    const int64_t pd = model.cfg.patch_dim();

    double model_sq = 0.0, base_sq = 0.0, conf_sum = 0.0;
    int64_t masked_patches = 0;
    for (const Scene& scene : scenes) {
        const PatchGrid grid(scene.spec.image_h, scene.spec.image_w, model.cfg.patch_size);
        std::vector<Image> images;
        images.reserve(scene.views.size());
        for (const SceneView& v : scene.views) images.push_back(v.image);
        const MaskPlan plan =
            sample_mask_plan(mask, static_cast<int64_t>(images.size()), grid, plan_rng);
        const ForwardResult res = backbone_forward(model, images, plan);
        const std::vector<double>& pred = res.pixels.data();
        const std::vector<double>& conf = res.confidence.data();

        for (size_t v = 0; v < images.size(); ++v) {
            const Tensor target = patchify(images[v], model.cfg.patch_size);
            const std::vector<double>& tv = target.data();
            const ViewMask& vm = plan.views[v];
            for (int64_t j = 0; j < grid.count(); ++j) {
                if (!vm.masked[static_cast<size_t>(j)]) continue;
                ++masked_patches;
                conf_sum += conf[v * static_cast<size_t>(grid.count()) + static_cast<size_t>(j)];
                const size_t base =
                    (v * static_cast<size_t>(grid.count()) + static_cast<size_t>(j)) *
                    static_cast<size_t>(pd);
                for (int64_t k = 0; k < pd; ++k) {
                    const double t = tv[static_cast<size_t>(j * pd + k)];
                    const double dm = pred[base + static_cast<size_t>(k)] - t;
                    const double db = mean_rgb[k % 3] - t;
                    model_sq += dm * dm;
                    base_sq += db * db;
                }
            }
        }
    }
    if (masked_patches == 0) throw DomainError("eval_masked_mse: no masked patches drawn");

    MaskedEval out;
    out.masked_patches = masked_patches;
    const double denom = static_cast<double>(masked_patches * pd);
    out.model_mse = model_sq / denom;
    out.baseline_mse = base_sq / denom;
    out.mean_confidence = conf_sum / static_cast<double>(masked_patches);
    return out;
}

std::string checkpoint_metadata(const TrainConfig& cfg, int64_t step, double val_mse,
                                double baseline_mse) {
    nlohmann::json j;
    j["schema"] = 1;
    j["step"] = step;
    j["seed"] = cfg.seed;
    j["backbone"] = backbone_json(cfg.backbone);
    j["loss"] = {{"eps", cfg.loss.eps}, {"lambda", cfg.loss.lambda}};
    j["val_mse"] = val_mse;
    j["baseline_mse"] = baseline_mse;
    return j.dump();
}

void save_model(const std::string& path, const Backbone& model, const std::string& metadata) {
    save_checkpoint(path, checkpoint_from_params(model.params, metadata));
}

LoadedModel load_model(const std::string& checkpoint_path) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.metadata);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid metadata in " + checkpoint_path + ": " + e.what());
    }
    if (!meta.contains("backbone"))
        throw IoError("checkpoint " + checkpoint_path + " has no architecture metadata");

    LoadedModel lm;
    lm.bundle = make_model(backbone_from_json(meta["backbone"]), 0);
    restore_params(ck, lm.bundle.model.params);
    lm.metadata = ck.metadata;
    lm.step = meta.value("step", int64_t{0});
    return lm;
}

TrainOutput pretrain(const TrainConfig& cfg, bool write_files, std::string* log_out) {
    cfg.validate();

    TrainOutput out;
    out.bundle = make_model(cfg.backbone, cfg.seed);
    Tape& tape = *out.bundle.tape;
    Backbone& model = out.bundle.model;

    OptimConfig ocfg = cfg.optim;
    ocfg.total_steps = std::max<int64_t>(cfg.steps, 1);
    AdamW opt(model.params.tensors(), ocfg);

    SceneStream train_stream(cfg.stream, splitmix64(cfg.seed ^ kTrainStreamSalt));
    Rng mask_rng = Rng(cfg.seed).split(kMaskSalt);

    SceneStream val_stream(cfg.stream, splitmix64(cfg.seed ^ kValStreamSalt));
    std::vector<Scene> val_scenes;
    for (int64_t i = 0; i < cfg.val_scenes; ++i) val_scenes.push_back(val_stream.next());
    const Eigen::Vector3d mean_rgb =
        dataset_mean_color(cfg.stream, splitmix64(cfg.seed ^ kMeanColorSalt), 4);
    const uint64_t val_mask_seed = splitmix64(cfg.seed ^ kValMaskSalt);

    std::string log;
    auto emit = [&](nlohmann::json j) {
        j["schema"] = 1;
        log += j.dump();
        log += '\n';
    };

    if (write_files) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.out_dir, ec);
        if (ec) throw IoError("cannot create directory " + cfg.out_dir + ": " + ec.message());
    }
    auto run_eval = [&] {
        return eval_masked_mse(tape, model, val_scenes, cfg.mask, val_mask_seed, mean_rgb);
    };

    TrainSummary& sum = out.summary;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        Tensor total;
        double step_mse = 0.0, step_conf = 0.0;
        std::string domain_failure;
        try {
        for (int64_t b = 0; b < cfg.batch_scenes; ++b) {
            const Scene scene = train_stream.next();
            const PatchGrid grid(scene.spec.image_h, scene.spec.image_w,
                                 model.cfg.patch_size);
            std::vector<Image> images;
            images.reserve(scene.views.size());
            for (const SceneView& v : scene.views) images.push_back(v.image);
            const MaskPlan plan = sample_mask_plan(
                cfg.mask, static_cast<int64_t>(images.size()), grid, mask_rng);
            const ForwardResult res = backbone_forward(model, images, plan);

            std::vector<double> tvals;
            tvals.reserve(static_cast<size_t>(static_cast<int64_t>(images.size()) *
                                              grid.count() * model.cfg.patch_dim()));
            for (const Image& img : images) {
                const Tensor t = patchify(img, model.cfg.patch_size);
                tvals.insert(tvals.end(), t.data().begin(), t.data().end());
            }
            const Tensor target = Tensor::constant(
                {static_cast<int64_t>(images.size()), grid.count(), model.cfg.patch_dim()},
                std::move(tvals));
            const LossBreakdown lb =
                confidence_weighted_loss(res.pixels, target, res.confidence, plan, cfg.loss);
            total = total.defined() ? add(total, lb.total) : lb.total;
            double mse_acc = 0.0;
            int64_t mse_n = 0;
            for (double m : lb.per_view_mse)
                if (std::isfinite(m)) {
                    mse_acc += m;
                    ++mse_n;
                }
            step_mse += mse_n > 0 ? mse_acc / static_cast<double>(mse_n) : 0.0;
            step_conf += lb.mean_confidence;
        }
        if (cfg.batch_scenes > 1)
            total = scale(total, 1.0 / static_cast<double>(cfg.batch_scenes));
        } catch (const DomainError& e) {
            // A diverging run can saturate the confidence sigmoid to exactly
            // zero, which the log op reports as a domain error. Treat it like
            // a non-finite loss so the last good parameters survive.
            domain_failure = e.what();
        }
        step_mse /= static_cast<double>(cfg.batch_scenes);
        step_conf /= static_cast<double>(cfg.batch_scenes);

        const double loss_value = domain_failure.empty()
                                      ? total.item()
                                      : std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(loss_value)) {
            emit({{"event", "abort"},
                  {"step", step},
                  {"reason", domain_failure.empty() ? "non-finite loss" : domain_failure},
                  {"loss", loss_value}});
            sum.aborted = true;
            tape.reset();
            tape.zero_grad();
            break;
        }

        tape.backward(total);
        const StepStats st = opt.step();
        tape.reset();
        tape.zero_grad();

        sum.final_loss = loss_value;
        sum.steps_completed = step + 1;
        if (!st.applied)
            emit({{"event", "step_skipped"},
                  {"step", step},
                  {"reason", "non-finite gradient"}});
        else if ((step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps)
            emit({{"event", "step"},
                  {"step", step},
                  {"loss", loss_value},
                  {"mse", step_mse},
                  {"confidence", step_conf},
                  {"lr", st.lr},
                  {"grad_norm", st.grad_norm}});

        if (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0 &&
            step + 1 < cfg.steps) {
            const MaskedEval ev = run_eval();
            emit({{"event", "eval"},
                  {"step", step},
                  {"val_mse", ev.model_mse},
                  {"baseline_mse", ev.baseline_mse},
                  {"masked_confidence", ev.mean_confidence}});
        }
        if (write_files && cfg.checkpoint_interval > 0 &&
            (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
            char name[40];
            std::snprintf(name, sizeof name, "checkpoint_%06lld.mske",
                          static_cast<long long>(step + 1));
            save_model(cfg.out_dir + "/" + name, model,
                       checkpoint_metadata(cfg, step + 1, 0.0, 0.0));
        }
    }

    const MaskedEval final_eval = run_eval();
    sum.val_mse = final_eval.model_mse;
    sum.baseline_mse = final_eval.baseline_mse;
    emit({{"event", "final"},
          {"steps_completed", sum.steps_completed},
          {"aborted", sum.aborted},
          {"val_mse", sum.val_mse},
          {"baseline_mse", sum.baseline_mse},
          {"masked_confidence", final_eval.mean_confidence}});

    if (write_files) {
        sum.checkpoint_path = cfg.out_dir + "/checkpoint_final.mske";
        save_model(sum.checkpoint_path, model,
                   checkpoint_metadata(cfg, sum.steps_completed, sum.val_mse,
                                       sum.baseline_mse));
        sum.log_path = cfg.out_dir + "/log.jsonl";
        std::ofstream f(sum.log_path, std::ios::trunc);
        if (!f) throw IoError("cannot open " + sum.log_path + " for writing");
        f << log;
        if (!f) throw IoError("short write to " + sum.log_path);
    }
    if (log_out) *log_out = log;
    return out;
}

} // namespace mvc
