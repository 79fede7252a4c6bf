#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvc/checkpoint.hpp"
#include "mvc/errors.hpp"
#include "mvc/io.hpp"
#include "mvc/train.hpp"

using namespace mvc;

namespace {

const std::string& harness_dir() {
    static const std::string dir = [] {
        const std::filesystem::path d =
            std::filesystem::temp_directory_path() / "mvc_train_suite";
        std::filesystem::remove_all(d);
        std::filesystem::create_directories(d);
        return d.string();
    }();
    return dir;
}

std::string tmp_file(const std::string& name) { return harness_dir() + "/" + name; }

void spit(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    f << text;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

template <typename E, typename F>
std::string error_text(F&& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return {};
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

// Small enough to keep whole runs in the tens of milliseconds.
TrainConfig tiny_train() {
    TrainConfig t;
    t.backbone.dim = 8;
    t.backbone.n_heads = 2;
    t.backbone.n_blocks = 2;
    t.backbone.patch_size = 4;
    t.backbone.mlp_ratio = 2;
    t.stream.min_views = 2;
    t.stream.max_views = 2;
    t.stream.image_h = 16;
    t.stream.image_w = 16;
    t.steps = 3;
    t.batch_scenes = 1;
    t.seed = 11;
    t.log_interval = 1;
    t.val_scenes = 2;
    t.optim.lr_peak = 1e-3;
    t.optim.warmup_frac = 0.2;
    return t;
}

std::vector<nlohmann::json> parse_log(const std::string& log) {
    std::vector<nlohmann::json> lines;
    std::istringstream ss(log);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        lines.push_back(nlohmann::json::parse(line));
    }
    return lines;
}

bool params_equal(const ParamSet& a, const ParamSet& b) {
    if (a.items.size() != b.items.size()) return false;
    for (size_t i = 0; i < a.items.size(); ++i) {
        if (a.items[i].first != b.items[i].first) return false;
        if (a.items[i].second.data() != b.items[i].second.data()) return false;
    }
    return true;
}

} // namespace

TEST_CASE("config files parse sections, comments and whitespace") {
    const std::string path = tmp_file("basic.cfg");
    spit(path,
         "# top comment\n"
         "top_level = 3\n"
         "\n"
         "[backbone]\n"
         "dim = 16   # inline comment\n"
         "heads = 4\n"
         "\n"
         "[ stream ]\n"
         "image_h = 32\n"
         "name = hello world\n");
    const ConfigMap cfg = ConfigMap::from_file(path);
    CHECK(cfg.has("backbone.dim"));
    CHECK(cfg.get_int("backbone.dim", 0) == 16);
    CHECK(cfg.get_int("backbone.heads", 0) == 4);
    CHECK(cfg.get_int("top_level", 0) == 3); // keys before any section stay bare
    CHECK(cfg.get_int("stream.image_h", 0) == 32);
    CHECK(cfg.get_str("stream.name", "") == "hello world");
    CHECK_FALSE(cfg.has("stream.missing"));

    spit(tmp_file("open.cfg"), "x = 1\n[oops\n");
    const std::string open_msg =
        error_text<ConfigError>([&] { ConfigMap::from_file(tmp_file("open.cfg")); });
    CHECK(contains(open_msg, ":2:"));
    CHECK(contains(open_msg, "unterminated section"));

    spit(tmp_file("anon.cfg"), "[]\n");
    CHECK(contains(error_text<ConfigError>([&] { ConfigMap::from_file(tmp_file("anon.cfg")); }),
                   "empty section name"));

    spit(tmp_file("bare.cfg"), "novalue\n");
    CHECK(contains(error_text<ConfigError>([&] { ConfigMap::from_file(tmp_file("bare.cfg")); }),
                   "expected 'key = value'"));

    spit(tmp_file("nokey.cfg"), "= 5\n");
    CHECK(
        contains(error_text<ConfigError>([&] { ConfigMap::from_file(tmp_file("nokey.cfg")); }),
                 "empty key"));

    CHECK(contains(error_text<IoError>([&] { ConfigMap::from_file(tmp_file("absent.cfg")); }),
                   "cannot open config file"));
}

TEST_CASE("typed getters convert values and report type errors") {
    ConfigMap cfg;
    cfg.set("a.i", "42");
    cfg.set("a.neg", "-7");
    cfg.set("a.u", "18446744073709551615");
    cfg.set("a.d", "2.5e-3");
    cfg.set("a.word", "hello");

    CHECK(cfg.get_int("a.i", 0) == 42);
    CHECK(cfg.get_int("a.neg", 0) == -7);
    CHECK(cfg.get_u64("a.u", 0) == 18446744073709551615ull);
    CHECK(cfg.get_double("a.d", 0.0) == 2.5e-3);
    CHECK(cfg.get_str("a.word", "") == "hello");

    CHECK(cfg.get_int("nope.int", 5) == 5);
    CHECK(cfg.get_double("nope.dbl", 1.5) == 1.5);
    CHECK(cfg.get_str("nope.str", "dflt") == "dflt");
    CHECK(cfg.get_bool("nope.flag", true) == true);

    for (const char* t : {"true", "1", "yes", "on"}) {
        ConfigMap c;
        c.set("f", t);
        CHECK(c.get_bool("f", false));
    }
    for (const char* f : {"false", "0", "no", "off"}) {
        ConfigMap c;
        c.set("f", f);
        CHECK_FALSE(c.get_bool("f", true));
    }

    CHECK(contains(error_text<ConfigError>([&] { cfg.get_int("a.d", 0); }),
                   "expects an integer"));
    CHECK(contains(error_text<ConfigError>([&] { cfg.get_double("a.word", 0.0); }),
                   "expects a number"));
    CHECK(contains(error_text<ConfigError>([&] { cfg.get_bool("a.i", false); }),
                   "expects a boolean"));
    CHECK(contains(error_text<ConfigError>([&] { cfg.get_u64("a.word", 0); }),
                   "expects an unsigned integer"));
}

TEST_CASE("unused keys are reported after loading") {
    ConfigMap cfg;
    cfg.set("backbone.dim", "16");
    cfg.set("backbone.heads", "4");
    cfg.set("trian.steps", "100"); // deliberate typo
    (void)backbone_from_config(cfg);
    const std::vector<std::string> left = cfg.unused();
    REQUIRE(left.size() == 1);
    CHECK(left[0] == "trian.steps");
}

TEST_CASE("seed resolution prefers explicit config over the environment") {
    ConfigMap with;
    with.set("train.seed", "9");
    ConfigMap without;

    REQUIRE(setenv("MVC_SEED", "42", 1) == 0);
    CHECK(resolve_seed(with, "train.seed", 7) == 9);
    CHECK(resolve_seed(without, "train.seed", 7) == 42);

    REQUIRE(setenv("MVC_SEED", "9x", 1) == 0);
    CHECK(contains(error_text<ConfigError>([&] { resolve_seed(without, "train.seed", 7); }),
                   "MVC_SEED"));

    REQUIRE(unsetenv("MVC_SEED") == 0);
    CHECK(resolve_seed(without, "train.seed", 7) == 7);
    CHECK(resolve_seed(with, "train.seed", 7) == 9);
}

TEST_CASE("section loaders apply overrides and validate the result") {
    ConfigMap cfg;
    cfg.set("backbone.dim", "16");
    cfg.set("backbone.heads", "2");
    cfg.set("backbone.rope_base", "50");
    const BackboneConfig b = backbone_from_config(cfg);
    CHECK(b.dim == 16);
    CHECK(b.n_heads == 2);
    CHECK(b.rope_base == 50.0);
    CHECK(b.n_blocks == BackboneConfig{}.n_blocks); // untouched fields keep defaults

    ConfigMap bad;
    bad.set("backbone.dim", "10");
    bad.set("backbone.heads", "4");
    CHECK_THROWS_AS(backbone_from_config(bad), ConfigError);

    ConfigMap rest;
    rest.set("mask.random_ratio", "0.8");
    rest.set("mask.n_reference", "2");
    rest.set("stream.max_views", "3");
    rest.set("stream.w_checker", "0.5");
    rest.set("optim.lr_peak", "5e-4");
    rest.set("optim.grad_clip", "2");
    const MaskConfig m = mask_from_config(rest);
    CHECK(m.random_ratio == 0.8);
    CHECK(m.n_reference == 2);
    CHECK(m.block_ratio == MaskConfig{}.block_ratio);
    const StreamConfig s = stream_from_config(rest);
    CHECK(s.max_views == 3);
    CHECK(s.w_checker == 0.5);
    CHECK(s.image_h == StreamConfig{}.image_h);
    const OptimConfig o = optim_from_config(rest);
    CHECK(o.lr_peak == 5e-4);
    CHECK(o.grad_clip == 2.0);
    CHECK(o.beta1 == OptimConfig{}.beta1);
}

TEST_CASE("train_from_config maps every section into one training plan") {
    ConfigMap cfg;
    cfg.set("backbone.dim", "16");
    cfg.set("backbone.heads", "4");
    cfg.set("backbone.blocks", "2");
    cfg.set("backbone.patch_size", "4");
    cfg.set("backbone.mlp_ratio", "3");
    cfg.set("mask.random_ratio", "0.85");
    cfg.set("stream.min_views", "2");
    cfg.set("stream.max_views", "3");
    cfg.set("stream.image_h", "32");
    cfg.set("stream.image_w", "32");
    cfg.set("optim.lr_peak", "3e-4");
    cfg.set("loss.eps", "0.2");
    cfg.set("loss.lambda", "0.3");
    cfg.set("train.steps", "7");
    cfg.set("train.batch_scenes", "2");
    cfg.set("train.seed", "123");
    cfg.set("train.log_interval", "2");
    cfg.set("train.eval_interval", "3");
    cfg.set("train.checkpoint_interval", "4");
    cfg.set("train.val_scenes", "2");
    cfg.set("train.out_dir", "elsewhere");

    const TrainConfig t = train_from_config(cfg);
    CHECK(t.backbone.dim == 16);
    CHECK(t.backbone.n_heads == 4);
    CHECK(t.backbone.n_blocks == 2);
    CHECK(t.backbone.patch_size == 4);
    CHECK(t.backbone.mlp_ratio == 3);
    CHECK(t.mask.random_ratio == 0.85);
    CHECK(t.stream.min_views == 2);
    CHECK(t.stream.max_views == 3);
    CHECK(t.stream.image_h == 32);
    CHECK(t.stream.image_w == 32);
    CHECK(t.optim.lr_peak == 3e-4);
    CHECK(t.loss.eps == 0.2);
    CHECK(t.loss.lambda == 0.3);
    CHECK(t.steps == 7);
    CHECK(t.batch_scenes == 2);
    CHECK(t.seed == 123);
    CHECK(t.log_interval == 2);
    CHECK(t.eval_interval == 3);
    CHECK(t.checkpoint_interval == 4);
    CHECK(t.val_scenes == 2);
    CHECK(t.out_dir == "elsewhere");
    CHECK(cfg.unused().empty());
}

TEST_CASE("training configs validate their numeric ranges") {
    CHECK_NOTHROW(tiny_train().validate());

    TrainConfig zero = tiny_train();
    zero.steps = 0; // evaluation-only runs are legal
    CHECK_NOTHROW(zero.validate());

    TrainConfig t = tiny_train();
    t.steps = -1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = tiny_train();
    t.batch_scenes = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = tiny_train();
    t.val_scenes = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = tiny_train();
    t.log_interval = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = tiny_train();
    t.optim.lr_peak = -1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("a zero-step run equals a fresh initialization") {
    TrainConfig cfg = tiny_train();
    cfg.steps = 0;
    std::string log;
    const TrainOutput out = pretrain(cfg, false, &log);
    CHECK(out.summary.steps_completed == 0);
    CHECK_FALSE(out.summary.aborted);
    CHECK(out.summary.final_loss == 0.0);
    CHECK(out.summary.checkpoint_path.empty());
    CHECK(out.summary.val_mse > 0.0);
    CHECK(out.summary.baseline_mse > 0.0);

    const ModelBundle fresh = make_model(cfg.backbone, cfg.seed);
    CHECK(params_equal(out.bundle.model.params, fresh.model.params));

    const auto lines = parse_log(log);
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].at("event") == "final");
    CHECK(lines[0].at("schema") == 1);
    CHECK(lines[0].at("steps_completed") == 0);
}

TEST_CASE("two runs with one config produce byte-identical logs and parameters") {
    const TrainConfig cfg = tiny_train();
    std::string log1, log2;
    const TrainOutput a = pretrain(cfg, false, &log1);
    const TrainOutput b = pretrain(cfg, false, &log2);

    CHECK(log1 == log2);
    CHECK(params_equal(a.bundle.model.params, b.bundle.model.params));
    CHECK(a.summary.final_loss == b.summary.final_loss);
    CHECK(a.summary.val_mse == b.summary.val_mse);
    CHECK(a.summary.baseline_mse == b.summary.baseline_mse);
    CHECK(a.summary.steps_completed == cfg.steps);

    TrainConfig other = cfg;
    other.seed = 12;
    std::string log3;
    pretrain(other, false, &log3);
    CHECK(log1 != log3); // the seed actually reaches the run
}

TEST_CASE("the training log is valid json lines with stable fields") {
    TrainConfig cfg = tiny_train();
    cfg.steps = 5;
    cfg.log_interval = 2;
    cfg.eval_interval = 2;
    std::string log;
    pretrain(cfg, false, &log);

    const auto lines = parse_log(log);
    REQUIRE(!lines.empty());
    const std::set<std::string> allowed{"step", "eval", "final", "abort", "step_skipped"};
    std::vector<int64_t> step_events, eval_events;
    for (const nlohmann::json& j : lines) {
        CHECK(j.at("schema") == 1);
        const std::string event = j.at("event");
        CHECK(allowed.count(event) == 1);
        if (event == "step") {
            for (const char* k : {"loss", "mse", "confidence", "lr", "grad_norm"})
                CHECK(j.contains(k));
            step_events.push_back(j.at("step").get<int64_t>());
        } else if (event == "eval") {
            for (const char* k : {"val_mse", "baseline_mse", "masked_confidence"})
                CHECK(j.contains(k));
            eval_events.push_back(j.at("step").get<int64_t>());
        }
    }
    // interval 2 over 5 steps logs after steps 2 and 4 plus the closing step
    CHECK(step_events == std::vector<int64_t>({1, 3, 4}));
    // interior evals only; the final evaluation is its own event
    CHECK(eval_events == std::vector<int64_t>({1, 3}));
    CHECK(lines.back().at("event") == "final");
    CHECK(lines.back().at("aborted") == false);
}

TEST_CASE("checkpoints and logs land in the requested directory") {
    namespace fs = std::filesystem;
    TrainConfig cfg = tiny_train();
    cfg.steps = 4;
    cfg.checkpoint_interval = 2;
    cfg.out_dir = tmp_file("run_a");
    std::string log;
    const TrainOutput out = pretrain(cfg, true, &log);

    CHECK(fs::exists(cfg.out_dir + "/checkpoint_000002.mske"));
    // the boundary step folds into the final checkpoint instead
    CHECK_FALSE(fs::exists(cfg.out_dir + "/checkpoint_000004.mske"));
    REQUIRE(fs::exists(cfg.out_dir + "/checkpoint_final.mske"));
    REQUIRE(fs::exists(cfg.out_dir + "/log.jsonl"));
    CHECK(out.summary.checkpoint_path == cfg.out_dir + "/checkpoint_final.mske");
    CHECK(out.summary.log_path == cfg.out_dir + "/log.jsonl");
    CHECK(slurp(out.summary.log_path) == log);

    const Checkpoint final_ck = load_checkpoint(out.summary.checkpoint_path);
    const nlohmann::json meta = nlohmann::json::parse(final_ck.metadata);
    CHECK(meta.at("step") == 4);
    CHECK(meta.at("seed") == cfg.seed);
    CHECK(meta.at("backbone").at("dim") == cfg.backbone.dim);
    CHECK(meta.at("val_mse").get<double>() == doctest::Approx(out.summary.val_mse));
    REQUIRE(final_ck.records.size() == out.bundle.model.params.items.size());
    for (size_t i = 0; i < final_ck.records.size(); ++i) {
        const auto& [name, t] = out.bundle.model.params.items[i];
        CHECK(final_ck.records[i].name == name);
        for (size_t j = 0; j < t.data().size(); ++j)
            CHECK(final_ck.records[i].data[j] == static_cast<float>(t.data()[j]));
    }

    // the interval checkpoint reloads into a working model of the same shape
    const LoadedModel mid = load_model(cfg.out_dir + "/checkpoint_000002.mske");
    CHECK(mid.step == 2);
    CHECK(mid.bundle.model.cfg.dim == cfg.backbone.dim);
}

TEST_CASE("saved models reload with the same architecture and values") {
    const TrainConfig cfg = tiny_train();
    const ModelBundle mb = make_model(cfg.backbone, 3);
    const std::string path = tmp_file("model_roundtrip.mske");
    save_model(path, mb.model, checkpoint_metadata(cfg, 5, 0.25, 0.5));

    const LoadedModel lm = load_model(path);
    CHECK(lm.step == 5);
    CHECK(lm.bundle.model.cfg.dim == cfg.backbone.dim);
    CHECK(lm.bundle.model.cfg.n_heads == cfg.backbone.n_heads);
    CHECK(lm.bundle.model.cfg.n_blocks == cfg.backbone.n_blocks);
    CHECK(lm.bundle.model.cfg.patch_size == cfg.backbone.patch_size);
    CHECK(lm.bundle.model.cfg.mlp_ratio == cfg.backbone.mlp_ratio);
    CHECK(lm.bundle.model.cfg.rope_base == cfg.backbone.rope_base);
    const nlohmann::json meta = nlohmann::json::parse(lm.metadata);
    CHECK(meta.at("schema") == 1);
    CHECK(meta.at("loss").at("eps") == cfg.loss.eps);

    REQUIRE(lm.bundle.model.params.items.size() == mb.model.params.items.size());
    for (size_t i = 0; i < mb.model.params.items.size(); ++i) {
        const auto& src = mb.model.params.items[i].second.data();
        const auto& dst = lm.bundle.model.params.items[i].second.data();
        REQUIRE(src.size() == dst.size());
        for (size_t j = 0; j < src.size(); ++j)
            CHECK(dst[j] == static_cast<double>(static_cast<float>(src[j])));
    }

    Checkpoint mangled;
    mangled.metadata = "not json";
    save_checkpoint(tmp_file("mangled.mske"), mangled);
    CHECK(contains(error_text<IoError>([&] { load_model(tmp_file("mangled.mske")); }),
                   "invalid metadata"));

    Checkpoint bare;
    bare.metadata = "{}";
    save_checkpoint(tmp_file("bare.mske"), bare);
    CHECK(contains(error_text<IoError>([&] { load_model(tmp_file("bare.mske")); }),
                   "no architecture metadata"));
}

TEST_CASE("masked evaluation is deterministic and its baseline matches a recompute") {
    const TrainConfig cfg = tiny_train();
    SceneStream stream(cfg.stream, 91);
    std::vector<Scene> scenes{stream.next(), stream.next()};

    ModelBundle mb = make_model(cfg.backbone, 17);
    const Eigen::Vector3d mean_rgb(0.4, 0.5, 0.6);
    const MaskedEval e1 =
        eval_masked_mse(*mb.tape, mb.model, scenes, cfg.mask, 99, mean_rgb);
    const MaskedEval e2 =
        eval_masked_mse(*mb.tape, mb.model, scenes, cfg.mask, 99, mean_rgb);
    CHECK(e1.model_mse == e2.model_mse);
    CHECK(e1.baseline_mse == e2.baseline_mse);
    CHECK(e1.mean_confidence == e2.mean_confidence);
    CHECK(e1.masked_patches == e2.masked_patches);
    CHECK(e1.model_mse > 0.0);
    CHECK(e1.mean_confidence > 0.0);
    CHECK(e1.mean_confidence < 1.0);

    // the mean-color baseline, recomputed from the same mask plans
    Rng plan_rng(99);
    double base_sq = 0.0;
    int64_t masked = 0;
    const int64_t pd = cfg.backbone.patch_dim();
    for (const Scene& scene : scenes) {
        const PatchGrid grid(scene.spec.image_h, scene.spec.image_w, cfg.backbone.patch_size);
        const MaskPlan plan = sample_mask_plan(
            cfg.mask, static_cast<int64_t>(scene.views.size()), grid, plan_rng);
        for (size_t v = 0; v < scene.views.size(); ++v) {
            const std::vector<double>& tv =
                patchify(scene.views[v].image, cfg.backbone.patch_size).data();
            for (int64_t j = 0; j < grid.count(); ++j) {
                if (!plan.views[v].masked[static_cast<size_t>(j)]) continue;
                ++masked;
                for (int64_t k = 0; k < pd; ++k) {
                    const double diff = mean_rgb[k % 3] - tv[static_cast<size_t>(j * pd + k)];
                    base_sq += diff * diff;
                }
            }
        }
    }
    REQUIRE(masked > 0);
    CHECK(e1.masked_patches == masked);
    CHECK(e1.baseline_mse ==
          doctest::Approx(base_sq / static_cast<double>(masked * pd)).epsilon(1e-12));
}

TEST_CASE("the dataset mean color matches a direct average") {
    const StreamConfig stream = tiny_train().stream;
    const Eigen::Vector3d mean = dataset_mean_color(stream, 55, 2);

    SceneStream s(stream, 55);
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int64_t count = 0;
    for (int i = 0; i < 2; ++i) {
        const Scene scene = s.next();
        for (const SceneView& v : scene.views)
            for (size_t px = 0; px < v.image.rgb.size(); px += 3) {
                sum.x() += v.image.rgb[px];
                sum.y() += v.image.rgb[px + 1];
                sum.z() += v.image.rgb[px + 2];
                ++count;
            }
    }
    REQUIRE(count > 0);
    for (int c = 0; c < 3; ++c) {
        CHECK(mean[c] == doctest::Approx(sum[c] / count).epsilon(1e-14));
        CHECK(mean[c] > 0.0);
        CHECK(mean[c] < 1.0);
    }
}

TEST_CASE("a destabilized run aborts instead of emitting non-finite state") {
    TrainConfig cfg = tiny_train();
    cfg.steps = 5;
    cfg.optim.lr_peak = 1e308; // one update throws the parameters past overflow
    cfg.optim.warmup_frac = 0.0;
    std::string log;
    const TrainOutput out = pretrain(cfg, false, &log);

    CHECK(out.summary.aborted);
    CHECK(out.summary.steps_completed >= 1);
    CHECK(out.summary.steps_completed < cfg.steps);

    const auto lines = parse_log(log);
    bool saw_abort = false;
    for (const nlohmann::json& j : lines)
        if (j.at("event") == "abort") {
            saw_abort = true;
            CHECK(j.contains("reason"));
        }
    CHECK(saw_abort);
    CHECK(lines.back().at("event") == "final");
    CHECK(lines.back().at("aborted") == true);
}
