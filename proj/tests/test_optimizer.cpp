#include <doctest.h>

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mvc/errors.hpp"
#include "mvc/optimizer.hpp"
#include "mvc/tensor.hpp"

using namespace mvc;

namespace {

// Runs one forward/backward pass whose only purpose is to deposit the exact
// gradient value g on every element of each listed tensor.
void attach_grads(Tape& tape, const std::vector<std::pair<Tensor, double>>& gs) {
    tape.reset();
    tape.zero_grad();
    Tensor loss;
    for (const auto& [t, g] : gs) {
        const Tensor term = sum_all(mul(t, Tensor::full(t.shape(), g)));
        loss = loss.defined() ? add(loss, term) : term;
    }
    tape.backward(loss);
}

} // namespace

TEST_CASE("optimizer configuration validation rejects out-of-range settings") {
    OptimConfig good;
    CHECK_NOTHROW(good.validate());

    auto broken = [](auto&& tweak) {
        OptimConfig c;
        tweak(c);
        return c;
    };
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.lr_peak = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.beta1 = 1.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.beta2 = -0.1; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.eps = 0.0; }).validate(), ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.weight_decay = -1.0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.warmup_frac = 1.0; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.warmup_frac = -0.5; }).validate(),
                    ConfigError);
    CHECK_THROWS_AS(broken([](OptimConfig& c) { c.total_steps = 0; }).validate(),
                    ConfigError);

    // the constructor validates too
    Tape tape;
    Tensor p = tape.leaf({1}, {0.0});
    OptimConfig bad;
    bad.lr_peak = -1.0;
    CHECK_THROWS_AS(AdamW({p}, bad), ConfigError);
}

TEST_CASE("the learning rate warms up linearly and decays along a cosine") {
    OptimConfig cfg;
    cfg.lr_peak = 0.1;
    cfg.warmup_frac = 0.1;
    cfg.total_steps = 100;

    CHECK(schedule_lr(cfg, 0) == 0.0);
    CHECK(schedule_lr(cfg, 5) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(schedule_lr(cfg, 10) == 0.1); // warmup hands over exactly at the peak
    CHECK(schedule_lr(cfg, 55) == doctest::Approx(0.05).epsilon(1e-12)); // cosine midpoint
    CHECK(schedule_lr(cfg, 100) >= 0.0);
    CHECK(schedule_lr(cfg, 100) <= 1e-17);
    CHECK(schedule_lr(cfg, 250) == schedule_lr(cfg, 100)); // progress clamps at one

    for (int64_t s = 0; s < 10; ++s) CHECK(schedule_lr(cfg, s + 1) > schedule_lr(cfg, s));
    for (int64_t s = 10; s < 100; ++s) CHECK(schedule_lr(cfg, s + 1) < schedule_lr(cfg, s));

    OptimConfig flat = cfg;
    flat.warmup_frac = 0.0;
    CHECK(schedule_lr(flat, 0) == 0.1); // no warmup starts at the peak

    OptimConfig tiny = cfg;
    tiny.total_steps = 7;
    tiny.warmup_frac = 0.05; // rounds down to zero warmup steps
    CHECK(schedule_lr(tiny, 0) == 0.1);
}

TEST_CASE("moment updates follow the adaptive recurrence with decoupled decay") {
    Tape tape;
    Tensor vec = tape.leaf({1}, {0.5});
    Tensor mat = tape.leaf({1, 1}, {0.8});

    OptimConfig cfg;
    cfg.lr_peak = 0.01;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.95;
    cfg.eps = 1e-8;
    cfg.weight_decay = 0.1;
    cfg.grad_clip = 0.0; // isolates the recurrence from clipping
    cfg.warmup_frac = 0.2;
    cfg.total_steps = 20;
    AdamW opt({vec, mat}, cfg);

    double wv = 0.5, wm = 0.8;
    double mv = 0.0, vv = 0.0, mm = 0.0, vm = 0.0;
    for (int k = 0; k < 20; ++k) {
        const double gv = std::sin(1.3 * k + 0.4);
        const double gm = std::cos(0.7 * k);
        attach_grads(tape, {{vec, gv}, {mat, gm}});
        const StepStats st = opt.step();
        CHECK(st.applied);
        CHECK(st.lr == schedule_lr(cfg, k));
        CHECK(st.grad_norm == doctest::Approx(std::sqrt(gv * gv + gm * gm)).epsilon(1e-12));

        // independent recurrence; only the matrix sees weight decay
        const double b1 = 1.0 - std::pow(0.9, k + 1.0);
        const double b2 = 1.0 - std::pow(0.95, k + 1.0);
        mv = 0.9 * mv + 0.1 * gv;
        vv = 0.95 * vv + 0.05 * gv * gv;
        wv -= st.lr * (mv / b1) / (std::sqrt(vv / b2) + 1e-8);
        mm = 0.9 * mm + 0.1 * gm;
        vm = 0.95 * vm + 0.05 * gm * gm;
        wm -= st.lr * ((mm / b1) / (std::sqrt(vm / b2) + 1e-8) + 0.1 * wm);

        CHECK(vec.data()[0] == doctest::Approx(wv).epsilon(1e-12));
        CHECK(mat.data()[0] == doctest::Approx(wm).epsilon(1e-12));
    }
    CHECK(opt.steps_taken() == 20);
    CHECK(opt.first_moments()[0][0] == doctest::Approx(mv).epsilon(1e-12));
    CHECK(opt.second_moments()[1][0] == doctest::Approx(vm).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales moments by the pre-clip global norm") {
    OptimConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.warmup_frac = 0.0;
    cfg.weight_decay = 0.0;
    cfg.grad_clip = 1.0;

    Tape tape;
    Tensor a = tape.leaf({1}, {0.0});
    Tensor b = tape.leaf({1}, {0.0});
    AdamW opt({a, b}, cfg);
    attach_grads(tape, {{a, 3.0}, {b, 4.0}});
    const StepStats st = opt.step();
    CHECK(st.applied);
    CHECK(st.grad_norm == doctest::Approx(5.0).epsilon(1e-12)); // reported before clipping

    // a norm of 5 against a ceiling of 1 scales both gradients by 0.2
    CHECK(opt.first_moments()[0][0] == doctest::Approx(0.1 * 0.6).epsilon(1e-12));
    CHECK(opt.first_moments()[1][0] == doctest::Approx(0.1 * 0.8).epsilon(1e-12));
    CHECK(opt.second_moments()[0][0] == doctest::Approx(0.05 * 0.36).epsilon(1e-12));
    auto first_step_delta = [&](double g) { return cfg.lr_peak * g / (std::abs(g) + cfg.eps); };
    CHECK(a.data()[0] == doctest::Approx(-first_step_delta(0.6)).epsilon(1e-12));
    CHECK(b.data()[0] == doctest::Approx(-first_step_delta(0.8)).epsilon(1e-12));

    // gradients under the ceiling pass through untouched
    Tape tape2;
    Tensor c = tape2.leaf({1}, {0.0});
    Tensor d = tape2.leaf({1}, {0.0});
    AdamW opt2({c, d}, cfg);
    attach_grads(tape2, {{c, 0.3}, {d, 0.4}});
    CHECK(opt2.step().grad_norm == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(opt2.first_moments()[0][0] == doctest::Approx(0.1 * 0.3).epsilon(1e-12));

    // a non-positive ceiling disables clipping entirely
    OptimConfig open = cfg;
    open.grad_clip = 0.0;
    Tape tape3;
    Tensor e = tape3.leaf({1}, {0.0});
    AdamW opt3({e}, open);
    attach_grads(tape3, {{e, 30.0}});
    CHECK(opt3.step().grad_norm == doctest::Approx(30.0).epsilon(1e-12));
    CHECK(opt3.first_moments()[0][0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("steps with non-finite gradients abort without touching state") {
    Tape tape;
    Tensor p = tape.leaf({2}, {1.0, -2.0});
    OptimConfig cfg;
    cfg.warmup_frac = 0.0;
    AdamW opt({p}, cfg);

    attach_grads(tape, {{p, std::numeric_limits<double>::quiet_NaN()}});
    const StepStats st = opt.step();
    CHECK_FALSE(st.applied);
    CHECK(st.lr == schedule_lr(cfg, 0));
    CHECK_FALSE(std::isfinite(st.grad_norm));
    CHECK(p.data() == std::vector<double>({1.0, -2.0}));
    CHECK(opt.steps_taken() == 0);
    CHECK(opt.first_moments()[0] == std::vector<double>({0.0, 0.0}));
    CHECK(opt.second_moments()[0] == std::vector<double>({0.0, 0.0}));

    // a finite gradient whose squared norm overflows also aborts
    attach_grads(tape, {{p, 1e200}});
    CHECK_FALSE(opt.step().applied);
    CHECK(p.data() == std::vector<double>({1.0, -2.0}));
    CHECK(opt.steps_taken() == 0);

    // recovery: the next finite gradient applies as the true first step
    attach_grads(tape, {{p, 0.5}});
    const StepStats ok = opt.step();
    CHECK(ok.applied);
    CHECK(opt.steps_taken() == 1);
    const double upd = cfg.lr_peak * 0.5 / (0.5 + cfg.eps); // mhat = g, vhat = g * g here
    CHECK(p.data()[0] == doctest::Approx(1.0 - upd).epsilon(1e-12));
    CHECK(p.data()[1] == doctest::Approx(-2.0 - upd).epsilon(1e-12));
}

TEST_CASE("decay applies to matrices even when a step brings them no gradient") {
    Tape tape;
    Tensor used = tape.leaf({1}, {1.0});
    Tensor mat = tape.leaf({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor vec = tape.leaf({4}, {1.0, 2.0, 3.0, 4.0});
    OptimConfig cfg;
    cfg.warmup_frac = 0.0;
    cfg.weight_decay = 0.05;
    AdamW opt({used, mat, vec}, cfg);

    attach_grads(tape, {{used, 0.25}});
    const StepStats st = opt.step();
    CHECK(st.applied);
    CHECK(st.grad_norm == doctest::Approx(0.25).epsilon(1e-12));

    // gradient-free vector: zero moment updates leave it bit identical
    CHECK(vec.data() == std::vector<double>({1.0, 2.0, 3.0, 4.0}));
    // gradient-free matrix: decoupled decay still shrinks it toward zero
    for (int i = 0; i < 4; ++i)
        CHECK(mat.data()[i] ==
              doctest::Approx((1.0 + i) * (1.0 - cfg.lr_peak * 0.05)).epsilon(1e-12));
}

TEST_CASE("after settling, each update approaches the scheduled rate times the sign") {
    OptimConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.warmup_frac = 0.0;
    cfg.total_steps = 100000; // keeps the cosine essentially flat over ten steps
    cfg.weight_decay = 0.0;
    cfg.grad_clip = 0.0;

    Tape tape;
    Tensor up = tape.leaf({1}, {0.3});
    Tensor down = tape.leaf({1}, {0.3});
    AdamW opt({up, down}, cfg);
    for (int k = 0; k < 10; ++k) {
        attach_grads(tape, {{up, 0.02}, {down, -0.02}});
        CHECK(opt.step().applied);
    }
    // constant gradients make the bias-corrected moments exact, so ten steps
    // walk almost exactly ten scheduled rates in the gradient's direction
    CHECK(up.data()[0] == doctest::Approx(0.3 - 10.0 * cfg.lr_peak).epsilon(1e-6));
    CHECK(down.data()[0] == doctest::Approx(0.3 + 10.0 * cfg.lr_peak).epsilon(1e-6));
}
