#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mvc/errors.hpp"
#include "mvc/geometry.hpp"
#include "mvc/rng.hpp"

using namespace mvc;

namespace {

Eigen::Matrix3d rot_z(double deg) {
    return Eigen::AngleAxisd(deg * M_PI / 180.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitX();
    return Eigen::AngleAxisd(rng.uniform(0.0, M_PI), axis.normalized()).toRotationMatrix();
}

Eigen::Matrix4d make_pose(const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.topLeftCorner<3, 3>() = R;
    T.topRightCorner<3, 1>() = t;
    return T;
}

// Intrinsics with power-of-two focal lengths; see the exact-match oracles.
Eigen::Matrix3d make_k(double fx, double fy, double cx, double cy) {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    K(0, 0) = fx;
    K(1, 1) = fy;
    K(0, 2) = cx;
    K(1, 2) = cy;
    return K;
}

DepthMap constant_depth(int64_t h, int64_t w, double d) {
    DepthMap m;
    m.h = h;
    m.w = w;
    m.d.assign(static_cast<size_t>(h * w), d);
    return m;
}

} // namespace

TEST_CASE("unproject fixtures") {
    const Eigen::Vector3d a = unproject({2.0, 3.0}, 2.0, Eigen::Matrix3d::Identity());
    CHECK(a.x() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(a.y() == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(a.z() == doctest::Approx(2.0).epsilon(1e-12));

    const Eigen::Vector3d b = unproject({3.0, 5.0}, 4.0, make_k(2, 1, 1, 0));
    CHECK(b.x() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(b.y() == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(b.z() == doctest::Approx(4.0).epsilon(1e-12));

    CHECK_THROWS_AS(unproject({1.0, 1.0}, 0.0, Eigen::Matrix3d::Identity()), DomainError);
    CHECK_THROWS_AS(unproject({1.0, 1.0}, -2.0, Eigen::Matrix3d::Identity()), DomainError);
}

TEST_CASE("project rejects points at or behind the camera") {
    const Eigen::Vector2d p = project({4.0, 6.0, 2.0}, Eigen::Matrix3d::Identity());
    CHECK(p.x() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(p.y() == doctest::Approx(3.0).epsilon(1e-12));
    CHECK_THROWS_AS(project({0.0, 0.0, 0.0}, Eigen::Matrix3d::Identity()), DomainError);
    CHECK_THROWS_AS(project({1.0, 1.0, -0.5}, Eigen::Matrix3d::Identity()), DomainError);
}

TEST_CASE("10k random project/unproject round trips stay under 1e-9 px") {
    Rng rng(60);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const Eigen::Matrix3d K = make_k(rng.uniform(50.0, 500.0), rng.uniform(50.0, 500.0),
                                         rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0));
        const Eigen::Vector2d px(rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0));
        const double d = rng.uniform(0.1, 10.0);
        const Eigen::Vector2d back = project(unproject(px, d, K), K);
        worst = std::max(worst, (back - px).norm());
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("camera transforms invert each other") {
    Rng rng(61);
    for (int i = 0; i < 100; ++i) {
        Camera cam;
        cam.cam_to_world = make_pose(random_rotation(rng),
                                     {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0),
                                      rng.uniform(-5.0, 5.0)});
        const Eigen::Vector3d p(rng.normal(), rng.normal(), rng.normal());
        const Eigen::Vector3d rt = cam.world_point_to_cam(cam.cam_point_to_world(p));
        CHECK((rt - p).norm() < 1e-12);
    }
}

TEST_CASE("bilinear depth interpolates and renormalizes around holes") {
    DepthMap m;
    m.h = 2;
    m.w = 2;
    m.d = {1.0, 2.0, 3.0, 4.0};
    CHECK(bilinear_depth(m, 0.0, 0.0) == 1.0);
    CHECK(bilinear_depth(m, 1.0, 1.0) == 4.0);
    CHECK(bilinear_depth(m, 0.5, 0.5) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(bilinear_depth(m, 0.5, 0.0) == doctest::Approx(1.5).epsilon(1e-12));

    // Hole in one corner: remaining weights renormalize.
    m.d = {0.0, 2.0, 3.0, 4.0};
    CHECK(bilinear_depth(m, 0.5, 0.5) == doctest::Approx((0.25 * (2 + 3 + 4)) / 0.75));
    CHECK(bilinear_depth(m, 0.0, 0.0) == 0.0); // only the invalid corner contributes

    CHECK(bilinear_depth(m, -0.1, 0.5) == 0.0);
    CHECK(bilinear_depth(m, 0.5, 1.2) == 0.0);
    m.d = {0.0, 0.0, 0.0, 0.0};
    CHECK(bilinear_depth(m, 0.5, 0.5) == 0.0);
}

TEST_CASE("identical cameras track every seed onto itself") {
    std::vector<Camera> cams(3);
    for (auto& c : cams) c.K = make_k(8, 8, 7.5, 7.5);
    std::vector<DepthMap> depths(3, constant_depth(16, 16, 2.0));
    const std::vector<Eigen::Vector2d> seeds{{3.0, 4.0}, {10.5, 9.25}, {7.0, 7.0}};

    const auto tracks = gt_tracks(cams, depths, seeds);
    REQUIRE(tracks.size() == 3);
    for (size_t si = 0; si < seeds.size(); ++si)
        for (size_t v = 0; v < 3; ++v) {
            CHECK(tracks[si][v].visible);
            CHECK(tracks[si][v].u == doctest::Approx(seeds[si].x()).epsilon(1e-12));
            CHECK(tracks[si][v].v == doctest::Approx(seeds[si].y()).epsilon(1e-12));
        }
}

TEST_CASE("x-translation against a fronto-parallel plane shifts by fx*tx/d") {
    const double fx = 8.0, d = 2.0, tx = 0.25;
    std::vector<Camera> cams(2);
    cams[0].K = make_k(fx, fx, 7.5, 7.5);
    cams[1].K = cams[0].K;
    cams[1].cam_to_world = make_pose(Eigen::Matrix3d::Identity(), {tx, 0.0, 0.0});
    std::vector<DepthMap> depths(2, constant_depth(16, 16, d));

    const std::vector<Eigen::Vector2d> seeds{{7.5, 7.5}, {9.0, 5.0}, {4.0, 11.0}};
    const auto tracks = gt_tracks(cams, depths, seeds);
    for (size_t si = 0; si < seeds.size(); ++si) {
        REQUIRE(tracks[si][1].visible);
        CHECK(tracks[si][1].u - tracks[si][0].u ==
              doctest::Approx(-fx * tx / d).epsilon(1e-12));
        CHECK(tracks[si][1].v == doctest::Approx(seeds[si].y()).epsilon(1e-12));
    }
}

TEST_CASE("points behind or off-depth in a target view are invisible") {
    std::vector<Camera> cams(2);
    cams[0].K = make_k(8, 8, 7.5, 7.5);
    cams[1].K = cams[0].K;
    // Second camera looks the other way: the point lands behind it.
    cams[1].cam_to_world =
        make_pose(Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix(),
                  {0.0, 0.0, 0.0});
    std::vector<DepthMap> depths(2, constant_depth(16, 16, 2.0));
    const auto tracks = gt_tracks(cams, depths, {{7.5, 7.5}});
    CHECK_FALSE(tracks[0][1].visible);

    // Same-pose camera but with disagreeing depth: occlusion rule kicks in.
    cams[1].cam_to_world = Eigen::Matrix4d::Identity();
    depths[1] = constant_depth(16, 16, 1.0); // surface closer than the point
    const auto occluded = gt_tracks(cams, depths, {{7.5, 7.5}});
    CHECK_FALSE(occluded[0][1].visible);
}

TEST_CASE("seeds on invalid depth are rejected by index") {
    std::vector<Camera> cams(1);
    cams[0].K = make_k(8, 8, 7.5, 7.5);
    DepthMap dm = constant_depth(16, 16, 2.0);
    dm.d[static_cast<size_t>(5 * 16 + 9)] = 0.0;
    // Kill the whole 2x2 neighborhood so bilinear cannot recover.
    dm.d[static_cast<size_t>(5 * 16 + 10)] = 0.0;
    dm.d[static_cast<size_t>(6 * 16 + 9)] = 0.0;
    dm.d[static_cast<size_t>(6 * 16 + 10)] = 0.0;

    try {
        gt_tracks(cams, {dm}, {{3.0, 3.0}, {9.5, 5.5}});
        FAIL("expected a domain error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("seed 1") != std::string::npos);
    }
}

TEST_CASE("perfect tracks score zero error and full accuracy") {
    std::vector<Camera> cams(3);
    for (auto& c : cams) c.K = make_k(8, 8, 7.5, 7.5);
    cams[1].cam_to_world = make_pose(Eigen::Matrix3d::Identity(), {0.1, 0.0, 0.0});
    cams[2].cam_to_world = make_pose(Eigen::Matrix3d::Identity(), {-0.1, 0.05, 0.0});
    std::vector<DepthMap> depths(3, constant_depth(16, 16, 2.0));
    const auto tracks = gt_tracks(cams, depths, {{7.5, 7.5}, {6.0, 9.0}});

    const TrackMetrics m = track_metrics(tracks, tracks, cams, depths);
    CHECK(m.ate2d == 0.0);
    CHECK(m.ate3d_cm == 0.0);
    CHECK(m.scored == 4);
    CHECK(m.depth_clamped == 0);
    for (const auto& [t, pct] : m.acc_px) CHECK(pct == 100.0);
    for (const auto& [t, pct] : m.acc_cm) CHECK(pct == 100.0);
}

TEST_CASE("pixel errors of 3, 4 and 7 give ATE 14/3 and Acc@5 of 66.67") {
    std::vector<Camera> cams(2);
    for (auto& c : cams) c.K = make_k(1, 1, 0, 0);
    std::vector<DepthMap> depths(2, constant_depth(32, 32, 2.0));

    auto tp = [](double u, double v) { return TrackPoint{u, v, true}; };
    const std::vector<std::vector<TrackPoint>> gt{
        {tp(1, 1), tp(10, 10)}, {tp(2, 2), tp(20, 20)}, {tp(3, 3), tp(15, 5)}};
    const std::vector<std::vector<TrackPoint>> pred{
        {tp(1, 1), tp(13, 10)}, {tp(2, 2), tp(20, 24)}, {tp(3, 3), tp(22, 5)}};

    const TrackMetrics m = track_metrics(pred, gt, cams, depths);
    CHECK(m.scored == 3);
    CHECK(m.ate2d == doctest::Approx(14.0 / 3.0).epsilon(1e-12));
    bool saw5 = false;
    for (const auto& [t, pct] : m.acc_px)
        if (t == 5.0) {
            saw5 = true;
            CHECK(pct == doctest::Approx(100.0 * 2.0 / 3.0).epsilon(1e-9));
        }
    CHECK(saw5);
}

TEST_CASE("two points with errors 3 and 4 average to 3.5 pixels") {
    std::vector<Camera> cams(2);
    for (auto& c : cams) c.K = make_k(1, 1, 0, 0);
    std::vector<DepthMap> depths(2, constant_depth(32, 32, 1.5));
    auto tp = [](double u, double v) { return TrackPoint{u, v, true}; };
    const std::vector<std::vector<TrackPoint>> gt{{tp(0, 0), tp(8, 8)},
                                                  {tp(0, 0), tp(20, 12)}};
    const std::vector<std::vector<TrackPoint>> pred{{tp(0, 0), tp(11, 8)},
                                                    {tp(0, 0), tp(20, 16)}};
    const TrackMetrics m = track_metrics(pred, gt, cams, depths);
    CHECK(m.ate2d == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("3d track errors unproject both pixels with the view's own depth") {
    std::vector<Camera> cams(2);
    for (auto& c : cams) c.K = make_k(1, 1, 0, 0);
    std::vector<DepthMap> depths(2, constant_depth(16, 16, 2.0));
    auto tp = [](double u, double v) { return TrackPoint{u, v, true}; };
    const std::vector<std::vector<TrackPoint>> gt{{tp(0, 0), tp(3, 3)}};
    const std::vector<std::vector<TrackPoint>> pred{{tp(0, 0), tp(3, 4)}};

    // Both unproject at depth 2 with K = I: (6,6,2) vs (6,8,2), 2 m apart.
    const TrackMetrics m = track_metrics(pred, gt, cams, depths);
    CHECK(m.ate3d_cm == doctest::Approx(200.0).epsilon(1e-12));
    for (const auto& [t, pct] : m.acc_cm) CHECK(pct == 0.0);
}

TEST_CASE("predictions on invalid depth snap to the nearest valid pixel") {
    std::vector<Camera> cams(2);
    for (auto& c : cams) c.K = make_k(1, 1, 0, 0);
    DepthMap holey = constant_depth(8, 8, 2.0);
    // Kill everything except column 0.
    for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 1; x < 8; ++x) holey.d[static_cast<size_t>(y * 8 + x)] = 0.0;
    std::vector<DepthMap> depths{constant_depth(8, 8, 2.0), holey};

    auto tp = [](double u, double v) { return TrackPoint{u, v, true}; };
    const std::vector<std::vector<TrackPoint>> gt{{tp(0, 0), tp(0, 5)}};
    const std::vector<std::vector<TrackPoint>> pred{{tp(0, 0), tp(6, 5)}};

    const TrackMetrics m = track_metrics(pred, gt, cams, depths);
    CHECK(m.depth_clamped == 1);
    // Snapped prediction is (0,5): same as GT, so the 3D error vanishes even
    // though the 2D error is 6 px.
    CHECK(m.ate2d == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(m.ate3d_cm == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("track scoring requires at least one visible point") {
    std::vector<Camera> cams(2);
    for (auto& c : cams) c.K = make_k(1, 1, 0, 0);
    std::vector<DepthMap> depths(2, constant_depth(8, 8, 1.0));
    auto tp = [](double u, double v) { return TrackPoint{u, v, false}; };
    const std::vector<std::vector<TrackPoint>> gt{{tp(0, 0), tp(1, 1)}};
    CHECK_THROWS_AS(track_metrics(gt, gt, cams, depths), DomainError);
}

TEST_CASE("track metrics match an independent loop evaluator exactly") {
    // Power-of-two focal lengths make the pinhole math bit-reproducible, so
    // the oracle can demand exact equality instead of a tolerance.
    auto oracle_bilinear = [](const DepthMap& dm, double u, double v) -> double {
        if (u < 0.0 || v < 0.0 || u > static_cast<double>(dm.w - 1) ||
            v > static_cast<double>(dm.h - 1))
            return 0.0;
        const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(u)), dm.w - 1);
        const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(v)), dm.h - 1);
        const int64_t x1 = std::min<int64_t>(x0 + 1, dm.w - 1);
        const int64_t y1 = std::min<int64_t>(y0 + 1, dm.h - 1);
        const double fu = u - static_cast<double>(x0);
        const double fv = v - static_cast<double>(y0);
        const double w[4] = {(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv,
                             fu * fv};
        const double d[4] = {dm.at(y0, x0), dm.at(y0, x1), dm.at(y1, x0), dm.at(y1, x1)};
        double acc = 0.0, ws = 0.0;
        for (int i = 0; i < 4; ++i)
            if (d[i] > 0.0) {
                acc += w[i] * d[i];
                ws += w[i];
            }
        return ws > 0.0 ? acc / ws : 0.0;
    };

    Rng rng(62);
    for (int inst = 0; inst < 20; ++inst) {
        const int64_t S = 5;
        const size_t V = 3;
        std::vector<Camera> cams(V);
        std::vector<DepthMap> depths;
        std::vector<double> fxs(V), fys(V), cxs(V), cys(V);
        for (size_t v = 0; v < V; ++v) {
            const double fx = std::pow(2.0, static_cast<double>(rng.randint(4) + 1));
            const double fy = std::pow(2.0, static_cast<double>(rng.randint(4) + 1));
            const double cx = rng.uniform(4.0, 12.0), cy = rng.uniform(4.0, 12.0);
            cams[v].K = make_k(fx, fy, cx, cy);
            fxs[v] = fx;
            fys[v] = fy;
            cxs[v] = cx;
            cys[v] = cy;
            DepthMap dm;
            dm.h = 16;
            dm.w = 16;
            dm.d.resize(256);
            for (double& d : dm.d) d = rng.uniform(1.0, 3.0);
            if (rng.uniform01() < 0.4) {
                // Punch a dead rectangle to exercise the snapping path.
                for (int64_t y = 6; y < 14; ++y)
                    for (int64_t x = 6; x < 14; ++x)
                        dm.d[static_cast<size_t>(y * 16 + x)] = 0.0;
            }
            depths.push_back(std::move(dm));
        }

        std::vector<std::vector<TrackPoint>> gt(S), pred(S);
        bool any_visible = false;
        for (int64_t si = 0; si < S; ++si) {
            gt[si].resize(V);
            pred[si].resize(V);
            for (size_t v = 0; v < V; ++v) {
                gt[si][v] = {rng.uniform(1.0, 14.0), rng.uniform(1.0, 14.0),
                             v == 0 || rng.uniform01() < 0.7};
                // Keep GT points on valid depth (retry into the live area).
                while (v > 0 && gt[si][v].visible &&
                       oracle_bilinear(depths[v], gt[si][v].u, gt[si][v].v) <= 0.0) {
                    gt[si][v].u = rng.uniform(0.0, 5.0);
                    gt[si][v].v = rng.uniform(0.0, 5.0);
                }
                pred[si][v] = {gt[si][v].u + rng.uniform(-6.0, 6.0),
                               gt[si][v].v + rng.uniform(-6.0, 6.0), true};
                if (v > 0 && gt[si][v].visible) any_visible = true;
            }
        }
        if (!any_visible) gt[0][1].visible = true;

        const TrackMetrics got = track_metrics(pred, gt, cams, depths);

        // Oracle.
        double sum2d = 0.0, sum3d = 0.0;
        int64_t scored = 0, clamped = 0;
        const auto& pxt = default_px_thresholds();
        const auto& cmt = default_cm_thresholds();
        std::vector<int64_t> hpx(pxt.size(), 0), hcm(cmt.size(), 0);
        for (int64_t si = 0; si < S; ++si)
            for (size_t v = 1; v < V; ++v) {
                if (!gt[si][v].visible) continue;
                const double du = pred[si][v].u - gt[si][v].u;
                const double dv = pred[si][v].v - gt[si][v].v;
                const double e2d = std::sqrt(du * du + dv * dv);
                sum2d += e2d;
                for (size_t t = 0; t < pxt.size(); ++t)
                    if (e2d < pxt[t]) ++hpx[t];

                double pu = pred[si][v].u, pv = pred[si][v].v;
                double dp = oracle_bilinear(depths[v], pu, pv);
                if (dp <= 0.0) {
                    double best = -1.0;
                    int64_t bu = 0, bv = 0;
                    for (int64_t y = 0; y < 16; ++y)
                        for (int64_t x = 0; x < 16; ++x) {
                            if (depths[v].d[static_cast<size_t>(y * 16 + x)] <= 0.0) continue;
                            const double ddu = static_cast<double>(x) - pu;
                            const double ddv = static_cast<double>(y) - pv;
                            const double d2 = ddu * ddu + ddv * ddv;
                            if (best < 0.0 || d2 < best) {
                                best = d2;
                                bu = x;
                                bv = y;
                            }
                        }
                    REQUIRE(best >= 0.0);
                    pu = static_cast<double>(bu);
                    pv = static_cast<double>(bv);
                    dp = depths[v].d[static_cast<size_t>(bv * 16 + bu)];
                    ++clamped;
                }
                const double dg = oracle_bilinear(depths[v], gt[si][v].u, gt[si][v].v);
                REQUIRE(dg > 0.0);
                // Pinhole back-projection, written in the scalar-folded order
                // (depth scaled into the inverse-intrinsics row first) so the
                // power-of-two focal lengths give bit-identical results.
                auto backproject = [&](double bu, double bv, double bd) {
                    return Eigen::Vector3d(
                        (bd * (1.0 / fxs[v])) * bu + bd * (-(cxs[v] / fxs[v])),
                        (bd * (1.0 / fys[v])) * bv + bd * (-(cys[v] / fys[v])), bd);
                };
                const Eigen::Vector3d p3 = backproject(pu, pv, dp);
                const Eigen::Vector3d g3 = backproject(gt[si][v].u, gt[si][v].v, dg);
                const double e3d = (p3 - g3).norm();
                sum3d += e3d;
                for (size_t t = 0; t < cmt.size(); ++t)
                    if (e3d < cmt[t] / 100.0) ++hcm[t];
                ++scored;
            }

        CHECK(got.scored == scored);
        CHECK(got.depth_clamped == clamped);
        CHECK(got.ate2d == sum2d / static_cast<double>(scored));
        CHECK(got.ate3d_cm == 100.0 * sum3d / static_cast<double>(scored));
        for (size_t t = 0; t < pxt.size(); ++t)
            CHECK(got.acc_px[t].second ==
                  100.0 * static_cast<double>(hpx[t]) / static_cast<double>(scored));
        for (size_t t = 0; t < cmt.size(); ++t)
            CHECK(got.acc_cm[t].second ==
                  100.0 * static_cast<double>(hcm[t]) / static_cast<double>(scored));
    }
}

TEST_CASE("track metrics ignore enumeration order") {
    std::vector<Camera> cams(2);
    for (auto& c : cams) c.K = make_k(2, 2, 4, 4);
    std::vector<DepthMap> depths(2, constant_depth(16, 16, 2.0));
    Rng rng(63);
    std::vector<std::vector<TrackPoint>> gt, pred;
    for (int si = 0; si < 6; ++si) {
        const double u = rng.uniform(2.0, 13.0), v = rng.uniform(2.0, 13.0);
        gt.push_back({{u, v, true}, {u + 1, v, true}});
        pred.push_back({{u, v, true}, {u + rng.uniform(0.0, 3.0), v, true}});
    }
    const TrackMetrics a = track_metrics(pred, gt, cams, depths);
    std::reverse(gt.begin(), gt.end());
    std::reverse(pred.begin(), pred.end());
    const TrackMetrics b = track_metrics(pred, gt, cams, depths);
    CHECK(a.ate2d == doctest::Approx(b.ate2d).epsilon(1e-12));
    CHECK(a.ate3d_cm == doctest::Approx(b.ate3d_cm).epsilon(1e-12));
    for (size_t i = 0; i < a.acc_px.size(); ++i)
        CHECK(a.acc_px[i].second == b.acc_px[i].second);
}

TEST_CASE("umeyama of identical clouds is the identity") {
    Rng rng(64);
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 15; ++i)
        pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
    const Similarity sim = umeyama_align(pts, pts, true);
    CHECK(sim.s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((sim.R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(sim.t.norm() < 1e-12);
    CHECK(sim.rmse < 1e-12);
}

TEST_CASE("umeyama recovers a constructed similarity to 1e-9") {
    Rng rng(65);
    const Eigen::Matrix3d R = rot_z(30.0);
    const Eigen::Vector3d t(1.0, 2.0, 3.0);
    std::vector<Eigen::Vector3d> src, dst;
    for (int i = 0; i < 20; ++i) {
        src.emplace_back(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                         rng.uniform(-2.0, 2.0));
        dst.push_back(2.0 * (R * src.back()) + t);
    }
    const Similarity sim = umeyama_align(src, dst, true);
    CHECK(std::fabs(sim.s - 2.0) < 1e-9);
    CHECK((sim.R - R).norm() < 1e-9);
    CHECK((sim.t - t).norm() < 1e-9);
    CHECK(sim.rmse < 1e-9);

    // Rigid mode pins the scale at one.
    const Similarity rigid = umeyama_align(src, dst, false);
    CHECK(rigid.s == 1.0);

    // And recovers a pure rigid motion exactly.
    std::vector<Eigen::Vector3d> dst_rigid;
    for (const auto& p : src) dst_rigid.push_back(R * p + t);
    const Similarity rigid2 = umeyama_align(src, dst_rigid, false);
    CHECK((rigid2.R - R).norm() < 1e-9);
    CHECK((rigid2.t - t).norm() < 1e-9);
    CHECK(rigid2.rmse < 1e-9);
}

TEST_CASE("reflected targets still produce a proper rotation, and it is optimal") {
    Rng rng(66);
    std::vector<Eigen::Vector3d> src, dst;
    for (int i = 0; i < 12; ++i) {
        src.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                         rng.uniform(-1.0, 1.0));
        dst.emplace_back(src.back().x(), src.back().y(), -src.back().z());
    }
    const Similarity sim = umeyama_align(src, dst, true);
    CHECK(sim.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));

    // Numeric oracle: randomized hill climbing over axis-angle rotations with
    // the scale and translation solved in closed form per candidate.
    Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < src.size(); ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= static_cast<double>(src.size());
    mu_d /= static_cast<double>(src.size());
    double den = 0.0;
    for (const auto& p : src) den += (p - mu_s).squaredNorm();
    auto centered_residual = [&](const Eigen::Matrix3d& R) {
        double num = 0.0;
        for (size_t i = 0; i < src.size(); ++i)
            num += (dst[i] - mu_d).dot(R * (src[i] - mu_s));
        // A similarity has positive scale; mirrored data would otherwise pull
        // the closed-form optimum negative.
        const double s = std::max(num / den, 0.0);
        double se = 0.0;
        for (size_t i = 0; i < src.size(); ++i)
            se += ((dst[i] - mu_d) - s * (R * (src[i] - mu_s))).squaredNorm();
        return se;
    };
    auto rot_of = [](const Eigen::Vector3d& w) -> Eigen::Matrix3d {
        const double a = w.norm();
        if (a < 1e-12) return Eigen::Matrix3d::Identity();
        return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
    };
    // Coordinate descent with a shrinking step converges far tighter than the
    // random walk alone.
    auto polish = [&](Eigen::Vector3d w, double cur) {
        double step = 0.1;
        while (step > 1e-10) {
            bool improved = false;
            for (int axis = 0; axis < 3; ++axis)
                for (const double sgn : {1.0, -1.0}) {
                    Eigen::Vector3d cand = w;
                    cand[axis] += sgn * step;
                    const double val = centered_residual(rot_of(cand));
                    if (val < cur) {
                        cur = val;
                        w = cand;
                        improved = true;
                    }
                }
            if (!improved) step *= 0.5;
        }
        return cur;
    };

    double best = polish(Eigen::Vector3d::Zero(),
                         centered_residual(Eigen::Matrix3d::Identity()));
    for (int start = 0; start < 40; ++start) {
        Eigen::Vector3d w(rng.normal(), rng.normal(), rng.normal());
        double step = 0.6;
        double cur = centered_residual(rot_of(w));
        for (int it = 0; it < 200; ++it) {
            const Eigen::Vector3d cand =
                w + step * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
            const double val = centered_residual(rot_of(cand));
            if (val < cur) {
                cur = val;
                w = cand;
            }
            step *= 0.98;
        }
        best = std::min(best, polish(w, cur));
    }
    const double n = static_cast<double>(src.size());
    CHECK(sim.rmse <= std::sqrt(best / n) + 1e-9);
    CHECK(std::sqrt(best / n) <= sim.rmse + 1e-7); // oracle found the same optimum
}

TEST_CASE("umeyama beats a thousand random similarity transforms") {
    Rng rng(67);
    std::vector<Eigen::Vector3d> src, dst;
    const Eigen::Matrix3d R0 = random_rotation(rng);
    for (int i = 0; i < 30; ++i) {
        src.emplace_back(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                         rng.uniform(-1.5, 1.5));
        dst.push_back(1.7 * (R0 * src.back()) + Eigen::Vector3d(0.3, -0.2, 0.8) +
                      0.05 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()));
    }
    const Similarity sim = umeyama_align(src, dst, true);

    auto rmse_of = [&](double s, const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
        double se = 0.0;
        for (size_t i = 0; i < src.size(); ++i)
            se += (dst[i] - (s * (R * src[i]) + t)).squaredNorm();
        return std::sqrt(se / static_cast<double>(src.size()));
    };
    for (int i = 0; i < 1000; ++i) {
        const double s = rng.uniform(0.5, 2.5);
        const Eigen::Matrix3d R = random_rotation(rng);
        const Eigen::Vector3d t(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                rng.uniform(-1.0, 1.0));
        CHECK(sim.rmse <= rmse_of(s, R, t) + 1e-12);
    }
}

TEST_CASE("umeyama rejects degenerate configurations") {
    std::vector<Eigen::Vector3d> two{{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(umeyama_align(two, two, true), AlignmentError);

    std::vector<Eigen::Vector3d> same(5, Eigen::Vector3d(1.0, 2.0, 3.0));
    CHECK_THROWS_AS(umeyama_align(same, same, true), AlignmentError);

    std::vector<Eigen::Vector3d> line, line_dst;
    for (int i = 0; i < 6; ++i) {
        line.emplace_back(static_cast<double>(i), 0.0, 0.0);
        line_dst.emplace_back(0.0, static_cast<double>(i), 0.0);
    }
    CHECK_THROWS_AS(umeyama_align(line, line_dst, true), AlignmentError);

    std::vector<Eigen::Vector3d> three{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    std::vector<Eigen::Vector3d> four{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
    CHECK_THROWS_AS(umeyama_align(three, four, true), DimensionError);
}

TEST_CASE("pointmap metrics on identical clouds vanish") {
    Rng rng(68);
    std::vector<Eigen::Vector3d> pts;
    std::vector<uint8_t> valid;
    for (int i = 0; i < 25; ++i) {
        pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
        valid.push_back(1);
    }
    const PointmapMetrics m = pointmap_metrics(pts, valid, pts, valid, false);
    CHECK(m.accuracy == 0.0);
    CHECK(m.completeness == 0.0);
    CHECK(m.overall == 0.0);
    CHECK(m.l1 == 0.0);
    CHECK(m.pred_used == 25);
    CHECK(m.gt_used == 25);
}

TEST_CASE("a rigid 0.1 shift moves accuracy and completeness by 0.1") {
    const std::vector<Eigen::Vector3d> gt{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    std::vector<Eigen::Vector3d> pred;
    for (const auto& p : gt) pred.push_back(p + Eigen::Vector3d(0.1, 0.0, 0.0));
    const std::vector<uint8_t> valid(4, 1);
    const PointmapMetrics m = pointmap_metrics(pred, valid, gt, valid, false);
    CHECK(m.accuracy == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m.completeness == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m.overall == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m.l1 == doctest::Approx(0.1 / 3.0).epsilon(1e-12));
}

TEST_CASE("pointmap metrics match a double-loop oracle on 200-point clouds") {
    Rng rng(69);
    for (int inst = 0; inst < 20; ++inst) {
        std::vector<Eigen::Vector3d> pred, gt;
        std::vector<uint8_t> pv, gv;
        for (int i = 0; i < 200; ++i) {
            pred.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                              rng.uniform(-1.0, 1.0));
            gt.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                            rng.uniform(-1.0, 1.0));
            pv.push_back(rng.uniform01() < 0.85 ? 1 : 0);
            gv.push_back(rng.uniform01() < 0.85 ? 1 : 0);
        }
        pv[0] = gv[0] = 1;
        const PointmapMetrics got = pointmap_metrics(pred, pv, gt, gv, false);

        std::vector<Eigen::Vector3d> p_use, g_use;
        for (size_t i = 0; i < pred.size(); ++i)
            if (pv[i]) p_use.push_back(pred[i]);
        for (size_t i = 0; i < gt.size(); ++i)
            if (gv[i]) g_use.push_back(gt[i]);

        auto side = [](const std::vector<Eigen::Vector3d>& from,
                       const std::vector<Eigen::Vector3d>& to) {
            double sum = 0.0;
            for (const auto& p : from) {
                double best = (p - to[0]).norm();
                for (size_t j = 1; j < to.size(); ++j)
                    best = std::min(best, (p - to[j]).norm());
                sum += best;
            }
            return sum / static_cast<double>(from.size());
        };
        const double acc = side(p_use, g_use);
        const double comp = side(g_use, p_use);
        CHECK(got.accuracy == acc);
        CHECK(got.completeness == comp);
        CHECK(got.overall == 0.5 * (acc + comp));

        double l1 = 0.0;
        int64_t coords = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (!(pv[i] && gv[i])) continue;
            l1 += std::fabs(pred[i].x() - gt[i].x()) + std::fabs(pred[i].y() - gt[i].y()) +
                  std::fabs(pred[i].z() - gt[i].z());
            coords += 3;
        }
        CHECK(got.l1 == l1 / static_cast<double>(coords));
    }
}

TEST_CASE("alignment removes a similarity disturbance from predictions") {
    Rng rng(70);
    std::vector<Eigen::Vector3d> gt;
    std::vector<uint8_t> valid;
    for (int i = 0; i < 40; ++i) {
        gt.emplace_back(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                        rng.uniform(-2.0, 2.0));
        valid.push_back(1);
    }
    const Eigen::Matrix3d R = random_rotation(rng);
    std::vector<Eigen::Vector3d> pred;
    for (const auto& p : gt) pred.push_back(0.4 * (R * p) + Eigen::Vector3d(5, -3, 2));

    const PointmapMetrics raw = pointmap_metrics(pred, valid, gt, valid, false);
    const PointmapMetrics aligned = pointmap_metrics(pred, valid, gt, valid, true);
    CHECK(raw.overall > 1.0);
    CHECK(aligned.overall < 1e-9);
    CHECK(aligned.l1 < 1e-9);
}

TEST_CASE("pointmap metrics validate their inputs") {
    const std::vector<Eigen::Vector3d> a(5, Eigen::Vector3d::Zero());
    const std::vector<Eigen::Vector3d> b(4, Eigen::Vector3d::Zero());
    const std::vector<uint8_t> va(5, 1), vb(4, 1);

    CHECK_THROWS_AS(pointmap_metrics(a, vb, a, va, false), DimensionError);
    CHECK_THROWS_AS(pointmap_metrics(a, va, b, vb, true), DimensionError);
    CHECK_THROWS_AS(pointmap_metrics(a, std::vector<uint8_t>(5, 0), a, va, false),
                    DomainError);

    // Size-mismatched clouds still compare as sets; l1 is not defined.
    const PointmapMetrics m = pointmap_metrics(a, va, b, vb, false);
    CHECK(std::isnan(m.l1));
    CHECK(m.accuracy == 0.0);
}

TEST_CASE("identical pose sets score perfect accuracy") {
    Rng rng(71);
    std::vector<Eigen::Matrix4d> poses;
    for (int v = 0; v < 4; ++v)
        poses.push_back(make_pose(random_rotation(rng),
                                  {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                   rng.uniform(-2.0, 2.0)}));
    const PoseMetrics m = pose_metrics(poses, poses);
    CHECK(m.pairs == 12);
    CHECK(m.skipped == 0);
    for (const auto& [t, pct] : m.r_at) CHECK(pct == 100.0);
    for (const auto& [t, pct] : m.t_at) CHECK(pct == 100.0);
    for (const auto& [t, pct] : m.auc_at) CHECK(pct == 100.0);
}

TEST_CASE("a 9.8 degree rotation error on one pair scores R@5 of 66.67") {
    // Cameras along z so the +-4.9 degree z-rotations leave the relative
    // translation directions untouched.
    std::vector<Eigen::Matrix4d> gt{
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 0}),
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 1}),
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 2})};
    std::vector<Eigen::Matrix4d> pred{
        make_pose(rot_z(4.9), {0, 0, 0}),
        make_pose(rot_z(-4.9), {0, 0, 1}),
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 2})};

    const PoseMetrics m = pose_metrics(pred, gt);
    REQUIRE(m.pairs == 6);
    // Pair (0,1) in both directions errs by 9.8 degrees; the other four by 4.9.
    CHECK(m.r_at[0].first == 5.0);
    CHECK(m.r_at[0].second == doctest::Approx(100.0 * 4.0 / 6.0).epsilon(1e-9));
    CHECK(m.r_at[1].second == 100.0);
    CHECK(m.t_at[0].second == 100.0);
    // AUC@5: zero up to 4 degrees, 4/6 at 5.
    CHECK(m.auc_at[0].second == doctest::Approx(100.0 * (4.0 / 6.0) / 5.0).epsilon(1e-9));
    // AUC@15: 4/6 for taus 5..9, 1 for taus 10..15.
    CHECK(m.auc_at[1].second ==
          doctest::Approx(100.0 * ((4.0 / 6.0) * 5.0 + 6.0) / 15.0).epsilon(1e-9));
}

TEST_CASE("pose metrics match a loop oracle on random instances") {
    Rng rng(72);
    for (int inst = 0; inst < 20; ++inst) {
        std::vector<Eigen::Matrix4d> pred, gt;
        for (int v = 0; v < 4; ++v) {
            gt.push_back(make_pose(random_rotation(rng),
                                   {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                    rng.uniform(-2.0, 2.0)}));
            pred.push_back(make_pose(random_rotation(rng),
                                     {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                      rng.uniform(-2.0, 2.0)}));
        }
        const PoseMetrics got = pose_metrics(pred, gt);

        std::vector<double> re, te;
        auto rel = [](const Eigen::Matrix4d& a, const Eigen::Matrix4d& b) {
            Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
            const Eigen::Matrix3d r = a.topLeftCorner<3, 3>();
            inv.topLeftCorner<3, 3>() = r.transpose();
            inv.topRightCorner<3, 1>() = -(r.transpose() * a.topRightCorner<3, 1>());
            return Eigen::Matrix4d(inv * b);
        };
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
                if (a == b) continue;
                const Eigen::Matrix4d rg = rel(gt[static_cast<size_t>(a)],
                                               gt[static_cast<size_t>(b)]);
                if (rg.topRightCorner<3, 1>().norm() == 0.0) continue;
                const Eigen::Matrix4d rp = rel(pred[static_cast<size_t>(a)],
                                               pred[static_cast<size_t>(b)]);
                const Eigen::Matrix3d dr =
                    rp.topLeftCorner<3, 3>().transpose() * rg.topLeftCorner<3, 3>();
                re.push_back(std::acos(std::clamp((dr.trace() - 1.0) / 2.0, -1.0, 1.0)) *
                             180.0 / M_PI);
                const Eigen::Vector3d tp = rp.topRightCorner<3, 1>();
                const Eigen::Vector3d tg = rg.topRightCorner<3, 1>();
                te.push_back(tp.norm() == 0.0
                                 ? 180.0
                                 : std::acos(std::clamp(
                                       tp.normalized().dot(tg.normalized()), -1.0, 1.0)) *
                                       180.0 / M_PI);
            }

        REQUIRE(got.pairs == static_cast<int64_t>(re.size()));
        const double denom = static_cast<double>(re.size());
        const auto& thr = default_pose_thresholds();
        for (size_t ti = 0; ti < thr.size(); ++ti) {
            int64_t rh = 0, th = 0;
            for (size_t i = 0; i < re.size(); ++i) {
                if (re[i] < thr[ti]) ++rh;
                if (te[i] < thr[ti]) ++th;
            }
            CHECK(got.r_at[ti].second == 100.0 * static_cast<double>(rh) / denom);
            CHECK(got.t_at[ti].second == 100.0 * static_cast<double>(th) / denom);
            double auc = 0.0;
            const int kmax = static_cast<int>(thr[ti]);
            for (int tau = 1; tau <= kmax; ++tau) {
                int64_t hits = 0;
                for (size_t i = 0; i < re.size(); ++i)
                    if (std::max(re[i], te[i]) < static_cast<double>(tau)) ++hits;
                auc += static_cast<double>(hits) / denom;
            }
            CHECK(got.auc_at[ti].second == 100.0 * auc / static_cast<double>(kmax));
        }
    }
}

TEST_CASE("pose metrics are invariant to a global rigid transform") {
    Rng rng(73);
    std::vector<Eigen::Matrix4d> pred, gt;
    for (int v = 0; v < 4; ++v) {
        gt.push_back(make_pose(random_rotation(rng),
                               {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                rng.uniform(-2.0, 2.0)}));
        pred.push_back(make_pose(random_rotation(rng),
                                 {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                  rng.uniform(-2.0, 2.0)}));
    }
    const Eigen::Matrix4d G = make_pose(random_rotation(rng), {3.0, -1.0, 2.0});

    const PoseMetrics base = pose_metrics(pred, gt);
    std::vector<Eigen::Matrix4d> pred_g, gt_g;
    for (const auto& p : pred) pred_g.push_back(G * p);
    for (const auto& p : gt) gt_g.push_back(G * p);

    for (const auto* moved : {&pred_g, &gt_g}) {
        const PoseMetrics m = moved == &pred_g ? pose_metrics(pred_g, gt)
                                               : pose_metrics(pred, gt_g);
        for (size_t i = 0; i < base.r_at.size(); ++i) {
            CHECK(m.r_at[i].second == doctest::Approx(base.r_at[i].second).epsilon(1e-9));
            CHECK(m.t_at[i].second == doctest::Approx(base.t_at[i].second).epsilon(1e-9));
            CHECK(m.auc_at[i].second == doctest::Approx(base.auc_at[i].second).epsilon(1e-9));
        }
    }
    const PoseMetrics both = pose_metrics(pred_g, gt_g);
    for (size_t i = 0; i < base.r_at.size(); ++i)
        CHECK(both.r_at[i].second == doctest::Approx(base.r_at[i].second).epsilon(1e-9));
}

TEST_CASE("coincident cameras are skipped, fully degenerate sets rejected") {
    std::vector<Eigen::Matrix4d> gt{
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 0}),
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 0}),
        make_pose(Eigen::Matrix3d::Identity(), {1, 0, 0})};
    const PoseMetrics m = pose_metrics(gt, gt);
    CHECK(m.pairs == 4);
    CHECK(m.skipped == 2);

    std::vector<Eigen::Matrix4d> same(2, Eigen::Matrix4d::Identity());
    CHECK_THROWS_AS(pose_metrics(same, same), DomainError);
    CHECK_THROWS_AS(pose_metrics(gt, std::vector<Eigen::Matrix4d>(2)), DimensionError);
    CHECK_THROWS_AS(
        pose_metrics(std::vector<Eigen::Matrix4d>(1), std::vector<Eigen::Matrix4d>(1)),
        DomainError);
}

TEST_CASE("predictions collapsing all positions get worst-case direction error") {
    std::vector<Eigen::Matrix4d> gt{
        make_pose(Eigen::Matrix3d::Identity(), {0, 0, 0}),
        make_pose(Eigen::Matrix3d::Identity(), {1, 0, 0})};
    std::vector<Eigen::Matrix4d> pred(2, Eigen::Matrix4d::Identity());
    const PoseMetrics m = pose_metrics(pred, gt);
    for (const auto& [t, pct] : m.r_at) CHECK(pct == 100.0);
    for (const auto& [t, pct] : m.t_at) CHECK(pct == 0.0);
    for (const auto& [t, pct] : m.auc_at) CHECK(pct == 0.0);
}
