#include "mvc/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

Eigen::Vector3d Camera::cam_point_to_world(const Eigen::Vector3d& pc) const {
    return rotation() * pc + translation();
}

Eigen::Vector3d Camera::world_point_to_cam(const Eigen::Vector3d& pw) const {
    return rotation().transpose() * (pw - translation());
}

Eigen::Vector3d unproject(const Eigen::Vector2d& px, double depth, const Eigen::Matrix3d& K) {
    if (depth <= 0.0)
        throw DomainError("unproject: depth must be positive, got " + std::to_string(depth));
    const Eigen::Vector3d h(px.x(), px.y(), 1.0);
    return depth * (K.inverse() * h);
}

Eigen::Vector2d project(const Eigen::Vector3d& p_cam, const Eigen::Matrix3d& K) {
    if (p_cam.z() <= 0.0)
        throw DomainError("project: point at or behind the camera, z = " +
                          std::to_string(p_cam.z()));
    const Eigen::Vector3d h = K * p_cam;
    return {h.x() / h.z(), h.y() / h.z()};
}

double bilinear_depth(const DepthMap& depth, double u, double v) {
    if (u < 0.0 || v < 0.0 || u > static_cast<double>(depth.w - 1) ||
        v > static_cast<double>(depth.h - 1))
        return 0.0;
    const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(u)), depth.w - 1);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(v)), depth.h - 1);
    const int64_t x1 = std::min<int64_t>(x0 + 1, depth.w - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, depth.h - 1);
    const double fx = u - static_cast<double>(x0);
    const double fy = v - static_cast<double>(y0);

    const double w00 = (1.0 - fx) * (1.0 - fy), w10 = fx * (1.0 - fy);
    const double w01 = (1.0 - fx) * fy, w11 = fx * fy;
    const double d00 = depth.at(y0, x0), d10 = depth.at(y0, x1);
    const double d01 = depth.at(y1, x0), d11 = depth.at(y1, x1);

    double wsum = 0.0, acc = 0.0;
    if (d00 > 0.0) { acc += w00 * d00; wsum += w00; }
    if (d10 > 0.0) { acc += w10 * d10; wsum += w10; }
    if (d01 > 0.0) { acc += w01 * d01; wsum += w01; }
    if (d11 > 0.0) { acc += w11 * d11; wsum += w11; }
    if (wsum <= 0.0) return 0.0;
    return acc / wsum;
}

Eigen::Vector3d bilinear_rgb(const Image& img, double u, double v) {
    const double uc = std::clamp(u, 0.0, static_cast<double>(img.w - 1));
    const double vc = std::clamp(v, 0.0, static_cast<double>(img.h - 1));
    const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(uc)), img.w - 1);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(vc)), img.h - 1);
    const int64_t x1 = std::min<int64_t>(x0 + 1, img.w - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, img.h - 1);
    const double fx = uc - static_cast<double>(x0);
    const double fy = vc - static_cast<double>(y0);
    Eigen::Vector3d out = Eigen::Vector3d::Zero();
    for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out[c] = (1.0 - fy) * top + fy * bot;
    }
    return out;
}

std::vector<std::vector<TrackPoint>> gt_tracks(const std::vector<Camera>& cams,
                                               const std::vector<DepthMap>& depths,
                                               const std::vector<Eigen::Vector2d>& seeds,
                                               double z_tol) {
    const size_t V = cams.size();
    if (V == 0 || depths.size() != V)
        throw DimensionError("gt_tracks: " + std::to_string(V) + " cameras vs " +
                             std::to_string(depths.size()) + " depth maps");
    if (z_tol <= 0.0) throw DomainError("gt_tracks: z_tol must be positive");

    std::vector<std::vector<TrackPoint>> tracks(seeds.size());
    for (size_t si = 0; si < seeds.size(); ++si) {
        const Eigen::Vector2d& s = seeds[si];
        const double d0 = bilinear_depth(depths[0], s.x(), s.y());
        if (d0 <= 0.0)
            throw DomainError("gt_tracks: seed " + std::to_string(si) +
                              " lies on invalid depth in view 0");
        const Eigen::Vector3d pw = cams[0].cam_point_to_world(unproject(s, d0, cams[0].K));

        auto& row = tracks[si];
        row.resize(V);
        row[0] = TrackPoint{s.x(), s.y(), true};
        for (size_t v = 1; v < V; ++v) {
            const Eigen::Vector3d pc = cams[v].world_point_to_cam(pw);
            TrackPoint tp;
            if (pc.z() > 0.0) {
                const Eigen::Vector2d px = project(pc, cams[v].K);
                tp.u = px.x();
                tp.v = px.y();
                const bool in_bounds = px.x() >= 0.0 && px.y() >= 0.0 &&
                                       px.x() <= static_cast<double>(depths[v].w - 1) &&
                                       px.y() <= static_cast<double>(depths[v].h - 1);
                if (in_bounds) {
                    const double dv = bilinear_depth(depths[v], px.x(), px.y());
                    tp.visible = dv > 0.0 && std::fabs(pc.z() - dv) <= z_tol * dv;
                }
            }
            row[v] = tp;
        }
    }
    return tracks;
}

namespace {

// Nearest pixel with valid depth, by squared distance with row-major
// tie-breaking. Used when a predicted track lands where no depth exists.
bool nearest_valid_pixel(const DepthMap& depth, double u, double v, int64_t& out_u,
                         int64_t& out_v) {
    double best = -1.0;
    for (int64_t y = 0; y < depth.h; ++y)
        for (int64_t x = 0; x < depth.w; ++x) {
            if (!depth.valid(y, x)) continue;
            const double du = static_cast<double>(x) - u;
            const double dv = static_cast<double>(y) - v;
            const double d2 = du * du + dv * dv;
            if (best < 0.0 || d2 < best) {
                best = d2;
                out_u = x;
                out_v = y;
            }
        }
    return best >= 0.0;
}

} // namespace

TrackMetrics track_metrics(const std::vector<std::vector<TrackPoint>>& pred,
                           const std::vector<std::vector<TrackPoint>>& gt,
                           const std::vector<Camera>& cams,
                           const std::vector<DepthMap>& depths,
                           const std::vector<double>& px_thresholds,
                           const std::vector<double>& cm_thresholds) {
    if (pred.size() != gt.size())
        throw DimensionError("track_metrics: " + std::to_string(pred.size()) +
                             " predicted tracks vs " + std::to_string(gt.size()) + " gt");
    const size_t V = cams.size();
    if (depths.size() != V)
        throw DimensionError("track_metrics: cameras vs depth maps count mismatch");

    double sum2d = 0.0, sum3d = 0.0;
    std::vector<int64_t> hits_px(px_thresholds.size(), 0);
    std::vector<int64_t> hits_cm(cm_thresholds.size(), 0);
    int64_t scored = 0, clamped = 0;

    for (size_t si = 0; si < gt.size(); ++si) {
        if (pred[si].size() != V || gt[si].size() != V)
            throw DimensionError("track_metrics: track " + std::to_string(si) +
                                 " does not cover all views");
        for (size_t v = 1; v < V; ++v) {
            const TrackPoint& g = gt[si][v];
            if (!g.visible) continue;
            const TrackPoint& p = pred[si][v];

            const double du = p.u - g.u, dv = p.v - g.v;
            const double e2d = std::sqrt(du * du + dv * dv);
            sum2d += e2d;
            for (size_t ti = 0; ti < px_thresholds.size(); ++ti)
                if (e2d < px_thresholds[ti]) hits_px[ti]++;

            // 3D error: both pixels unprojected with this view's depth map.
            double pu = p.u, pv = p.v;
            double dp = bilinear_depth(depths[v], pu, pv);
            if (dp <= 0.0) {
                int64_t nu = 0, nv = 0;
                if (!nearest_valid_pixel(depths[v], pu, pv, nu, nv))
                    throw DomainError("track_metrics: view " + std::to_string(v) +
                                      " has no valid depth at all");
                pu = static_cast<double>(nu);
                pv = static_cast<double>(nv);
                dp = depths[v].at(nv, nu);
                ++clamped;
            }
            const double dg = bilinear_depth(depths[v], g.u, g.v);
            if (dg <= 0.0)
                throw DomainError("track_metrics: GT-visible point has invalid depth");
            const Eigen::Vector3d p3 = unproject({pu, pv}, dp, cams[v].K);
            const Eigen::Vector3d g3 = unproject({g.u, g.v}, dg, cams[v].K);
            const double e3d = (p3 - g3).norm();
            sum3d += e3d;
            for (size_t ti = 0; ti < cm_thresholds.size(); ++ti)
                if (e3d < cm_thresholds[ti] / 100.0) hits_cm[ti]++;
            ++scored;
        }
    }

    if (scored == 0) throw DomainError("track_metrics: no GT-visible points to score");

    TrackMetrics m;
    m.scored = scored;
    m.depth_clamped = clamped;
    m.ate2d = sum2d / static_cast<double>(scored);
    m.ate3d_cm = 100.0 * sum3d / static_cast<double>(scored);
    for (size_t ti = 0; ti < px_thresholds.size(); ++ti)
        m.acc_px.emplace_back(px_thresholds[ti],
                              100.0 * static_cast<double>(hits_px[ti]) /
                                  static_cast<double>(scored));
    for (size_t ti = 0; ti < cm_thresholds.size(); ++ti)
        m.acc_cm.emplace_back(cm_thresholds[ti],
                              100.0 * static_cast<double>(hits_cm[ti]) /
                                  static_cast<double>(scored));
    return m;
}

Similarity umeyama_align(const std::vector<Eigen::Vector3d>& src,
                         const std::vector<Eigen::Vector3d>& dst, bool with_scale) {
    const size_t n = src.size();
    if (n != dst.size())
        throw DimensionError("umeyama_align: " + std::to_string(n) + " vs " +
                             std::to_string(dst.size()) + " points");
    if (n < 3)
        throw AlignmentError("umeyama_align: need at least 3 point pairs, got " +
                             std::to_string(n));

    Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= static_cast<double>(n);
    mu_d /= static_cast<double>(n);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d xs = src[i] - mu_s;
        const Eigen::Vector3d xd = dst[i] - mu_d;
        cov += xd * xs.transpose();
        var_s += xs.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_s /= static_cast<double>(n);
    if (var_s <= 1e-18)
        throw AlignmentError("umeyama_align: source points are coincident");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300))
        throw AlignmentError("umeyama_align: degenerate (collinear) configuration");

    Eigen::Vector3d s_diag = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s_diag(2) = -1.0;

    Similarity sim;
    sim.R = svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
    sim.s = with_scale ? (sv.dot(s_diag) / var_s) : 1.0;
    sim.t = mu_d - sim.s * (sim.R * mu_s);

    double se = 0.0;
    for (size_t i = 0; i < n; ++i) se += (dst[i] - sim.apply(src[i])).squaredNorm();
    sim.rmse = std::sqrt(se / static_cast<double>(n));
    return sim;
}

PointmapMetrics pointmap_metrics(const std::vector<Eigen::Vector3d>& pred,
                                 const std::vector<uint8_t>& pred_valid,
                                 const std::vector<Eigen::Vector3d>& gt,
                                 const std::vector<uint8_t>& gt_valid, bool align) {
    if (pred.size() != pred_valid.size() || gt.size() != gt_valid.size())
        throw DimensionError("pointmap_metrics: validity mask sizes do not match points");

    const bool index_corresponding = pred.size() == gt.size();
    if (align && !index_corresponding)
        throw DimensionError("pointmap_metrics: align=true requires index-corresponding "
                             "clouds, got " +
                             std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));

    std::vector<Eigen::Vector3d> pred_adj(pred.begin(), pred.end());
    if (align) {
        std::vector<Eigen::Vector3d> s, d;
        for (size_t i = 0; i < pred.size(); ++i)
            if (pred_valid[i] && gt_valid[i]) {
                s.push_back(pred[i]);
                d.push_back(gt[i]);
            }
        const Similarity sim = umeyama_align(s, d, true);
        for (auto& p : pred_adj) p = sim.apply(p);
    }

    std::vector<Eigen::Vector3d> p_use, g_use;
    for (size_t i = 0; i < pred_adj.size(); ++i)
        if (pred_valid[i]) p_use.push_back(pred_adj[i]);
    for (size_t i = 0; i < gt.size(); ++i)
        if (gt_valid[i]) g_use.push_back(gt[i]);
    if (p_use.empty() || g_use.empty())
        throw DomainError("pointmap_metrics: empty point set after validity filtering");

    auto one_sided = [](const std::vector<Eigen::Vector3d>& from,
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

    PointmapMetrics m;
    m.pred_used = static_cast<int64_t>(p_use.size());
    m.gt_used = static_cast<int64_t>(g_use.size());
    m.accuracy = one_sided(p_use, g_use);
    m.completeness = one_sided(g_use, p_use);
    m.overall = 0.5 * (m.accuracy + m.completeness);

    if (index_corresponding) {
        double sum = 0.0;
        int64_t coords = 0;
        for (size_t i = 0; i < pred_adj.size(); ++i) {
            if (!(pred_valid[i] && gt_valid[i])) continue;
            const Eigen::Vector3d d = pred_adj[i] - gt[i];
            sum += std::fabs(d.x()) + std::fabs(d.y()) + std::fabs(d.z());
            coords += 3;
        }
        if (coords == 0)
            throw DomainError("pointmap_metrics: no jointly valid index pairs for l1");
        m.l1 = sum / static_cast<double>(coords);
    } else {
        m.l1 = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

PoseMetrics pose_metrics(const std::vector<Eigen::Matrix4d>& pred,
                         const std::vector<Eigen::Matrix4d>& gt,
                         const std::vector<double>& thresholds) {
    const size_t V = gt.size();
    if (pred.size() != V)
        throw DimensionError("pose_metrics: " + std::to_string(pred.size()) +
                             " predicted poses vs " + std::to_string(V) + " gt");
    if (V < 2) throw DomainError("pose_metrics: need at least two views");

    constexpr double kRad2Deg = 180.0 / M_PI;
    auto rel = [](const Eigen::Matrix4d& a, const Eigen::Matrix4d& b) -> Eigen::Matrix4d {
        Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
        const Eigen::Matrix3d r = a.topLeftCorner<3, 3>();
        inv.topLeftCorner<3, 3>() = r.transpose();
        inv.topRightCorner<3, 1>() = -(r.transpose() * a.topRightCorner<3, 1>());
        return inv * b;
    };

    std::vector<double> rot_err, tr_err; // per scored pair, degrees
    int64_t skipped = 0;
    for (size_t a = 0; a < V; ++a) {
        for (size_t b = 0; b < V; ++b) {
            if (a == b) continue;
            const Eigen::Matrix4d rg = rel(gt[a], gt[b]);
            const Eigen::Vector3d tg = rg.topRightCorner<3, 1>();
            if (tg.norm() == 0.0) {
                ++skipped;
                continue;
            }
            const Eigen::Matrix4d rp = rel(pred[a], pred[b]);

            const Eigen::Matrix3d dr =
                rp.topLeftCorner<3, 3>().transpose() * rg.topLeftCorner<3, 3>();
            const double c = std::clamp((dr.trace() - 1.0) / 2.0, -1.0, 1.0);
            rot_err.push_back(std::acos(c) * kRad2Deg);

            const Eigen::Vector3d tp = rp.topRightCorner<3, 1>();
            if (tp.norm() == 0.0) {
                tr_err.push_back(180.0); // undefined direction: worst case
            } else {
                const double ct = std::clamp(tp.normalized().dot(tg.normalized()), -1.0, 1.0);
                tr_err.push_back(std::acos(ct) * kRad2Deg);
            }
        }
    }

    if (rot_err.empty())
        throw DomainError("pose_metrics: no valid pairs (all relative translations zero)");

    PoseMetrics m;
    m.pairs = static_cast<int64_t>(rot_err.size());
    m.skipped = skipped;
    const double denom = static_cast<double>(rot_err.size());
    for (double thr : thresholds) {
        int64_t rh = 0, th = 0;
        for (size_t i = 0; i < rot_err.size(); ++i) {
            if (rot_err[i] < thr) ++rh;
            if (tr_err[i] < thr) ++th;
        }
        m.r_at.emplace_back(thr, 100.0 * static_cast<double>(rh) / denom);
        m.t_at.emplace_back(thr, 100.0 * static_cast<double>(th) / denom);

        // Accuracy-vs-threshold curve at 1-degree steps, error per pair is
        // max(rotation, translation).
        double auc = 0.0;
        const int kmax = static_cast<int>(thr);
        for (int tau = 1; tau <= kmax; ++tau) {
            int64_t hits = 0;
            for (size_t i = 0; i < rot_err.size(); ++i)
                if (std::max(rot_err[i], tr_err[i]) < static_cast<double>(tau)) ++hits;
            auc += static_cast<double>(hits) / denom;
        }
        m.auc_at.emplace_back(thr, 100.0 * auc / static_cast<double>(kmax));
    }
    return m;
}

} // namespace mvc
