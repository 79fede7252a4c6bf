#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mvc/image.hpp"

namespace mvc {

struct Camera {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    // Rigid camera-to-world transform.
    Eigen::Matrix4d cam_to_world = Eigen::Matrix4d::Identity();

    Eigen::Matrix3d rotation() const { return cam_to_world.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return cam_to_world.topRightCorner<3, 1>(); }
    Eigen::Vector3d cam_point_to_world(const Eigen::Vector3d& pc) const;
    Eigen::Vector3d world_point_to_cam(const Eigen::Vector3d& pw) const;
};

// Pixel (u, v) + depth along the optical axis -> camera-frame point,
// P = depth * K^-1 * [u, v, 1]^T.
Eigen::Vector3d unproject(const Eigen::Vector2d& px, double depth, const Eigen::Matrix3d& K);

// Camera-frame point -> pixel. Points at or behind the camera plane are a
// domain error.
Eigen::Vector2d project(const Eigen::Vector3d& p_cam, const Eigen::Matrix3d& K);

// Bilinear depth lookup at pixel-center coordinates. Invalid (<= 0) samples
// are excluded and the remaining corner weights renormalized; returns 0 when
// nothing valid remains or the location is outside the image.
double bilinear_depth(const DepthMap& depth, double u, double v);

// Bilinear RGB lookup (no validity logic; coordinates clamped to the image).
Eigen::Vector3d bilinear_rgb(const Image& img, double u, double v);

struct TrackPoint {
    double u = 0.0;
    double v = 0.0;
    bool visible = false;
};

// Ground-truth correspondences for seed pixels in view 0: unproject with the
// view-0 depth, reproject into every view, and mark visibility as
// "projects in bounds and the projected depth agrees with that view's depth
// map within z_tol (relative)". Result is [seed][view].
std::vector<std::vector<TrackPoint>> gt_tracks(const std::vector<Camera>& cams,
                                               const std::vector<DepthMap>& depths,
                                               const std::vector<Eigen::Vector2d>& seeds,
                                               double z_tol = 0.01);

struct TrackMetrics {
    double ate2d = 0.0; // mean pixel error
    std::vector<std::pair<double, double>> acc_px; // threshold -> percent with error < t
    double ate3d_cm = 0.0; // mean 3D error in centimeters
    std::vector<std::pair<double, double>> acc_cm; // threshold (cm) -> percent
    int64_t scored = 0;         // GT-visible (seed, target-view) pairs
    int64_t depth_clamped = 0;  // predictions that landed on invalid depth
};

inline const std::vector<double>& default_px_thresholds() {
    static const std::vector<double> t{1.0, 2.0, 5.0, 10.0, 25.0, 50.0};
    return t;
}
inline const std::vector<double>& default_cm_thresholds() {
    static const std::vector<double> t{1.0, 2.0, 5.0, 10.0};
    return t;
}

// Score predicted tracks against ground truth over all GT-visible points in
// target views (the seed view itself is not scored). 3D errors unproject
// both pixels with that view's depth map; predictions on invalid depth snap
// to the nearest valid depth sample.
TrackMetrics track_metrics(const std::vector<std::vector<TrackPoint>>& pred,
                           const std::vector<std::vector<TrackPoint>>& gt,
                           const std::vector<Camera>& cams,
                           const std::vector<DepthMap>& depths,
                           const std::vector<double>& px_thresholds = default_px_thresholds(),
                           const std::vector<double>& cm_thresholds = default_cm_thresholds());

struct Similarity {
    double s = 1.0;
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double rmse = 0.0;

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return s * (R * p) + t; }
};

// Least-squares similarity (or rigid, with_scale=false) transform mapping
// src onto dst. Degenerate inputs (fewer than 3 points, coincident or
// collinear sets) raise an alignment error. R is always a proper rotation.
Similarity umeyama_align(const std::vector<Eigen::Vector3d>& src,
                         const std::vector<Eigen::Vector3d>& dst, bool with_scale = true);

struct PointmapMetrics {
    double accuracy = 0.0;     // mean over pred of nearest-gt distance
    double completeness = 0.0; // mean over gt of nearest-pred distance
    double overall = 0.0;      // (accuracy + completeness) / 2
    double l1 = 0.0;           // mean |coordinate error| over index pairs
    int64_t pred_used = 0;
    int64_t gt_used = 0;
};

// Compare predicted and ground-truth point sets. With align=true the sets
// must be index-corresponding; a similarity transform fit on the jointly
// valid pairs is applied to the predictions first. l1 requires
// index-correspondence and is reported only when sizes match.
PointmapMetrics pointmap_metrics(const std::vector<Eigen::Vector3d>& pred,
                                 const std::vector<uint8_t>& pred_valid,
                                 const std::vector<Eigen::Vector3d>& gt,
                                 const std::vector<uint8_t>& gt_valid, bool align);

struct PoseMetrics {
    // threshold (deg) -> percent of pairs under it
    std::vector<std::pair<double, double>> r_at;
    std::vector<std::pair<double, double>> t_at;
    // threshold -> normalized area under the accuracy curve, where a pair's
    // error is max(rotation error, translation direction error)
    std::vector<std::pair<double, double>> auc_at;
    int64_t pairs = 0;
    int64_t skipped = 0; // pairs with zero-norm GT relative translation
};

inline const std::vector<double>& default_pose_thresholds() {
    static const std::vector<double> t{5.0, 15.0, 30.0};
    return t;
}

// Relative-pose accuracy over all ordered view pairs. Rotation error is the
// geodesic angle between predicted and ground-truth relative rotations;
// translation error is the angle between relative translation directions.
PoseMetrics pose_metrics(const std::vector<Eigen::Matrix4d>& pred,
                         const std::vector<Eigen::Matrix4d>& gt,
                         const std::vector<double>& thresholds = default_pose_thresholds());

} // namespace mvc
