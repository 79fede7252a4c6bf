#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvc/geometry.hpp"
#include "mvc/image.hpp"
#include "mvc/rng.hpp"

namespace mvc {

enum class SceneKind { plane, two_plane, height_field };
enum class TextureKind { noise_smoothed, checker };

SceneKind scene_kind_from_string(const std::string& s);
TextureKind texture_kind_from_string(const std::string& s);
const char* to_string(SceneKind k);
const char* to_string(TextureKind k);

struct SceneSpec {
    SceneKind kind = SceneKind::plane;
    TextureKind texture = TextureKind::noise_smoothed;
    int64_t image_h = 64;
    int64_t image_w = 64;
    int64_t n_views = 4;
    double extent = 2.0;      // side length of the scene footprint, meters
    double arc_radius = 2.0;  // camera distance from the scene centroid
    double arc_span_deg = 40.0;
    double arc_center_deg = 0.0;
    double arc_jitter_deg = 1.5; // per-view angular and height jitter scale
    double height_amp = 0.15;    // height-field amplitude, fraction of extent
    uint64_t seed = 0;

    // Cameras on an arc of arc_span_deg centered at arc_center_deg, all
    // looking at the centroid. A span of at least 180 degrees switches the
    // plane scene into a two-faced slab whose sides carry independent
    // textures, so opposite cameras share no visible surface: the deliberate
    // non-overlap stress construction.
    bool non_overlap() const { return arc_span_deg >= 180.0; }
};

struct SceneView {
    Image image;
    DepthMap depth;
    Camera cam;
};

struct Scene {
    SceneSpec spec;
    std::vector<SceneView> views;
};

// Deterministic analytic render of the scene described by the spec.
Scene render_scene(const SceneSpec& spec);

// Sample pixel locations with valid depth in view 0, uniformly over the
// valid set.
std::vector<Eigen::Vector2d> sample_seed_pixels(const Scene& scene, int64_t count, Rng& rng);

// Per-view, per-patch-center ground-truth 3D points expressed in the view-0
// camera frame, with validity from the depth maps. Flat layout [V * N].
struct PointmapGt {
    int64_t n_views = 0;
    int64_t patches_per_view = 0;
    std::vector<Eigen::Vector3d> points;
    std::vector<uint8_t> valid;
};
PointmapGt gt_pointmap(const Scene& scene, int64_t patch_size);

// Camera poses relative to view 0 (view 0 maps to identity).
std::vector<Eigen::Matrix4d> relative_poses(const Scene& scene);

// Two-view stress spec: a two-faced slab with one camera per side, so the
// pair shares no visible surface. Angles keep both cameras well away from
// grazing incidence.
SceneSpec non_overlap_pair_spec(int64_t image_h, int64_t image_w, double extent,
                                double arc_radius, Rng& rng);

// Endless deterministic stream of training scenes: each draw renders a
// fresh scene with a uniformly sampled view count and a contiguous camera
// arc. Scene i depends only on (seed, i).
struct StreamConfig {
    int64_t min_views = 2;
    int64_t max_views = 8;
    int64_t image_h = 64;
    int64_t image_w = 64;
    double extent = 2.0;
    double arc_radius = 2.0;
    double min_step_deg = 5.0; // angular spacing between consecutive views
    double max_step_deg = 12.0;
    // Relative draw weights for scene kinds.
    double w_plane = 0.5;
    double w_two_plane = 0.5;
    double w_height_field = 0.0;
    double w_checker = 0.25;  // probability of a checker texture
    double w_wide_arc = 0.0;  // probability of a non-overlap slab pair draw
};

class SceneStream {
public:
    SceneStream(const StreamConfig& cfg, uint64_t seed);
    Scene next();
    // Spec of draw i without advancing the stream.
    SceneSpec spec_at(int64_t index) const;
    int64_t drawn() const { return index_; }

private:
    StreamConfig cfg_;
    uint64_t seed_;
    int64_t index_ = 0;
};

} // namespace mvc
