#include "mvc/synthdata.hpp"

#include <cmath>

#include "mvc/errors.hpp"
#include "mvc/masking.hpp"

namespace mvc {

SceneKind scene_kind_from_string(const std::string& s) {
    if (s == "plane") return SceneKind::plane;
    if (s == "two_plane") return SceneKind::two_plane;
    if (s == "height_field") return SceneKind::height_field;
    throw ConfigError("unknown scene kind: " + s);
}

TextureKind texture_kind_from_string(const std::string& s) {
    if (s == "noise_smoothed") return TextureKind::noise_smoothed;
    if (s == "checker") return TextureKind::checker;
    throw ConfigError("unknown texture kind: " + s);
}

const char* to_string(SceneKind k) {
    switch (k) {
        case SceneKind::plane: return "plane";
        case SceneKind::two_plane: return "two_plane";
        case SceneKind::height_field: return "height_field";
    }
    return "?";
}

const char* to_string(TextureKind k) {
    switch (k) {
        case TextureKind::noise_smoothed: return "noise_smoothed";
        case TextureKind::checker: return "checker";
    }
    return "?";
}

namespace {

constexpr double kNearClip = 0.01;
constexpr double kSlabThicknessFrac = 0.1; // slab depth as a fraction of extent
constexpr double kFgPlaneZ = 0.5;          // two_plane foreground height, meters
constexpr double kDeg2Rad = M_PI / 180.0;

// Smoothly varying RGB field over [-span, span]^2, bilinear between grid
// knots. Values stay in a comfortable band away from 0 and 1 so renders
// never clip.
struct SmoothNoiseTexture {
    int64_t cells = 12;
    double span = 0.0;
    std::vector<double> knots; // (cells+1)^2 * 3

    SmoothNoiseTexture() = default;
    SmoothNoiseTexture(double span_, Rng rng) : span(span_) {
        knots.resize(static_cast<size_t>((cells + 1) * (cells + 1) * 3));
        for (double& k : knots) k = rng.uniform(0.15, 0.85);
    }

    Eigen::Vector3d sample(double x, double y) const {
        const double gx = (x + span) / (2.0 * span) * static_cast<double>(cells);
        const double gy = (y + span) / (2.0 * span) * static_cast<double>(cells);
        const double cx = std::clamp(gx, 0.0, static_cast<double>(cells) - 1e-9);
        const double cy = std::clamp(gy, 0.0, static_cast<double>(cells) - 1e-9);
        const int64_t x0 = static_cast<int64_t>(cx), y0 = static_cast<int64_t>(cy);
        const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
        Eigen::Vector3d out;
        for (int c = 0; c < 3; ++c) {
            auto at = [&](int64_t yy, int64_t xx) {
                return knots[static_cast<size_t>((yy * (cells + 1) + xx) * 3 + c)];
            };
            const double top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
            const double bot = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
            out[c] = (1.0 - fy) * top + fy * bot;
        }
        return out;
    }
};

struct CheckerTexture {
    double cell = 0.25;
    Eigen::Vector3d a, b;

    CheckerTexture() = default;
    CheckerTexture(double extent, Rng rng) {
        cell = extent / 8.0;
        a = {rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5)};
        b = {rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9)};
    }

    Eigen::Vector3d sample(double x, double y) const {
        const int64_t ix = static_cast<int64_t>(std::floor(x / cell));
        const int64_t iy = static_cast<int64_t>(std::floor(y / cell));
        return ((ix + iy) & 1) ? b : a;
    }
};

struct Texture {
    TextureKind kind = TextureKind::noise_smoothed;
    SmoothNoiseTexture noise;
    CheckerTexture checker;

    static Texture make(TextureKind kind, double extent, Rng rng) {
        Texture t;
        t.kind = kind;
        if (kind == TextureKind::noise_smoothed)
            t.noise = SmoothNoiseTexture(extent, rng);
        else
            t.checker = CheckerTexture(extent, rng);
        return t;
    }

    Eigen::Vector3d sample(double x, double y) const {
        return kind == TextureKind::noise_smoothed ? noise.sample(x, y)
                                                   : checker.sample(x, y);
    }
};

// The smooth height field used by the height_field kind: a small grid of
// normal-distributed knots, bicosine-smoothed for continuous derivatives.
struct HeightField {
    int64_t cells = 6;
    double half = 1.0; // half extent
    double amp = 0.3;
    std::vector<double> knots;

    HeightField() = default;
    HeightField(double extent, double amplitude, Rng rng)
        : half(extent / 2.0), amp(amplitude) {
        knots.resize(static_cast<size_t>((cells + 1) * (cells + 1)));
        for (double& k : knots) k = rng.uniform(-1.0, 1.0);
    }

    double at(double x, double y) const {
        const double gx =
            std::clamp((x + half) / (2.0 * half), 0.0, 1.0) * static_cast<double>(cells);
        const double gy =
            std::clamp((y + half) / (2.0 * half), 0.0, 1.0) * static_cast<double>(cells);
        const double cx = std::min(gx, static_cast<double>(cells) - 1e-9);
        const double cy = std::min(gy, static_cast<double>(cells) - 1e-9);
        const int64_t x0 = static_cast<int64_t>(cx), y0 = static_cast<int64_t>(cy);
        double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
        // cosine easing keeps the surface C1 across cell boundaries
        fx = 0.5 - 0.5 * std::cos(M_PI * fx);
        fy = 0.5 - 0.5 * std::cos(M_PI * fy);
        auto at_knot = [&](int64_t yy, int64_t xx) {
            return knots[static_cast<size_t>(yy * (cells + 1) + xx)];
        };
        const double top = (1.0 - fx) * at_knot(y0, x0) + fx * at_knot(y0, x0 + 1);
        const double bot = (1.0 - fx) * at_knot(y0 + 1, x0) + fx * at_knot(y0 + 1, x0 + 1);
        return amp * ((1.0 - fy) * top + fy * bot);
    }

    Eigen::Vector3d normal(double x, double y) const {
        const double h = 1e-5;
        const double dx = (at(x + h, y) - at(x - h, y)) / (2.0 * h);
        const double dy = (at(x, y + h) - at(x, y - h)) / (2.0 * h);
        return Eigen::Vector3d(-dx, -dy, 1.0).normalized();
    }
};

struct HitInfo {
    double t = -1.0;
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    int texture = 0;
    Eigen::Vector2d tex_xy = Eigen::Vector2d::Zero();
};

struct SceneGeometry {
    SceneSpec spec;
    std::vector<Texture> textures;
    HeightField field;
    Eigen::Vector2d fg_offset = Eigen::Vector2d::Zero();

    double half() const { return spec.extent / 2.0; }
    double slab_z() const { return -kSlabThicknessFrac * spec.extent; }

    // z = z0 plane bounded by |x|, |y| <= half around (ox, oy). side: +1
    // hits from above only, -1 from below only, 0 both.
    static bool plane_hit(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double z0,
                          double half_ext, const Eigen::Vector2d& off, int side, HitInfo& h) {
        if (std::fabs(d.z()) < 1e-15) return false;
        const double t = (z0 - o.z()) / d.z();
        if (t <= kNearClip) return false;
        if (side > 0 && d.z() >= 0.0) return false;
        if (side < 0 && d.z() <= 0.0) return false;
        const Eigen::Vector3d p = o + t * d;
        if (std::fabs(p.x() - off.x()) > half_ext || std::fabs(p.y() - off.y()) > half_ext)
            return false;
        h.t = t;
        h.p = p;
        h.normal = Eigen::Vector3d(0.0, 0.0, side < 0 ? -1.0 : 1.0);
        h.tex_xy = {p.x() - off.x(), p.y() - off.y()};
        return true;
    }

    bool trace(const Eigen::Vector3d& o, const Eigen::Vector3d& d, HitInfo& best) const {
        bool found = false;
        auto consider = [&](const HitInfo& h) {
            if (!found || h.t < best.t) {
                best = h;
                found = true;
            }
        };
        HitInfo h;
        switch (spec.kind) {
            case SceneKind::plane:
                if (spec.non_overlap()) {
                    // Two one-sided faces with independent textures.
                    if (plane_hit(o, d, 0.0, half(), {0, 0}, +1, h)) {
                        h.texture = 0;
                        consider(h);
                    }
                    if (plane_hit(o, d, slab_z(), half(), {0, 0}, -1, h)) {
                        h.texture = 1;
                        consider(h);
                    }
                } else {
                    if (plane_hit(o, d, 0.0, half(), {0, 0}, 0, h)) {
                        h.texture = 0;
                        consider(h);
                    }
                }
                break;
            case SceneKind::two_plane:
                if (plane_hit(o, d, 0.0, half(), {0, 0}, 0, h)) {
                    h.texture = 0;
                    consider(h);
                }
                if (plane_hit(o, d, kFgPlaneZ, half() / 3.0, fg_offset, 0, h)) {
                    h.texture = 1;
                    consider(h);
                }
                break;
            case SceneKind::height_field: {
                if (trace_height_field(o, d, h)) {
                    h.texture = 0;
                    consider(h);
                }
                break;
            }
        }
        return found;
    }

    bool trace_height_field(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                            HitInfo& h) const {
        // March through the bounding box of the surface, then bisect the
        // first sign change of f(t) = z(t) - h(x(t), y(t)).
        const double zmax = field.amp + 1e-3;
        const double zmin = -field.amp - 1e-3;
        double t0 = kNearClip, t1 = 1e9;
        auto clip = [&](double p, double dir, double lo, double hi) {
            if (std::fabs(dir) < 1e-15) return p >= lo && p <= hi;
            double ta = (lo - p) / dir, tb = (hi - p) / dir;
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            return true;
        };
        if (!clip(o.x(), d.x(), -half(), half())) return false;
        if (!clip(o.y(), d.y(), -half(), half())) return false;
        if (!clip(o.z(), d.z(), zmin, zmax)) return false;
        if (t0 >= t1) return false;

        const double step = 0.008;
        auto f = [&](double t) {
            const Eigen::Vector3d p = o + t * d;
            return p.z() - field.at(p.x(), p.y());
        };
        double prev_t = t0, prev_f = f(t0);
        if (prev_f < 0.0) return false; // starts below the surface
        for (double t = t0 + step; t <= t1 + step; t += step) {
            const double tc = std::min(t, t1);
            const double fc = f(tc);
            if (fc < 0.0) {
                double lo = prev_t, hi = tc;
                while (hi - lo > 1e-6) {
                    const double mid = 0.5 * (lo + hi);
                    (f(mid) >= 0.0 ? lo : hi) = mid;
                }
                const double th = 0.5 * (lo + hi);
                h.t = th;
                h.p = o + th * d;
                h.normal = field.normal(h.p.x(), h.p.y());
                h.tex_xy = {h.p.x(), h.p.y()};
                return true;
            }
            prev_t = tc;
            prev_f = fc;
            if (tc >= t1) break;
        }
        return false;
    }

    Eigen::Vector3d shade(const HitInfo& h, const Eigen::Vector3d& view_dir) const {
        const Eigen::Vector3d albedo =
            textures[static_cast<size_t>(h.texture)].sample(h.tex_xy.x(), h.tex_xy.y());
        // Lambertian under a fixed directional light plus ambient; the
        // normal is flipped toward the viewer for two-sided surfaces so both
        // sides are lit consistently for all cameras on that side.
        static const Eigen::Vector3d kLight = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
        Eigen::Vector3d n = h.normal;
        if (n.dot(view_dir) > 0.0) n = -n;
        const double diffuse = std::max(0.0, n.dot(kLight));
        const double shade = 0.35 + 0.65 * diffuse;
        return albedo * shade;
    }

    // Reject cameras that sit on (or inside) scene geometry.
    void check_camera(const Eigen::Vector3d& c) const {
        const double margin = 0.05;
        const bool in_footprint =
            std::fabs(c.x()) <= half() + margin && std::fabs(c.y()) <= half() + margin;
        switch (spec.kind) {
            case SceneKind::plane: {
                const double lo = spec.non_overlap() ? slab_z() - margin : -margin;
                if (in_footprint && c.z() >= lo && c.z() <= margin)
                    throw GenerationError("camera inside scene geometry");
                break;
            }
            case SceneKind::two_plane:
                if (in_footprint && std::fabs(c.z()) <= margin)
                    throw GenerationError("camera inside scene geometry");
                if (std::fabs(c.x() - fg_offset.x()) <= half() / 3.0 + margin &&
                    std::fabs(c.y() - fg_offset.y()) <= half() / 3.0 + margin &&
                    std::fabs(c.z() - kFgPlaneZ) <= margin)
                    throw GenerationError("camera inside scene geometry");
                break;
            case SceneKind::height_field:
                if (in_footprint && c.z() <= field.at(c.x(), c.y()) + margin)
                    throw GenerationError("camera inside scene geometry");
                break;
        }
    }
};

Camera make_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                   double focal, int64_t w, int64_t h) {
    const Eigen::Vector3d fwd = (target - position).normalized();
    const Eigen::Vector3d world_up(0.0, 1.0, 0.0);
    Eigen::Vector3d right = fwd.cross(world_up);
    if (right.norm() < 1e-9) right = Eigen::Vector3d(1.0, 0.0, 0.0); // looking straight up/down
    right.normalize();
    const Eigen::Vector3d down = fwd.cross(right).normalized();

    Camera cam;
    cam.K = Eigen::Matrix3d::Identity();
    cam.K(0, 0) = focal;
    cam.K(1, 1) = focal;
    cam.K(0, 2) = static_cast<double>(w - 1) / 2.0;
    cam.K(1, 2) = static_cast<double>(h - 1) / 2.0;
    cam.cam_to_world = Eigen::Matrix4d::Identity();
    cam.cam_to_world.block<3, 1>(0, 0) = right;
    cam.cam_to_world.block<3, 1>(0, 1) = down;
    cam.cam_to_world.block<3, 1>(0, 2) = fwd;
    cam.cam_to_world.block<3, 1>(0, 3) = position;
    return cam;
}

} // namespace

Scene render_scene(const SceneSpec& spec) {
    if (spec.n_views < 1) throw ConfigError("render_scene: need at least one view");
    if (spec.image_h <= 0 || spec.image_w <= 0)
        throw ConfigError("render_scene: image size must be positive");
    if (spec.extent <= 0.0 || spec.arc_radius <= 0.0)
        throw ConfigError("render_scene: extent and arc radius must be positive");

    Rng scene_rng(spec.seed);
    SceneGeometry geo;
    geo.spec = spec;
    geo.textures.push_back(Texture::make(spec.texture, spec.extent, scene_rng.split(1)));
    geo.textures.push_back(Texture::make(spec.texture, spec.extent, scene_rng.split(2)));
    if (spec.kind == SceneKind::height_field)
        geo.field = HeightField(spec.extent, spec.height_amp * spec.extent, scene_rng.split(3));
    if (spec.kind == SceneKind::two_plane) {
        Rng r = scene_rng.split(4);
        geo.fg_offset = {r.uniform(-spec.extent / 8.0, spec.extent / 8.0),
                         r.uniform(-spec.extent / 8.0, spec.extent / 8.0)};
    }

    const double focal =
        static_cast<double>(spec.image_w) * spec.arc_radius / spec.extent;

    Scene scene;
    scene.spec = spec;
    scene.views.resize(static_cast<size_t>(spec.n_views));

    Rng cam_rng = scene_rng.split(5);
    for (int64_t vi = 0; vi < spec.n_views; ++vi) {
        double theta_deg = spec.arc_center_deg;
        if (spec.n_views > 1)
            theta_deg += spec.arc_span_deg *
                         (static_cast<double>(vi) / static_cast<double>(spec.n_views - 1) - 0.5);
        theta_deg += cam_rng.uniform(-spec.arc_jitter_deg, spec.arc_jitter_deg);
        const double theta = theta_deg * kDeg2Rad;
        const double y_off = cam_rng.uniform(-0.05, 0.05) * spec.arc_radius;
        const Eigen::Vector3d pos(spec.arc_radius * std::sin(theta), y_off,
                                  spec.arc_radius * std::cos(theta));
        geo.check_camera(pos);

        Camera cam = make_camera(pos, Eigen::Vector3d::Zero(), focal, spec.image_w,
                                 spec.image_h);
        SceneView& view = scene.views[static_cast<size_t>(vi)];
        view.cam = cam;
        view.image.h = spec.image_h;
        view.image.w = spec.image_w;
        view.image.rgb.assign(static_cast<size_t>(spec.image_h * spec.image_w * 3), 0.25);
        view.depth.h = spec.image_h;
        view.depth.w = spec.image_w;
        view.depth.d.assign(static_cast<size_t>(spec.image_h * spec.image_w), 0.0);

        const Eigen::Matrix3d k_inv = cam.K.inverse();
        int64_t hits = 0;
        for (int64_t py = 0; py < spec.image_h; ++py) {
            for (int64_t px = 0; px < spec.image_w; ++px) {
                const Eigen::Vector3d dir_cam =
                    (k_inv * Eigen::Vector3d(static_cast<double>(px),
                                             static_cast<double>(py), 1.0))
                        .normalized();
                const Eigen::Vector3d dir = cam.rotation() * dir_cam;
                HitInfo hit;
                if (!geo.trace(pos, dir, hit)) continue;
                ++hits;
                const Eigen::Vector3d rgb = geo.shade(hit, dir);
                for (int c = 0; c < 3; ++c)
                    view.image.at(py, px, c) = std::clamp(rgb[c], 0.0, 1.0);
                view.depth.d[static_cast<size_t>(py * spec.image_w + px)] =
                    cam.world_point_to_cam(hit.p).z();
            }
        }
        if (hits == 0)
            throw GenerationError("view " + std::to_string(vi) +
                                  " images no part of the scene");
    }
    return scene;
}

std::vector<Eigen::Vector2d> sample_seed_pixels(const Scene& scene, int64_t count, Rng& rng) {
    if (scene.views.empty()) throw DomainError("sample_seed_pixels: empty scene");
    const DepthMap& d0 = scene.views[0].depth;
    std::vector<int64_t> valid;
    for (int64_t i = 0; i < d0.h * d0.w; ++i)
        if (d0.d[static_cast<size_t>(i)] > 0.0) valid.push_back(i);
    if (valid.empty()) throw DomainError("sample_seed_pixels: view 0 has no valid depth");

    std::vector<Eigen::Vector2d> seeds;
    seeds.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const int64_t pick = valid[static_cast<size_t>(rng.randint(
            static_cast<int64_t>(valid.size())))];
        seeds.emplace_back(static_cast<double>(pick % d0.w),
                           static_cast<double>(pick / d0.w));
    }
    return seeds;
}

PointmapGt gt_pointmap(const Scene& scene, int64_t patch_size) {
    if (scene.views.empty()) throw DomainError("gt_pointmap: empty scene");
    const PatchGrid grid(scene.spec.image_h, scene.spec.image_w, patch_size);
    const int64_t V = static_cast<int64_t>(scene.views.size());
    const int64_t N = grid.count();

    PointmapGt out;
    out.n_views = V;
    out.patches_per_view = N;
    out.points.assign(static_cast<size_t>(V * N), Eigen::Vector3d::Zero());
    out.valid.assign(static_cast<size_t>(V * N), 0);

    const Camera& c0 = scene.views[0].cam;
    for (int64_t v = 0; v < V; ++v) {
        const SceneView& sv = scene.views[static_cast<size_t>(v)];
        for (int64_t j = 0; j < N; ++j) {
            const double u = grid.center_u(j);
            const double w = grid.center_v(j);
            const double d = bilinear_depth(sv.depth, u, w);
            if (d <= 0.0) continue;
            const Eigen::Vector3d pc = unproject({u, w}, d, sv.cam.K);
            const Eigen::Vector3d pw = sv.cam.cam_point_to_world(pc);
            out.points[static_cast<size_t>(v * N + j)] = c0.world_point_to_cam(pw);
            out.valid[static_cast<size_t>(v * N + j)] = 1;
        }
    }
    return out;
}

std::vector<Eigen::Matrix4d> relative_poses(const Scene& scene) {
    std::vector<Eigen::Matrix4d> out;
    out.reserve(scene.views.size());
    const Eigen::Matrix4d t0 = scene.views[0].cam.cam_to_world;
    Eigen::Matrix4d inv0 = Eigen::Matrix4d::Identity();
    const Eigen::Matrix3d r0 = t0.topLeftCorner<3, 3>();
    inv0.topLeftCorner<3, 3>() = r0.transpose();
    inv0.topRightCorner<3, 1>() = -(r0.transpose() * t0.topRightCorner<3, 1>());
    for (const SceneView& v : scene.views) out.push_back(inv0 * v.cam.cam_to_world);
    return out;
}

SceneStream::SceneStream(const StreamConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg.min_views < 1 || cfg.max_views < cfg.min_views)
        throw ConfigError("scene stream: invalid view-count range [" +
                          std::to_string(cfg.min_views) + ", " +
                          std::to_string(cfg.max_views) + "]");
    if (cfg.w_plane < 0 || cfg.w_two_plane < 0 || cfg.w_height_field < 0 ||
        cfg.w_plane + cfg.w_two_plane + cfg.w_height_field <= 0)
        throw ConfigError("scene stream: scene-kind weights must be non-negative with "
                          "positive sum");
    if (cfg.w_wide_arc < 0.0 || cfg.w_wide_arc > 1.0)
        throw ConfigError("scene stream: w_wide_arc must be in [0, 1]");
}

SceneSpec non_overlap_pair_spec(int64_t image_h, int64_t image_w, double extent,
                                double arc_radius, Rng& rng) {
    SceneSpec spec;
    spec.kind = SceneKind::plane;
    spec.texture =
        rng.uniform01() < 0.25 ? TextureKind::checker : TextureKind::noise_smoothed;
    spec.image_h = image_h;
    spec.image_w = image_w;
    spec.n_views = 2;
    spec.extent = extent;
    spec.arc_radius = arc_radius;
    // One camera lands 55..75 degrees off the front normal, the other
    // 110..150 off, putting them on opposite slab faces with margin against
    // the jitter and the grazing zone near 90 degrees.
    const double span = rng.uniform(185.0, 205.0);
    const double off = rng.uniform(15.0, 35.0);
    const double center = span / 2.0 - 90.0 + off;
    spec.arc_span_deg = span;
    spec.arc_center_deg = rng.uniform01() < 0.5 ? center : -center;
    spec.arc_jitter_deg = 1.0;
    spec.seed = rng.next_u64();
    return spec;
}

SceneSpec SceneStream::spec_at(int64_t index) const {
    Rng rng = Rng(seed_).split(static_cast<uint64_t>(index) + 0x51ceull);
    if (cfg_.w_wide_arc > 0.0 && rng.uniform01() < cfg_.w_wide_arc)
        return non_overlap_pair_spec(cfg_.image_h, cfg_.image_w, cfg_.extent,
                                     cfg_.arc_radius, rng);
    SceneSpec spec;
    spec.image_h = cfg_.image_h;
    spec.image_w = cfg_.image_w;
    spec.extent = cfg_.extent;
    spec.arc_radius = cfg_.arc_radius;
    spec.n_views =
        cfg_.min_views + rng.randint(cfg_.max_views - cfg_.min_views + 1);

    const double total = cfg_.w_plane + cfg_.w_two_plane + cfg_.w_height_field;
    const double u = rng.uniform01() * total;
    spec.kind = u < cfg_.w_plane ? SceneKind::plane
                : u < cfg_.w_plane + cfg_.w_two_plane ? SceneKind::two_plane
                                                      : SceneKind::height_field;
    spec.texture = rng.uniform01() < cfg_.w_checker ? TextureKind::checker
                                                    : TextureKind::noise_smoothed;

    // Contiguous arc: consecutive views sit a sampled step apart.
    const double step = rng.uniform(cfg_.min_step_deg, cfg_.max_step_deg);
    spec.arc_span_deg = step * static_cast<double>(std::max<int64_t>(spec.n_views - 1, 1));
    spec.arc_center_deg = rng.uniform(-15.0, 15.0);
    spec.arc_jitter_deg = 1.0;
    spec.seed = splitmix64(seed_ ^ splitmix64(static_cast<uint64_t>(index)));
    return spec;
}

Scene SceneStream::next() { return render_scene(spec_at(index_++)); }

} // namespace mvc
