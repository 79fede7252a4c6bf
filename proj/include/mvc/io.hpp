#pragma once

#include <string>
#include <vector>

#include "mvc/geometry.hpp"
#include "mvc/image.hpp"

namespace mvc {

// Binary PPM (P6, maxval 255). Values clamp to [0, 1] on write.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Raw depth container: magic "MKDP", u32 width, u32 height, u32 reserved,
// then row-major little-endian f32 samples.
void write_depth(const std::string& path, const DepthMap& depth);
DepthMap read_depth(const std::string& path);

// Per view: 9 intrinsics numbers (row-major K) followed by 12 pose numbers
// (row-major 3x4 camera-to-world), all on one line.
void write_cameras(const std::string& path, const std::vector<Camera>& cams);
std::vector<Camera> read_cameras(const std::string& path);

// One "seed_id view u v visible" row per (seed, view).
void write_tracks(const std::string& path, const std::vector<std::vector<TrackPoint>>& tracks);
std::vector<std::vector<TrackPoint>> read_tracks(const std::string& path);

// One "x y z [valid]" line per point. The valid column is written only when
// a validity vector is supplied; absent columns read back as all-valid.
void write_pointcloud(const std::string& path, const std::vector<Eigen::Vector3d>& points,
                      const std::vector<uint8_t>* valid = nullptr);
void read_pointcloud(const std::string& path, std::vector<Eigen::Vector3d>& points,
                     std::vector<uint8_t>& valid);

// One pose per line, 12 numbers, row-major 3x4.
void write_poses(const std::string& path, const std::vector<Eigen::Matrix4d>& poses);
std::vector<Eigen::Matrix4d> read_poses(const std::string& path);

// Scene directory layout: view_%03d.ppm, view_%03d.depth, cameras.txt and,
// when tracks are given, tracks.txt.
struct SceneFiles {
    std::vector<Image> images;
    std::vector<DepthMap> depths;
    std::vector<Camera> cams;
    std::vector<std::vector<TrackPoint>> tracks; // empty if tracks.txt absent
};

void export_scene_dir(const std::string& dir, const std::vector<Image>& images,
                      const std::vector<DepthMap>& depths, const std::vector<Camera>& cams,
                      const std::vector<std::vector<TrackPoint>>& tracks = {});
SceneFiles load_scene_dir(const std::string& dir);

// Deterministic shortest-round-trip formatting used by every text format
// and the JSON-lines log.
std::string format_double(double v);

} // namespace mvc
