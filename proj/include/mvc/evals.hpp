#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvc/correspond.hpp"
#include "mvc/synthdata.hpp"
#include "mvc/train.hpp"

namespace mvc {

enum class TrackMethod { attention, nn_features };
TrackMethod track_method_from_string(const std::string& s);

struct TrackEvalConfig {
    TrackMethod method = TrackMethod::attention;
    int64_t n_scenes = 10;
    int64_t seeds_per_scene = 16;
    uint64_t seed = 99;
    // -1 scores every view of each scene. A non-negative value switches to
    // pair mode: the forward pass sees views {0, 1} plus this many context
    // views, while scoring stays restricted to the fixed pair (0, 1).
    int64_t context_views = -1;
    TrackConfig track;
    StreamConfig stream;
    std::vector<double> px_thresholds = default_px_thresholds();
    std::vector<double> cm_thresholds = default_cm_thresholds();
};

struct TrackEvalResult {
    TrackMetrics pooled; // weighted by scored pairs across scenes
    std::vector<TrackMetrics> per_scene;
    int64_t scenes = 0;
};

// Evaluate correspondence quality over freshly generated scenes.
TrackEvalResult eval_tracks_stream(Tape& tape, const Backbone& model,
                                   const TrackEvalConfig& cfg);

// Evaluate one externally provided scene (images + depths + cameras + seeds).
TrackMetrics eval_tracks_scene(Tape& tape, const Backbone& model,
                               const std::vector<Image>& images,
                               const std::vector<DepthMap>& depths,
                               const std::vector<Camera>& cams,
                               const std::vector<Eigen::Vector2d>& seeds,
                               const TrackEvalConfig& cfg);

struct BenchRow {
    int64_t views = 0;
    double median_ms = 0.0;
    double min_ms = 0.0;
    int64_t repeats = 0;
};

// Median forward wall time per view count on rendered scenes.
std::vector<BenchRow> bench_forward(Tape& tape, const Backbone& model,
                                    const std::vector<int64_t>& view_counts, int64_t repeats,
                                    const StreamConfig& stream, uint64_t seed);

// PCA feature visualization: forwards the views unmasked, jointly projects
// the chosen block's features to 3 channels, and writes one patch-resolution
// PPM per view into out_dir.
PcaResult dump_pca(Tape& tape, const Backbone& model, const std::vector<Image>& views,
                   int64_t block, const std::string& out_dir);

} // namespace mvc
