#pragma once

#include <array>
#include <vector>

#include "mvc/backbone.hpp"
#include "mvc/geometry.hpp"

namespace mvc {

// Settings for attention-based track extraction.
struct TrackConfig {
    // Softmax sharpening temperature: rows are raised to 1/temperature
    // before the soft-argmax expectation.
    double temperature = 0.1;
    // Global block supplying the attention maps; -1 means the last one.
    int64_t attention_block = -1;
    // A target view counts as visible when its renormalized row max is at
    // least floor_scale / N, i.e. floor_scale times the uniform weight.
    double floor_scale = 2.0;
};

// Correspondences from the attention maps of one unmasked forward pass:
// for each seed pixel in view 0, the soft-argmax of its patch's attention
// row restricted to each target view. Result is [seed][view]; the source
// view itself is included (its entry degenerates to self-attention).
std::vector<std::vector<TrackPoint>> attention_tracks(Tape& tape, const Backbone& model,
                                                      const std::vector<Image>& views,
                                                      const std::vector<Eigen::Vector2d>& seeds,
                                                      const TrackConfig& cfg = {});

// Nearest-neighbor baseline: per target view, the patch whose feature has
// the highest cosine similarity with the seed patch's view-0 feature. Ties
// resolve to the lowest patch index. `features` holds plain values shaped
// [V, N, d]. Every prediction is marked visible; the baseline has no
// confidence signal.
std::vector<std::vector<TrackPoint>> nn_feature_tracks(const Tensor& features,
                                                       const std::vector<Eigen::Vector2d>& seeds,
                                                       const PatchGrid& grid);

// Joint 3-component PCA of all views' patch features, min-max scaled to
// [0, 1] per channel for direct use as RGB. Signs follow the
// largest-magnitude-loading-positive convention so repeated runs agree.
struct PcaResult {
    int64_t n_views = 0;
    int64_t patches_per_view = 0;
    int64_t components = 3;      // informative channels; trailing ones are zero
    bool rank_deficient = false; // fewer than 3 directions of variance
    std::vector<std::array<double, 3>> rgb; // [V * N]
};
PcaResult pca_project(const Tensor& features);

} // namespace mvc
