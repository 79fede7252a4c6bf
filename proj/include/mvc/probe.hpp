#pragma once

#include <memory>
#include <vector>

#include "mvc/backbone.hpp"
#include "mvc/geometry.hpp"
#include "mvc/optimizer.hpp"
#include "mvc/synthdata.hpp"
#include "mvc/train.hpp"

namespace mvc {

// A lightweight decoder probing what a frozen backbone learned: a short
// stack of the same alternating-attention blocks over cached backbone
// features, a per-patch linear head predicting 3D points in the view-0
// frame, and a pooled per-view pose head (6D rotation + translation).
struct ProbeConfig {
    int64_t decoder_blocks = 4;
    int64_t steps = 150;
    int64_t train_scenes = 8;
    int64_t eval_scenes = 20;
    uint64_t seed = 11;
    int64_t feature_block = -1; // backbone block to probe; -1 = config default
    double pose_weight = 1.0;   // pose loss share relative to the point loss
    // Evaluate on the training scenes themselves instead of held-out ones
    // (overfit sanity checks).
    bool eval_on_train = false;
    OptimConfig optim;
    StreamConfig stream;

    void validate() const;
};

struct ProbeModel {
    std::shared_ptr<Tape> tape;
    BackboneConfig cfg; // dims copied from the backbone
    ParamSet params;
    std::vector<BlockParams> blocks;
    Tensor point_w, point_b;
    Tensor pose_w, pose_b;
};

ProbeModel init_probe(const BackboneConfig& backbone_cfg, int64_t decoder_blocks,
                      uint64_t seed);

// Decoder forward over cached features [V, N, dim]: per-patch 3D points
// [V, N, 3], per-view rotations [V, 3, 3] (orthonormalized), and per-view
// translations [V, 3].
struct ProbeForward {
    Tensor points;
    Tensor rotations;
    Tensor translations;
};
ProbeForward probe_forward(const ProbeModel& probe, const Tensor& features,
                           const PatchGrid& grid);

// Mean per-scene metrics after probe training.
struct ProbeReport {
    PointmapMetrics pointmap; // averaged over eval scenes
    PoseMetrics pose;         // averaged over eval scenes
    double final_loss = 0.0;
    int64_t eval_scenes = 0;
};

// Freeze the backbone, cache its features over generated train scenes, fit
// the probe, then evaluate on held-out scenes with Umeyama-aligned pointmap
// metrics and relative-pose metrics.
ProbeReport train_and_eval_probe(Tape& backbone_tape, const Backbone& backbone,
                                 const ProbeConfig& cfg);

} // namespace mvc
