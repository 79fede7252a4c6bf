#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mvc/backbone.hpp"
#include "mvc/config.hpp"
#include "mvc/masking.hpp"
#include "mvc/objective.hpp"
#include "mvc/optimizer.hpp"
#include "mvc/synthdata.hpp"

namespace mvc {

struct TrainConfig {
    BackboneConfig backbone;
    MaskConfig mask;
    StreamConfig stream;
    OptimConfig optim;
    LossConfig loss;
    int64_t steps = 300;
    int64_t batch_scenes = 1;
    uint64_t seed = 7;
    int64_t log_interval = 10;
    int64_t eval_interval = 0;       // 0: evaluate only at the end
    int64_t checkpoint_interval = 0; // 0: write only the final checkpoint
    int64_t val_scenes = 4;
    std::string out_dir = "run";

    void validate() const;
};

TrainConfig train_from_config(const ConfigMap& cfg);

// A model plus the tape its parameters live on. The tape owns gradient
// bookkeeping; the model holds shared handles to the parameter tensors.
struct ModelBundle {
    std::shared_ptr<Tape> tape;
    Backbone model;
};

ModelBundle make_model(const BackboneConfig& cfg, uint64_t seed);

struct TrainSummary {
    int64_t steps_completed = 0;
    bool aborted = false; // non-finite loss stopped the run early
    double final_loss = 0.0;
    double val_mse = 0.0;
    double baseline_mse = 0.0;
    std::string checkpoint_path; // empty when nothing was written
    std::string log_path;
};

struct TrainOutput {
    ModelBundle bundle;
    TrainSummary summary;
};

// Full pretraining run. With write_files=false, nothing touches the
// filesystem (checkpoints and logs stay in memory; used by in-process
// evaluation drivers). The JSON-lines log is deterministic for a fixed
// (config, seed): no timestamps, no machine identity.
TrainOutput pretrain(const TrainConfig& cfg, bool write_files = true,
                     std::string* log_out = nullptr);

// Masked-region reconstruction quality of a model over fixed scenes, against
// the constant mean-color predictor on exactly the same masked pixels.
struct MaskedEval {
    double model_mse = 0.0;
    double baseline_mse = 0.0;
    double mean_confidence = 0.0; // over masked patches
    int64_t masked_patches = 0;
};
MaskedEval eval_masked_mse(Tape& tape, const Backbone& model,
                           const std::vector<Scene>& scenes, const MaskConfig& mask,
                           uint64_t plan_seed, const Eigen::Vector3d& mean_rgb);

// Mean RGB over a deterministic sample of training scenes.
Eigen::Vector3d dataset_mean_color(const StreamConfig& stream, uint64_t seed,
                                   int64_t n_scenes);

// Canonical checkpoint metadata for a training state.
std::string checkpoint_metadata(const TrainConfig& cfg, int64_t step, double val_mse,
                                double baseline_mse);

// Rebuild a model from a checkpoint (architecture from metadata, values from
// the records).
struct LoadedModel {
    ModelBundle bundle;
    std::string metadata;
    int64_t step = 0;
};
LoadedModel load_model(const std::string& checkpoint_path);

void save_model(const std::string& path, const Backbone& model, const std::string& metadata);

} // namespace mvc
