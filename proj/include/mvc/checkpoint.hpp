#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvc/backbone.hpp"

namespace mvc {

// One named tensor inside a checkpoint. Payloads are stored as f32, so a
// parameter survives save/load with float precision; a loaded checkpoint
// re-saves byte-identically.
struct CheckpointRecord {
    std::string name;
    std::vector<int64_t> dims;
    std::vector<float> data;

    int64_t size() const;
};

struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;

    // Canonical JSON (sorted keys, no whitespace). Loaded checkpoints keep
    // the stored text verbatim.
    std::string metadata = "{}";
    std::vector<CheckpointRecord> records;

    const CheckpointRecord* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot every parameter in registration order.
Checkpoint checkpoint_from_params(const ParamSet& params, const std::string& metadata_json);

// Write checkpoint values back into matching parameters. Every parameter
// must have a record of the same shape; unknown record names are an error,
// so a checkpoint and a model disagree loudly rather than silently.
void restore_params(const Checkpoint& ck, ParamSet& params);

} // namespace mvc
