#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvc/image.hpp"
#include "mvc/masking.hpp"
#include "mvc/tensor.hpp"

namespace mvc {

struct BackboneConfig {
    int64_t dim = 128;
    int64_t n_heads = 4;
    int64_t n_blocks = 8; // alternating frame/global, so must be even
    int64_t patch_size = 8;
    int64_t mlp_ratio = 4;
    double rope_base = 100.0;
    double ln_eps = 1e-6;

    void validate() const;
    int64_t head_dim() const { return dim / n_heads; }
    int64_t patch_dim() const { return patch_size * patch_size * 3; }
    // 0-based index of the block whose output serves as the feature map for
    // matching and probing: the ceil(5/6 * n_blocks)-th block.
    int64_t default_feature_block() const;
};

// Ordered name -> tensor registry. Iteration order is creation order, which
// fixes both serialization layout and optimizer update order.
struct ParamSet {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, const Tensor& t);
    const Tensor* find(const std::string& name) const;
    int64_t total_size() const;
    std::vector<Tensor> tensors() const;
};

struct BlockParams {
    Tensor norm1_g, norm1_b;
    Tensor q_w, q_b, k_w, k_b, v_w, v_b;
    Tensor proj_w, proj_b;
    Tensor norm2_g, norm2_b;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

struct Backbone {
    BackboneConfig cfg;
    ParamSet params;

    Tensor patch_embed_w, patch_embed_b;
    Tensor mask_token;
    std::vector<BlockParams> blocks;
    Tensor final_norm_g, final_norm_b;
    Tensor head_w, head_b;

    // Fresh parameters on the given tape; truncated-normal weights (std
    // 0.02, cut at 2 sigma), zero biases, unit norm gains.
    static Backbone init(Tape& tape, const BackboneConfig& cfg, uint64_t seed);
};

// Head-averaged post-softmax attention of the global blocks, recorded on
// request during a forward pass. Each map is (V*N) x (V*N) row-major; row t
// sums to 1.
struct AttentionMaps {
    int64_t tokens = 0;
    std::vector<int> block_indices;
    std::vector<std::vector<double>> maps;
};

struct ForwardOptions {
    bool record_attention = false;
    // Block whose output is exposed as `features`; -1 means the config
    // default.
    int64_t feature_block = -1;
};

struct ForwardResult {
    Tensor pixels;     // [V, N, patch_dim] reconstructed patch pixels
    Tensor confidence; // [V, N], sigmoid output in (0, 1)
    Tensor features;   // [V, N, dim] output of the feature block
    AttentionMaps attention;
};

// Parameters of one alternating-attention block plus the machinery to apply
// it. Exposed separately so a decoder can stack the same blocks.
Tensor aa_block_forward(const BlockParams& bp, const Tensor& x, bool global,
                        const BackboneConfig& cfg,
                        const std::vector<std::array<int, 2>>& patch_coords,
                        std::vector<double>* attention_out);

// Makes [BlockParams] for an auxiliary stack (probe decoder) with its own
// name prefix, registering everything in `params`.
std::vector<BlockParams> init_block_stack(Tape& tape, const BackboneConfig& cfg,
                                          int64_t n_blocks, const std::string& prefix,
                                          ParamSet& params, Rng& rng);

// Patch-center (row, col) coordinates for rotary embeddings, one per patch.
std::vector<std::array<int, 2>> patch_coords(const PatchGrid& grid);

// Full reconstruction forward pass over V views.
ForwardResult backbone_forward(const Backbone& model, const std::vector<Image>& views,
                               const MaskPlan& plan, const ForwardOptions& opts = {});

// Run the trunk only (embed, mask, blocks): returns the feature-block output
// without head projection. Used where only features are needed.
Tensor backbone_features(const Backbone& model, const std::vector<Image>& views,
                         const MaskPlan& plan, int64_t feature_block = -1);

// All-visible plan for inference-style forwards.
MaskPlan empty_mask_plan(int64_t n_views, const PatchGrid& grid);

} // namespace mvc
