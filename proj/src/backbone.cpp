#include "mvc/backbone.hpp"

#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

void BackboneConfig::validate() const {
    if (dim <= 0 || n_heads <= 0 || dim % n_heads != 0)
        throw ConfigError("backbone: dim " + std::to_string(dim) +
                          " must be a positive multiple of n_heads " + std::to_string(n_heads));
    if (head_dim() % 4 != 0)
        throw ConfigError("backbone: head dim " + std::to_string(head_dim()) +
                          " must be divisible by 4 for two-axis rotary embedding");
    if (n_blocks <= 0 || n_blocks % 2 != 0)
        throw ConfigError("backbone: n_blocks " + std::to_string(n_blocks) +
                          " must be positive and even (frame/global alternation)");
    if (patch_size <= 0) throw ConfigError("backbone: patch_size must be positive");
    if (mlp_ratio <= 0) throw ConfigError("backbone: mlp_ratio must be positive");
    if (rope_base <= 0.0) throw ConfigError("backbone: rope_base must be positive");
}

int64_t BackboneConfig::default_feature_block() const {
    // ceil(5/6 * n_blocks) in 1-based counting.
    const int64_t one_based = (5 * n_blocks + 5) / 6;
    return one_based - 1;
}

void ParamSet::add(const std::string& name, const Tensor& t) {
    if (find(name)) throw StateError("duplicate parameter name: " + name);
    items.emplace_back(name, t);
}

const Tensor* ParamSet::find(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return &t;
    return nullptr;
}

int64_t ParamSet::total_size() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
}

std::vector<Tensor> ParamSet::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items.size());
    for (const auto& [n, t] : items) out.push_back(t);
    return out;
}

namespace {

Tensor init_weight(Tape& tape, Shape shape, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (double& x : v) x = rng.trunc_normal(0.02, 2.0);
    return tape.leaf(std::move(shape), std::move(v));
}

BlockParams init_block(Tape& tape, const BackboneConfig& cfg, const std::string& prefix,
                       ParamSet& params, Rng& rng) {
    const int64_t d = cfg.dim;
    const int64_t m = cfg.dim * cfg.mlp_ratio;
    BlockParams bp;
    bp.norm1_g = tape.leaf_full({d}, 1.0);
    bp.norm1_b = tape.leaf_full({d}, 0.0);
    bp.q_w = init_weight(tape, {d, d}, rng);
    bp.q_b = tape.leaf_full({d}, 0.0);
    bp.k_w = init_weight(tape, {d, d}, rng);
    bp.k_b = tape.leaf_full({d}, 0.0);
    bp.v_w = init_weight(tape, {d, d}, rng);
    bp.v_b = tape.leaf_full({d}, 0.0);
    bp.proj_w = init_weight(tape, {d, d}, rng);
    bp.proj_b = tape.leaf_full({d}, 0.0);
    bp.norm2_g = tape.leaf_full({d}, 1.0);
    bp.norm2_b = tape.leaf_full({d}, 0.0);
    bp.fc1_w = init_weight(tape, {d, m}, rng);
    bp.fc1_b = tape.leaf_full({m}, 0.0);
    bp.fc2_w = init_weight(tape, {m, d}, rng);
    bp.fc2_b = tape.leaf_full({d}, 0.0);

    params.add(prefix + "norm1.gain", bp.norm1_g);
    params.add(prefix + "norm1.bias", bp.norm1_b);
    params.add(prefix + "attn.q_weight", bp.q_w);
    params.add(prefix + "attn.q_bias", bp.q_b);
    params.add(prefix + "attn.k_weight", bp.k_w);
    params.add(prefix + "attn.k_bias", bp.k_b);
    params.add(prefix + "attn.v_weight", bp.v_w);
    params.add(prefix + "attn.v_bias", bp.v_b);
    params.add(prefix + "attn.proj_weight", bp.proj_w);
    params.add(prefix + "attn.proj_bias", bp.proj_b);
    params.add(prefix + "norm2.gain", bp.norm2_g);
    params.add(prefix + "norm2.bias", bp.norm2_b);
    params.add(prefix + "mlp.fc1_weight", bp.fc1_w);
    params.add(prefix + "mlp.fc1_bias", bp.fc1_b);
    params.add(prefix + "mlp.fc2_weight", bp.fc2_w);
    params.add(prefix + "mlp.fc2_bias", bp.fc2_b);
    return bp;
}

} // namespace

std::vector<BlockParams> init_block_stack(Tape& tape, const BackboneConfig& cfg,
                                          int64_t n_blocks, const std::string& prefix,
                                          ParamSet& params, Rng& rng) {
    std::vector<BlockParams> blocks;
    blocks.reserve(static_cast<size_t>(n_blocks));
    for (int64_t i = 0; i < n_blocks; ++i)
        blocks.push_back(init_block(tape, cfg, prefix + std::to_string(i) + ".", params, rng));
    return blocks;
}

Backbone Backbone::init(Tape& tape, const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Backbone b;
    b.cfg = cfg;

    b.patch_embed_w = init_weight(tape, {cfg.patch_dim(), cfg.dim}, rng);
    b.patch_embed_b = tape.leaf_full({cfg.dim}, 0.0);
    {
        std::vector<double> v(static_cast<size_t>(cfg.dim));
        for (double& x : v) x = rng.trunc_normal(0.02, 2.0);
        b.mask_token = tape.leaf({cfg.dim}, std::move(v));
    }
    b.params.add("patch_embed.weight", b.patch_embed_w);
    b.params.add("patch_embed.bias", b.patch_embed_b);
    b.params.add("mask_token", b.mask_token);

    b.blocks = init_block_stack(tape, cfg, cfg.n_blocks, "blocks.", b.params, rng);

    b.final_norm_g = tape.leaf_full({cfg.dim}, 1.0);
    b.final_norm_b = tape.leaf_full({cfg.dim}, 0.0);
    b.head_w = init_weight(tape, {cfg.dim, cfg.patch_dim() + 1}, rng);
    b.head_b = tape.leaf_full({cfg.patch_dim() + 1}, 0.0);
    b.params.add("final_norm.gain", b.final_norm_g);
    b.params.add("final_norm.bias", b.final_norm_b);
    b.params.add("head.weight", b.head_w);
    b.params.add("head.bias", b.head_b);
    return b;
}

std::vector<std::array<int, 2>> patch_coords(const PatchGrid& grid) {
    std::vector<std::array<int, 2>> coords(static_cast<size_t>(grid.count()));
    for (int64_t j = 0; j < grid.count(); ++j)
        coords[static_cast<size_t>(j)] = {static_cast<int>(grid.row_of(j)),
                                          static_cast<int>(grid.col_of(j))};
    return coords;
}

Tensor aa_block_forward(const BlockParams& bp, const Tensor& x, bool global,
                        const BackboneConfig& cfg,
                        const std::vector<std::array<int, 2>>& patch_coords,
                        std::vector<double>* attention_out) {
    if (x.rank() != 3)
        throw DimensionError("aa_block_forward: tokens must be [V,N,d], got " +
                             shape_str(x.shape()));
    const int64_t V = x.shape()[0], N = x.shape()[1], d = x.shape()[2];
    if (d != cfg.dim)
        throw DimensionError("aa_block_forward: token dim " + std::to_string(d) +
                             " does not match config dim " + std::to_string(cfg.dim));
    if (static_cast<int64_t>(patch_coords.size()) != N)
        throw DimensionError("aa_block_forward: coords for " +
                             std::to_string(patch_coords.size()) + " patches, tokens have " +
                             std::to_string(N));

    // Frame blocks attend within each view; global blocks flatten all views
    // into one token sequence. Rotary coordinates carry no view identity, so
    // the global path stays symmetric under view permutation.
    Tensor work = x;
    std::vector<std::array<int, 2>> coords = patch_coords;
    if (global) {
        work = reshape(x, {1, V * N, d});
        coords.resize(static_cast<size_t>(V * N));
        for (int64_t v = 1; v < V; ++v)
            std::copy(patch_coords.begin(), patch_coords.end(),
                      coords.begin() + static_cast<size_t>(v * N));
    }
    const int64_t B = work.shape()[0];
    const int64_t T = work.shape()[1];
    const int64_t H = cfg.n_heads;
    const int64_t hd = cfg.head_dim();

    Tensor xn = layer_norm(work, bp.norm1_g, bp.norm1_b, cfg.ln_eps);
    auto heads = [&](const Tensor& t) {
        return transpose(reshape(t, {B, T, H, hd}), {0, 2, 1, 3}); // [B,H,T,hd]
    };
    Tensor q = heads(add_rowvec(matmul(xn, bp.q_w), bp.q_b));
    Tensor k = heads(add_rowvec(matmul(xn, bp.k_w), bp.k_b));
    Tensor v = heads(add_rowvec(matmul(xn, bp.v_w), bp.v_b));
    q = rope_rotate(q, coords, cfg.rope_base);
    k = rope_rotate(k, coords, cfg.rope_base);
    q = scale(q, 1.0 / std::sqrt(static_cast<double>(hd)));

    Tensor probs = softmax(matmul(q, transpose(k, {0, 1, 3, 2})), -1); // [B,H,T,T]

    if (attention_out) {
        // Head-averaged copy. Only meaningful for global blocks (B == 1);
        // for frame blocks the caller gets per-view maps back to back.
        attention_out->assign(static_cast<size_t>(B * T * T), 0.0);
        const auto& pv = probs.data();
        const double inv_h = 1.0 / static_cast<double>(H);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < H; ++h) {
                const double* src = pv.data() + ((b * H + h) * T) * T;
                double* dst = attention_out->data() + b * T * T;
                for (int64_t i = 0; i < T * T; ++i) dst[i] += src[i] * inv_h;
            }
    }

    Tensor ctx = reshape(transpose(matmul(probs, v), {0, 2, 1, 3}), {B, T, d});
    Tensor attn = add_rowvec(matmul(ctx, bp.proj_w), bp.proj_b);
    Tensor x1 = add(work, attn);

    Tensor xn2 = layer_norm(x1, bp.norm2_g, bp.norm2_b, cfg.ln_eps);
    Tensor h1 = gelu(add_rowvec(matmul(xn2, bp.fc1_w), bp.fc1_b));
    Tensor h2 = add_rowvec(matmul(h1, bp.fc2_w), bp.fc2_b);
    Tensor out = add(x1, h2);

    if (global) out = reshape(out, {V, N, d});
    return out;
}

namespace {

// Embed, mask, and run blocks up to and including `last_block`.
struct TrunkResult {
    Tensor tokens;   // output of last executed block
    Tensor features; // output of the feature block (defined if reached)
    AttentionMaps attention;
};

TrunkResult run_trunk(const Backbone& model, const std::vector<Image>& views,
                      const MaskPlan& plan, int64_t feature_block, bool record_attention,
                      int64_t last_block) {
    const BackboneConfig& cfg = model.cfg;
    cfg.validate();
    const int64_t V = static_cast<int64_t>(views.size());
    if (V < 1) throw DimensionError("backbone forward: need at least one view");
    const int64_t h = views[0].h, w = views[0].w;
    for (const Image& im : views)
        if (im.h != h || im.w != w)
            throw DimensionError("backbone forward: views must share one image size");
    const PatchGrid grid(h, w, cfg.patch_size);
    if (plan.n_views() != V)
        throw DimensionError("backbone forward: plan has " + std::to_string(plan.n_views()) +
                             " views for " + std::to_string(V) + " images");
    if (plan.grid.count() != grid.count() || plan.grid.patch_size != grid.patch_size)
        throw DimensionError("backbone forward: plan grid does not match image grid");
    if (feature_block < 0 || feature_block >= cfg.n_blocks)
        throw ConfigError("backbone forward: feature block " + std::to_string(feature_block) +
                          " out of range for " + std::to_string(cfg.n_blocks) + " blocks");
    const int64_t N = grid.count();

    // [V, N, patch_dim] pixel patches.
    std::vector<double> patch_values;
    patch_values.reserve(static_cast<size_t>(V * N * cfg.patch_dim()));
    for (const Image& im : views) {
        const auto pv = patchify(im, cfg.patch_size).data();
        patch_values.insert(patch_values.end(), pv.begin(), pv.end());
    }
    Tensor patches = Tensor::constant({V, N, cfg.patch_dim()}, std::move(patch_values));

    Tensor tokens = add_rowvec(matmul(patches, model.patch_embed_w), model.patch_embed_b);
    tokens = apply_mask_tokens(tokens, plan.flat(), model.mask_token);

    const auto coords = patch_coords(grid);
    TrunkResult res;
    res.attention.tokens = V * N;
    for (int64_t i = 0; i <= last_block; ++i) {
        const bool global = (i % 2 == 1);
        std::vector<double> att;
        std::vector<double>* att_ptr = (record_attention && global) ? &att : nullptr;
        tokens = aa_block_forward(model.blocks[static_cast<size_t>(i)], tokens, global, cfg,
                                  coords, att_ptr);
        if (att_ptr) {
            res.attention.block_indices.push_back(static_cast<int>(i));
            res.attention.maps.push_back(std::move(att));
        }
        if (i == feature_block) res.features = tokens;
    }
    res.tokens = tokens;
    return res;
}

} // namespace

ForwardResult backbone_forward(const Backbone& model, const std::vector<Image>& views,
                               const MaskPlan& plan, const ForwardOptions& opts) {
    const int64_t feature_block =
        opts.feature_block >= 0 ? opts.feature_block : model.cfg.default_feature_block();
    TrunkResult trunk = run_trunk(model, views, plan, feature_block, opts.record_attention,
                                  model.cfg.n_blocks - 1);

    const int64_t V = trunk.tokens.shape()[0], N = trunk.tokens.shape()[1];
    const int64_t pd = model.cfg.patch_dim();
    Tensor xn = layer_norm(trunk.tokens, model.final_norm_g, model.final_norm_b,
                           model.cfg.ln_eps);
    Tensor out = add_rowvec(matmul(xn, model.head_w), model.head_b); // [V,N,pd+1]

    ForwardResult res;
    res.pixels = slice(out, 2, 0, pd);
    res.confidence = sigmoid(reshape(slice(out, 2, pd, 1), {V, N}));
    res.features = trunk.features;
    res.attention = std::move(trunk.attention);
    return res;
}

Tensor backbone_features(const Backbone& model, const std::vector<Image>& views,
                         const MaskPlan& plan, int64_t feature_block) {
    const int64_t fb =
        feature_block >= 0 ? feature_block : model.cfg.default_feature_block();
    return run_trunk(model, views, plan, fb, false, fb).features;
}

MaskPlan empty_mask_plan(int64_t n_views, const PatchGrid& grid) {
    MaskPlan plan;
    plan.grid = grid;
    plan.views.resize(static_cast<size_t>(n_views));
    for (auto& v : plan.views) {
        v.is_reference = true;
        v.masked.assign(static_cast<size_t>(grid.count()), 0);
        v.masked_count = 0;
    }
    return plan;
}

} // namespace mvc
