#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvc/image.hpp"
#include "mvc/rng.hpp"
#include "mvc/tensor.hpp"

namespace mvc {

int64_t round_half_up(double x);

// Partition of an image into non-overlapping square patches. Patch j covers
// rows [row(j)*p, row(j)*p + p) and the analogous columns, with
// j = row * grid_w + col.
struct PatchGrid {
    int64_t image_h = 0;
    int64_t image_w = 0;
    int64_t patch_size = 0;

    PatchGrid() = default;
    PatchGrid(int64_t h, int64_t w, int64_t p);

    int64_t grid_h() const { return image_h / patch_size; }
    int64_t grid_w() const { return image_w / patch_size; }
    int64_t count() const { return grid_h() * grid_w(); }
    int64_t index(int64_t row, int64_t col) const { return row * grid_w() + col; }
    int64_t row_of(int64_t j) const { return j / grid_w(); }
    int64_t col_of(int64_t j) const { return j % grid_w(); }
    // Pixel-center coordinates (u, v) of a patch center, with pixel (0, 0)
    // centered at coordinate (0, 0).
    double center_u(int64_t j) const;
    double center_v(int64_t j) const;
};

enum class MaskStrategy { random, rectangle, ellipse };

const char* to_string(MaskStrategy s);

struct MaskConfig {
    double random_ratio = 0.90;
    double block_ratio = 0.75;
    // Accepted deviation of the realized block ratio from block_ratio.
    double block_tolerance = 0.05;
    int max_block_resamples = 100;
    // Sampling weights for the per-view strategy draw.
    double mix_random = 0.5;
    double mix_rectangle = 0.25;
    double mix_ellipse = 0.25;
    // Views left fully visible.
    int n_reference = 1;
};

struct ViewMask {
    MaskStrategy strategy = MaskStrategy::random; // strategy actually used
    bool is_reference = false;
    bool fell_back = false; // block sampling failed and random was used instead
    std::vector<uint8_t> masked; // one flag per patch
    int64_t masked_count = 0;
};

struct MaskPlan {
    PatchGrid grid;
    std::vector<ViewMask> views;

    int64_t n_views() const { return static_cast<int64_t>(views.size()); }
    int64_t total_masked() const;
    // Concatenated per-view flags, V * N entries.
    std::vector<uint8_t> flat() const;
};

// Sample the mask for a single non-reference view.
ViewMask sample_view_mask(const MaskConfig& cfg, const PatchGrid& grid, Rng& rng);

// Sample a complete plan: choose n_reference distinct reference views, then
// draw an independent strategy and mask per remaining view.
MaskPlan sample_mask_plan(const MaskConfig& cfg, int64_t n_views, const PatchGrid& grid,
                          Rng& rng);

// True when the masked cells form one 4-connected component (and nothing is
// masked outside it). Used for block-mask validation.
bool single_connected_component(const std::vector<uint8_t>& masked, const PatchGrid& grid);

struct StrategyStats {
    int64_t samples = 0;
    double ratio_mean = 0.0;
    double ratio_std = 0.0;
    int64_t connected_violations = 0; // block strategies only
};

struct MaskStats {
    StrategyStats random;
    StrategyStats rectangle;
    StrategyStats ellipse;
    int64_t block_fallbacks = 0; // draws that fell back to random
};

// Draw n_samples single-view masks and aggregate per-strategy statistics.
MaskStats mask_statistics(const MaskConfig& cfg, const PatchGrid& grid, int64_t n_samples,
                          uint64_t seed);

// Image <-> patch-row conversions. Patch rows are [N, p*p*3] with pixels in
// row-major order and channels interleaved.
Tensor patchify(const Image& img, int64_t patch_size);
Image unpatchify(const std::vector<double>& patches, const PatchGrid& grid);

} // namespace mvc
