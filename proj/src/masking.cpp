#include "mvc/masking.hpp"

#include <cmath>
#include <deque>

#include "mvc/errors.hpp"

namespace mvc {

int64_t round_half_up(double x) {
    return static_cast<int64_t>(std::floor(x + 0.5));
}

PatchGrid::PatchGrid(int64_t h, int64_t w, int64_t p) : image_h(h), image_w(w), patch_size(p) {
    if (p <= 0) throw DimensionError("PatchGrid: patch size must be positive");
    if (h <= 0 || w <= 0 || h % p != 0 || w % p != 0)
        throw DimensionError("PatchGrid: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " is not divisible by patch size " + std::to_string(p));
}

double PatchGrid::center_u(int64_t j) const {
    return static_cast<double>(col_of(j) * patch_size) +
           static_cast<double>(patch_size - 1) / 2.0;
}

double PatchGrid::center_v(int64_t j) const {
    return static_cast<double>(row_of(j) * patch_size) +
           static_cast<double>(patch_size - 1) / 2.0;
}

const char* to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::random: return "random";
        case MaskStrategy::rectangle: return "rectangle";
        case MaskStrategy::ellipse: return "ellipse";
    }
    return "?";
}

int64_t MaskPlan::total_masked() const {
    int64_t n = 0;
    for (const auto& v : views) n += v.masked_count;
    return n;
}

std::vector<uint8_t> MaskPlan::flat() const {
    std::vector<uint8_t> out;
    out.reserve(static_cast<size_t>(n_views() * grid.count()));
    for (const auto& v : views) out.insert(out.end(), v.masked.begin(), v.masked.end());
    return out;
}

namespace {

ViewMask random_mask(double ratio, const PatchGrid& grid, Rng& rng) {
    const int64_t n = grid.count();
    const int64_t k = round_half_up(ratio * static_cast<double>(n));
    if (k < 0 || k > n)
        throw DomainError("mask ratio " + std::to_string(ratio) + " out of range for " +
                          std::to_string(n) + " patches");
    ViewMask m;
    m.strategy = MaskStrategy::random;
    m.masked.assign(static_cast<size_t>(n), 0);
    for (int64_t j : rng.sample_indices(n, k)) m.masked[static_cast<size_t>(j)] = 1;
    m.masked_count = k;
    return m;
}

bool block_ratio_ok(const MaskConfig& cfg, int64_t count, int64_t n) {
    const double realized = static_cast<double>(count) / static_cast<double>(n);
    return count > 0 && std::fabs(realized - cfg.block_ratio) <= cfg.block_tolerance;
}

bool try_rectangle(const MaskConfig& cfg, const PatchGrid& grid, Rng& rng, ViewMask& out) {
    const int64_t n = grid.count();
    const int64_t gh = grid.grid_h(), gw = grid.grid_w();
    const double target = cfg.block_ratio * static_cast<double>(n);
    const double aspect = rng.log_uniform(1.0 / 3.0, 3.0); // height / width
    int64_t hh = round_half_up(std::sqrt(target * aspect));
    int64_t ww = round_half_up(std::sqrt(target / aspect));
    hh = std::max<int64_t>(1, std::min(hh, gh));
    ww = std::max<int64_t>(1, std::min(ww, gw));
    if (!block_ratio_ok(cfg, hh * ww, n)) return false;
    const int64_t top = rng.randint(gh - hh + 1);
    const int64_t left = rng.randint(gw - ww + 1);
    out.strategy = MaskStrategy::rectangle;
    out.masked.assign(static_cast<size_t>(n), 0);
    for (int64_t r = top; r < top + hh; ++r)
        for (int64_t c = left; c < left + ww; ++c)
            out.masked[static_cast<size_t>(grid.index(r, c))] = 1;
    out.masked_count = hh * ww;
    return true;
}

bool try_ellipse(const MaskConfig& cfg, const PatchGrid& grid, Rng& rng, ViewMask& out) {
    const int64_t n = grid.count();
    const int64_t gh = grid.grid_h(), gw = grid.grid_w();
    const double target = cfg.block_ratio * static_cast<double>(n);
    const double aspect = rng.log_uniform(1.0 / 3.0, 3.0); // vertical / horizontal semi-axis
    const double sa = std::sqrt(target * aspect / M_PI);
    const double sb = std::sqrt(target / (aspect * M_PI));
    // Keep the center inside an inset box so the ellipse overhangs the grid
    // only when it is too large to fit at all. Centers drawn over the full
    // grid clip off so much area that most attempts miss the ratio band.
    auto inset_center = [&rng](double semi, int64_t extent) {
        const double margin = std::min(semi, static_cast<double>(extent) / 2.0);
        return rng.uniform(margin, static_cast<double>(extent) - margin);
    };
    const double cy = inset_center(sa, gh);
    const double cx = inset_center(sb, gw);
    std::vector<uint8_t> cells(static_cast<size_t>(n), 0);
    int64_t count = 0;
    for (int64_t r = 0; r < gh; ++r) {
        const double dy = (static_cast<double>(r) + 0.5 - cy) / sa;
        for (int64_t c = 0; c < gw; ++c) {
            const double dx = (static_cast<double>(c) + 0.5 - cx) / sb;
            if (dy * dy + dx * dx <= 1.0) {
                cells[static_cast<size_t>(grid.index(r, c))] = 1;
                ++count;
            }
        }
    }
    if (!block_ratio_ok(cfg, count, n)) return false;
    out.strategy = MaskStrategy::ellipse;
    out.masked = std::move(cells);
    out.masked_count = count;
    return true;
}

MaskStrategy draw_strategy(const MaskConfig& cfg, Rng& rng) {
    const double total = cfg.mix_random + cfg.mix_rectangle + cfg.mix_ellipse;
    if (cfg.mix_random < 0.0 || cfg.mix_rectangle < 0.0 || cfg.mix_ellipse < 0.0 || total <= 0.0)
        throw ConfigError("strategy mix weights must be non-negative with positive sum");
    const double u = rng.uniform01() * total;
    if (u < cfg.mix_random) return MaskStrategy::random;
    if (u < cfg.mix_random + cfg.mix_rectangle) return MaskStrategy::rectangle;
    return MaskStrategy::ellipse;
}

} // namespace

ViewMask sample_view_mask(const MaskConfig& cfg, const PatchGrid& grid, Rng& rng) {
    const MaskStrategy want = draw_strategy(cfg, rng);
    if (want == MaskStrategy::random) return random_mask(cfg.random_ratio, grid, rng);
    ViewMask m;
    for (int attempt = 0; attempt < cfg.max_block_resamples; ++attempt) {
        const bool ok = want == MaskStrategy::rectangle ? try_rectangle(cfg, grid, rng, m)
                                                        : try_ellipse(cfg, grid, rng, m);
        if (ok) return m;
    }
    // The grid cannot realize the requested block ratio; fall back to the
    // random strategy rather than ship an out-of-band block.
    ViewMask fallback = random_mask(cfg.random_ratio, grid, rng);
    fallback.fell_back = true;
    return fallback;
}

MaskPlan sample_mask_plan(const MaskConfig& cfg, int64_t n_views, const PatchGrid& grid,
                          Rng& rng) {
    if (n_views <= 0) throw ConfigError("sample_mask_plan: need at least one view");
    if (cfg.n_reference < 0 || cfg.n_reference >= n_views)
        throw ConfigError("sample_mask_plan: n_reference=" + std::to_string(cfg.n_reference) +
                          " must lie in [0, n_views=" + std::to_string(n_views) + ")");

    MaskPlan plan;
    plan.grid = grid;
    plan.views.resize(static_cast<size_t>(n_views));

    std::vector<uint8_t> is_ref(static_cast<size_t>(n_views), 0);
    for (int64_t v : rng.sample_indices(n_views, cfg.n_reference))
        is_ref[static_cast<size_t>(v)] = 1;

    for (int64_t v = 0; v < n_views; ++v) {
        if (is_ref[static_cast<size_t>(v)]) {
            ViewMask m;
            m.is_reference = true;
            m.masked.assign(static_cast<size_t>(grid.count()), 0);
            m.masked_count = 0;
            plan.views[static_cast<size_t>(v)] = std::move(m);
        } else {
            plan.views[static_cast<size_t>(v)] = sample_view_mask(cfg, grid, rng);
        }
    }
    return plan;
}

bool single_connected_component(const std::vector<uint8_t>& masked, const PatchGrid& grid) {
    const int64_t gh = grid.grid_h(), gw = grid.grid_w();
    if (static_cast<int64_t>(masked.size()) != gh * gw)
        throw DimensionError("single_connected_component: mask size does not match grid");
    int64_t first = -1, total = 0;
    for (size_t i = 0; i < masked.size(); ++i)
        if (masked[i]) {
            if (first < 0) first = static_cast<int64_t>(i);
            ++total;
        }
    if (total == 0) return false;

    std::vector<uint8_t> seen(masked.size(), 0);
    std::deque<int64_t> queue{first};
    seen[static_cast<size_t>(first)] = 1;
    int64_t reached = 0;
    while (!queue.empty()) {
        const int64_t j = queue.front();
        queue.pop_front();
        ++reached;
        const int64_t r = j / gw, c = j % gw;
        const int64_t nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& nb : nbrs) {
            if (nb[0] < 0 || nb[0] >= gh || nb[1] < 0 || nb[1] >= gw) continue;
            const int64_t k = nb[0] * gw + nb[1];
            if (masked[static_cast<size_t>(k)] && !seen[static_cast<size_t>(k)]) {
                seen[static_cast<size_t>(k)] = 1;
                queue.push_back(k);
            }
        }
    }
    return reached == total;
}

MaskStats mask_statistics(const MaskConfig& cfg, const PatchGrid& grid, int64_t n_samples,
                          uint64_t seed) {
    Rng rng(seed);
    MaskStats stats;
    struct Acc {
        double sum = 0.0, sumsq = 0.0;
        int64_t n = 0;
    } acc[3];
    const double n_patches = static_cast<double>(grid.count());

    for (int64_t i = 0; i < n_samples; ++i) {
        ViewMask m = sample_view_mask(cfg, grid, rng);
        if (m.fell_back) ++stats.block_fallbacks;
        const int si = static_cast<int>(m.strategy);
        const double ratio = static_cast<double>(m.masked_count) / n_patches;
        acc[si].sum += ratio;
        acc[si].sumsq += ratio * ratio;
        acc[si].n += 1;
        if (m.strategy != MaskStrategy::random &&
            !single_connected_component(m.masked, grid))
            (m.strategy == MaskStrategy::rectangle ? stats.rectangle : stats.ellipse)
                .connected_violations++;
    }

    auto finish = [](const Acc& a) {
        StrategyStats s;
        s.samples = a.n;
        if (a.n > 0) {
            s.ratio_mean = a.sum / static_cast<double>(a.n);
            const double var = a.sumsq / static_cast<double>(a.n) - s.ratio_mean * s.ratio_mean;
            s.ratio_std = std::sqrt(std::max(0.0, var));
        }
        return s;
    };
    const auto conn_rect = stats.rectangle.connected_violations;
    const auto conn_ell = stats.ellipse.connected_violations;
    stats.random = finish(acc[static_cast<int>(MaskStrategy::random)]);
    stats.rectangle = finish(acc[static_cast<int>(MaskStrategy::rectangle)]);
    stats.ellipse = finish(acc[static_cast<int>(MaskStrategy::ellipse)]);
    stats.rectangle.connected_violations = conn_rect;
    stats.ellipse.connected_violations = conn_ell;
    return stats;
}

Tensor patchify(const Image& img, int64_t patch_size) {
    const PatchGrid grid(img.h, img.w, patch_size);
    const int64_t n = grid.count();
    const int64_t dim = patch_size * patch_size * 3;
    std::vector<double> out(static_cast<size_t>(n * dim));
    for (int64_t j = 0; j < n; ++j) {
        const int64_t r0 = grid.row_of(j) * patch_size;
        const int64_t c0 = grid.col_of(j) * patch_size;
        double* dst = out.data() + j * dim;
        for (int64_t pr = 0; pr < patch_size; ++pr)
            for (int64_t pc = 0; pc < patch_size; ++pc)
                for (int c = 0; c < 3; ++c)
                    *dst++ = img.at(r0 + pr, c0 + pc, c);
    }
    return Tensor::constant({n, dim}, std::move(out));
}

Image unpatchify(const std::vector<double>& patches, const PatchGrid& grid) {
    const int64_t p = grid.patch_size;
    const int64_t dim = p * p * 3;
    if (static_cast<int64_t>(patches.size()) != grid.count() * dim)
        throw DimensionError("unpatchify: " + std::to_string(patches.size()) +
                             " values do not fill a " + std::to_string(grid.count()) + "x" +
                             std::to_string(dim) + " patch grid");
    Image img;
    img.h = grid.image_h;
    img.w = grid.image_w;
    img.rgb.assign(static_cast<size_t>(img.h * img.w * 3), 0.0);
    for (int64_t j = 0; j < grid.count(); ++j) {
        const int64_t r0 = grid.row_of(j) * p;
        const int64_t c0 = grid.col_of(j) * p;
        const double* src = patches.data() + j * dim;
        for (int64_t pr = 0; pr < p; ++pr)
            for (int64_t pc = 0; pc < p; ++pc)
                for (int c = 0; c < 3; ++c) img.at(r0 + pr, c0 + pc, c) = *src++;
    }
    return img;
}

} // namespace mvc
