#include "mvc/correspond.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

namespace {

// Seed pixel -> patch index, with bounds checking against the image.
int64_t seed_patch_index(const Eigen::Vector2d& seed, const PatchGrid& grid, int64_t i) {
    const double u = seed.x(), v = seed.y();
    if (u < 0.0 || v < 0.0 || u >= static_cast<double>(grid.image_w) ||
        v >= static_cast<double>(grid.image_h))
        throw DomainError("seed " + std::to_string(i) + " at (" + std::to_string(u) + ", " +
                          std::to_string(v) + ") lies outside the image");
    const int64_t row = static_cast<int64_t>(v) / grid.patch_size;
    const int64_t col = static_cast<int64_t>(u) / grid.patch_size;
    return row * grid.grid_w() + col;
}

} // namespace

std::vector<std::vector<TrackPoint>> attention_tracks(Tape& tape, const Backbone& model,
                                                      const std::vector<Image>& views,
                                                      const std::vector<Eigen::Vector2d>& seeds,
                                                      const TrackConfig& cfg) {
    if (views.empty()) throw DomainError("attention_tracks: no views");
    if (cfg.temperature <= 0.0)
        throw DomainError("attention_tracks: temperature must be positive, got " +
                          std::to_string(cfg.temperature));

    const PatchGrid grid(views[0].h, views[0].w, model.cfg.patch_size);
    const int64_t V = static_cast<int64_t>(views.size());
    const int64_t N = grid.count();

    NoGradGuard guard(tape);
    ForwardOptions opts;
    opts.record_attention = true;
    const ForwardResult res =
        backbone_forward(model, views, empty_mask_plan(V, grid), opts);

    const AttentionMaps& att = res.attention;
    if (att.maps.empty()) throw StateError("attention_tracks: no global blocks recorded");
    size_t map_idx = att.maps.size() - 1;
    if (cfg.attention_block >= 0) {
        bool found = false;
        for (size_t i = 0; i < att.block_indices.size(); ++i) {
            if (att.block_indices[i] == cfg.attention_block) {
                map_idx = i;
                found = true;
                break;
            }
        }
        if (!found)
            throw ConfigError("attention_tracks: block " +
                              std::to_string(cfg.attention_block) +
                              " is not a recorded global block");
    }
    const std::vector<double>& map = att.maps[map_idx];
    const double floor = cfg.floor_scale / static_cast<double>(N);

    std::vector<std::vector<TrackPoint>> tracks(seeds.size());
    for (size_t si = 0; si < seeds.size(); ++si) {
        const int64_t j0 = seed_patch_index(seeds[si], grid, static_cast<int64_t>(si));
        const double* row = map.data() + static_cast<size_t>(j0) * static_cast<size_t>(V * N);
        std::vector<TrackPoint>& per_view = tracks[si];
        per_view.resize(static_cast<size_t>(V));
        for (int64_t v = 0; v < V; ++v) {
            const double* w = row + v * N;
            double sum = 0.0, wmax = 0.0;
            for (int64_t k = 0; k < N; ++k) {
                sum += w[k];
                wmax = std::max(wmax, w[k]);
            }
            TrackPoint& tp = per_view[static_cast<size_t>(v)];
            if (sum <= 0.0) {
                // No mass reached this view at all; leave the point at the
                // grid centroid and mark it invisible.
                tp.u = (grid.center_u(0) + grid.center_u(N - 1)) / 2.0;
                tp.v = (grid.center_v(0) + grid.center_v(N - 1)) / 2.0;
                tp.visible = false;
                continue;
            }
            tp.visible = (wmax / sum) >= floor;
            // Sharpen relative to the row max so extreme exponents cannot
            // underflow every entry at once.
            const double inv_tau = 1.0 / cfg.temperature;
            double zsum = 0.0, eu = 0.0, ev = 0.0;
            for (int64_t k = 0; k < N; ++k) {
                const double z = std::pow(w[k] / wmax, inv_tau);
                zsum += z;
                eu += z * grid.center_u(k);
                ev += z * grid.center_v(k);
            }
            tp.u = eu / zsum;
            tp.v = ev / zsum;
        }
    }
    return tracks;
}

std::vector<std::vector<TrackPoint>> nn_feature_tracks(const Tensor& features,
                                                       const std::vector<Eigen::Vector2d>& seeds,
                                                       const PatchGrid& grid) {
    const Shape& shape = features.shape();
    if (shape.size() != 3)
        throw DimensionError("nn_feature_tracks: features must be [views, patches, dim]");
    const int64_t V = shape[0], N = shape[1], d = shape[2];
    if (N != grid.count())
        throw DimensionError("nn_feature_tracks: feature rows (" + std::to_string(N) +
                             ") do not match the patch grid (" + std::to_string(grid.count()) +
                             ")");

    const std::vector<double>& x = features.data();
    // L2-normalize every row up front; cosine similarity then reduces to a
    // dot product.
    std::vector<double> unit(x.size());
    for (int64_t r = 0; r < V * N; ++r) {
        double norm2 = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double val = x[static_cast<size_t>(r * d + c)];
            norm2 += val * val;
        }
        if (norm2 <= 0.0)
            throw DomainError("nn_feature_tracks: feature row for view " +
                              std::to_string(r / N) + " patch " + std::to_string(r % N) +
                              " has zero norm");
        const double inv = 1.0 / std::sqrt(norm2);
        for (int64_t c = 0; c < d; ++c)
            unit[static_cast<size_t>(r * d + c)] = x[static_cast<size_t>(r * d + c)] * inv;
    }

    std::vector<std::vector<TrackPoint>> tracks(seeds.size());
    for (size_t si = 0; si < seeds.size(); ++si) {
        const int64_t j0 = seed_patch_index(seeds[si], grid, static_cast<int64_t>(si));
        const double* f0 = unit.data() + static_cast<size_t>(j0) * static_cast<size_t>(d);
        std::vector<TrackPoint>& per_view = tracks[si];
        per_view.resize(static_cast<size_t>(V));
        for (int64_t v = 0; v < V; ++v) {
            int64_t best = 0;
            double best_sim = -2.0;
            for (int64_t k = 0; k < N; ++k) {
                const double* f = unit.data() + static_cast<size_t>((v * N + k) * d);
                double sim = 0.0;
                for (int64_t c = 0; c < d; ++c) sim += f0[c] * f[c];
                if (sim > best_sim) { // strict: ties keep the lowest index
                    best_sim = sim;
                    best = k;
                }
            }
            per_view[static_cast<size_t>(v)] = {grid.center_u(best), grid.center_v(best), true};
        }
    }
    return tracks;
}

PcaResult pca_project(const Tensor& features) {
    const Shape& shape = features.shape();
    if (shape.size() != 3)
        throw DimensionError("pca_project: features must be [views, patches, dim]");
    const int64_t V = shape[0], N = shape[1], d = shape[2];
    const int64_t T = V * N;
    if (T < 3) throw DomainError("pca_project: need at least 3 tokens, got " + std::to_string(T));

    const std::vector<double>& x = features.data();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t c = 0; c < d; ++c) mean[c] += x[static_cast<size_t>(t * d + c)];
    mean /= static_cast<double>(T);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd row(d);
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t c = 0; c < d; ++c) row[c] = x[static_cast<size_t>(t * d + c)] - mean[c];
        cov.noalias() += row * row.transpose();
    }
    cov /= static_cast<double>(T);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
        throw DomainError("pca_project: eigendecomposition failed");
    const Eigen::VectorXd& evals = solver.eigenvalues(); // ascending
    const Eigen::MatrixXd& evecs = solver.eigenvectors();

    PcaResult out;
    out.n_views = V;
    out.patches_per_view = N;
    out.rgb.assign(static_cast<size_t>(T), {0.0, 0.0, 0.0});

    const double tol = 1e-12 * std::max(1.0, evals[d - 1]);
    out.components = 0;
    for (int ch = 0; ch < 3; ++ch) {
        const int64_t ei = d - 1 - ch;
        if (ei < 0 || evals[ei] <= tol) break;
        ++out.components;
    }
    out.rank_deficient = out.components < 3;

    for (int64_t ch = 0; ch < out.components; ++ch) {
        Eigen::VectorXd e = evecs.col(d - 1 - ch);
        // Deterministic sign: the largest-magnitude loading points positive.
        int64_t argmax = 0;
        for (int64_t c = 1; c < d; ++c)
            if (std::fabs(e[c]) > std::fabs(e[argmax])) argmax = c;
        if (e[argmax] < 0.0) e = -e;

        double lo = 0.0, hi = 0.0;
        std::vector<double> proj(static_cast<size_t>(T));
        for (int64_t t = 0; t < T; ++t) {
            double y = 0.0;
            for (int64_t c = 0; c < d; ++c)
                y += (x[static_cast<size_t>(t * d + c)] - mean[c]) * e[c];
            proj[static_cast<size_t>(t)] = y;
            if (t == 0 || y < lo) lo = y;
            if (t == 0 || y > hi) hi = y;
        }
        const double span = hi - lo;
        for (int64_t t = 0; t < T; ++t)
            out.rgb[static_cast<size_t>(t)][static_cast<size_t>(ch)] =
                span > 0.0 ? (proj[static_cast<size_t>(t)] - lo) / span : 0.0;
    }
    return out;
}

} // namespace mvc
