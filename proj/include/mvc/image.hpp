#pragma once

#include <cstdint>
#include <vector>

namespace mvc {

// Row-major interleaved RGB, values in [0, 1].
struct Image {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<double> rgb; // h * w * 3

    double& at(int64_t v, int64_t u, int c) { return rgb[(v * w + u) * 3 + c]; }
    double at(int64_t v, int64_t u, int c) const { return rgb[(v * w + u) * 3 + c]; }
};

// Per-pixel depth along the camera optical axis. Values <= 0 mean "no
// surface" and are treated as invalid everywhere.
struct DepthMap {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<double> d; // h * w

    double at(int64_t v, int64_t u) const { return d[v * w + u]; }
    bool valid(int64_t v, int64_t u) const { return d[v * w + u] > 0.0; }
};

} // namespace mvc
