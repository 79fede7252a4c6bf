#pragma once

#include <functional>

#include "mvc/tensor.hpp"

namespace mvc {

struct FdOptions {
    // Base step. Probing starts three decades above it and extrapolates back
    // toward zero step, so this sets the fine end of the ladder.
    double h = 1e-5;
    // Cap on the number of coordinates checked across all parameters; beyond
    // it a seeded uniform subsample is used.
    int64_t max_coords = 256;
    uint64_t seed = 0x9f3a;
};

struct FdReport {
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    // Flat location of the worst coordinate, for diagnostics.
    int worst_param = -1;
    int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compare analytic gradients against central finite differences.
//
// scalar_fn must build a fresh forward graph over the given leaf parameters
// and return a scalar; it is invoked once with recording on (for the
// analytic gradients) and twice per probed coordinate with recording off.
// Relative error per coordinate is |a - n| / (|a| + |n| + 1e-12).
FdReport finite_difference_check(Tape& tape, const std::vector<Tensor>& params,
                                 const std::function<Tensor()>& scalar_fn, FdOptions opt = {});

} // namespace mvc
