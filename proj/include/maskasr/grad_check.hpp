#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maskasr/rng.hpp"
#include "maskasr/tensor.hpp"

namespace maskasr {

// One checked entry: the analytic gradient versus a central finite difference.
struct GradCheckEntry {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t entries_checked = 0;
    GradCheckEntry worst;
    bool passed(double tol) const { return max_rel_err < tol; }
};

struct GradCheckOptions {
    double step = 1e-5;
    // When a parameter has more than max_entries_per_param entries, check a
    // seeded random subset of that size instead of every entry.
    int64_t max_entries_per_param = 0;  // 0 = check everything
    uint64_t sample_seed = 0;
};

// Relative error with an absolute floor so gradients near zero do not blow up
// the ratio: |a - n| / max(1e-6, |a| + |n|).
double relative_error(double analytic, double numeric);

// Runs `loss_fn` (which must rebuild its graph from the current parameter
// values on every call) once for the analytic gradients and twice per probed
// entry for central differences.
GradCheckReport finite_diff_check(const std::function<TensorPtr()>& loss_fn,
                                  const std::vector<std::pair<std::string, TensorPtr>>& params,
                                  const GradCheckOptions& opts = {});

}  // namespace maskasr
