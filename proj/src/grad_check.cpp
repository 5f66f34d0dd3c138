#include "maskasr/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "maskasr/common.hpp"

namespace maskasr {

double relative_error(double analytic, double numeric) {
    const double denom = std::max(1e-6, std::abs(analytic) + std::abs(numeric));
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<TensorPtr()>& loss_fn,
                                  const std::vector<std::pair<std::string, TensorPtr>>& params,
                                  const GradCheckOptions& opts) {
    if (params.empty()) fail(ErrorCode::kInvalidArg, "finite_diff_check needs at least one parameter");
    for (const auto& [name, p] : params) {
        if (!p->requires_grad) {
            fail(ErrorCode::kInvalidArg, "parameter '%s' does not require grad", name.c_str());
        }
    }

    // Analytic pass.
    std::vector<TensorPtr> plist;
    plist.reserve(params.size());
    for (const auto& [name, p] : params) plist.push_back(p);
    zero_grads(plist);
    TensorPtr loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    GradCheckReport report;
    Rng sampler(opts.sample_seed);
    const double h = opts.step;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        const TensorPtr& p = params[pi].second;
        const int64_t n = p->size();

        std::vector<int64_t> indices;
        if (opts.max_entries_per_param > 0 && n > opts.max_entries_per_param) {
            const auto perm = sampler.permutation(n);
            indices.assign(perm.begin(), perm.begin() + opts.max_entries_per_param);
            std::sort(indices.begin(), indices.end());
        } else {
            indices.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
        }

        for (const int64_t idx : indices) {
            const double saved = p->data[static_cast<size_t>(idx)];
            p->data[static_cast<size_t>(idx)] = saved + h;
            const double up = loss_fn()->scalar();
            p->data[static_cast<size_t>(idx)] = saved - h;
            const double down = loss_fn()->scalar();
            p->data[static_cast<size_t>(idx)] = saved;

            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][static_cast<size_t>(idx)];
            const double err = relative_error(a, numeric);
            ++report.entries_checked;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = {name, idx, a, numeric, err};
            }
        }
    }
    return report;
}

}  // namespace maskasr
