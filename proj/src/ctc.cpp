#include "maskasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maskasr/common.hpp"

namespace maskasr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double lse3(double a, double b, double c) { return lse2(lse2(a, b), c); }

// Minimum frame count that can host the target: one frame per symbol plus one
// separating blank between each adjacent repeat.
int64_t min_alignment_frames(const Transcript& target) {
    int64_t n = static_cast<int64_t>(target.size());
    for (size_t i = 1; i < target.size(); ++i) {
        if (target[i] == target[i - 1]) ++n;
    }
    return n;
}

void validate_ctc_inputs(const TensorPtr& table, const Transcript& target, const char* op) {
    if (table->shape.size() != 2) {
        fail(ErrorCode::kShape, "%s expects a frames x (vocab+1) table, got %s", op,
             shape_str(table->shape).c_str());
    }
    const int64_t vocab = table->shape[1] - 1;
    if (vocab < 1) fail(ErrorCode::kShape, "%s needs at least one non-blank symbol", op);
    for (const int id : target) {
        if (id < 0 || id >= vocab) {
            fail(ErrorCode::kInvalidArg, "%s: target id %d outside vocabulary of size %lld", op, id,
                 static_cast<long long>(vocab));
        }
    }
    const int64_t frames = table->shape[0];
    const int64_t needed = min_alignment_frames(target);
    if (frames < needed) {
        fail(ErrorCode::kInfeasibleTarget,
             "target of length %zu needs at least %lld frames but only %lld are available", target.size(),
             static_cast<long long>(needed), static_cast<long long>(frames));
    }
}

}  // namespace

Transcript ctc_collapse(const std::vector<int>& path, int blank) {
    Transcript out;
    int prev = blank;
    for (const int s : path) {
        if (s != prev && s != blank) out.push_back(s);
        prev = s;
    }
    return out;
}

TensorPtr ctc_loss(const TensorPtr& logprobs, const Transcript& target) {
    validate_ctc_inputs(logprobs, target, "ctc_loss");
    const int64_t frames = logprobs->shape[0];
    const int64_t cols = logprobs->shape[1];
    const int blank = static_cast<int>(cols - 1);

    // Extended label sequence: blanks interleaved around each symbol.
    const int64_t n_states = 2 * static_cast<int64_t>(target.size()) + 1;
    std::vector<int> z(static_cast<size_t>(n_states), blank);
    for (size_t i = 0; i < target.size(); ++i) z[2 * i + 1] = target[i];

    const double* lp = logprobs->data.data();
    auto emit = [&](int64_t t, int64_t s) { return lp[t * cols + z[static_cast<size_t>(s)]]; };
    auto can_skip = [&](int64_t s) {
        return s >= 2 && z[static_cast<size_t>(s)] != blank && z[static_cast<size_t>(s)] != z[static_cast<size_t>(s - 2)];
    };

    // Forward variables alpha[t][s] include the emission at frame t.
    std::vector<double> alpha(static_cast<size_t>(frames * n_states), kNegInf);
    alpha[0] = emit(0, 0);
    if (n_states > 1) alpha[1] = emit(0, 1);
    for (int64_t t = 1; t < frames; ++t) {
        for (int64_t s = 0; s < n_states; ++s) {
            double best = alpha[static_cast<size_t>((t - 1) * n_states + s)];
            if (s >= 1) best = lse2(best, alpha[static_cast<size_t>((t - 1) * n_states + s - 1)]);
            if (can_skip(s)) best = lse2(best, alpha[static_cast<size_t>((t - 1) * n_states + s - 2)]);
            if (best != kNegInf) alpha[static_cast<size_t>(t * n_states + s)] = best + emit(t, s);
        }
    }
    double log_z = alpha[static_cast<size_t>((frames - 1) * n_states + n_states - 1)];
    if (n_states > 1) log_z = lse2(log_z, alpha[static_cast<size_t>((frames - 1) * n_states + n_states - 2)]);
    if (log_z == kNegInf) {
        fail(ErrorCode::kData, "ctc_loss: target has zero probability under the given table");
    }

    // Backward variables beta[t][s] cover emissions at frames t+1..end, so
    // alpha + beta is the log-mass of all alignments passing through (t, s).
    std::vector<double> beta(static_cast<size_t>(frames * n_states), kNegInf);
    beta[static_cast<size_t>((frames - 1) * n_states + n_states - 1)] = 0.0;
    if (n_states > 1) beta[static_cast<size_t>((frames - 1) * n_states + n_states - 2)] = 0.0;
    for (int64_t t = frames - 2; t >= 0; --t) {
        for (int64_t s = 0; s < n_states; ++s) {
            double stay = beta[static_cast<size_t>((t + 1) * n_states + s)];
            if (stay != kNegInf) stay += emit(t + 1, s);
            double step = (s + 1 < n_states) ? beta[static_cast<size_t>((t + 1) * n_states + s + 1)] : kNegInf;
            if (step != kNegInf) step += emit(t + 1, s + 1);
            double skip = (s + 2 < n_states && can_skip(s + 2))
                              ? beta[static_cast<size_t>((t + 1) * n_states + s + 2)]
                              : kNegInf;
            if (skip != kNegInf) skip += emit(t + 1, s + 2);
            beta[static_cast<size_t>(t * n_states + s)] = lse3(stay, step, skip);
        }
    }

    // Occupancy posteriors: gamma[t][k] = P(path emits k at frame t | target).
    // The gradient of -log Z w.r.t. logprob[t,k] is -gamma[t][k].
    std::vector<double> gamma(logprobs->data.size(), 0.0);
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t s = 0; s < n_states; ++s) {
            const double a = alpha[static_cast<size_t>(t * n_states + s)];
            const double b = beta[static_cast<size_t>(t * n_states + s)];
            if (a == kNegInf || b == kNegInf) continue;
            gamma[static_cast<size_t>(t * cols + z[static_cast<size_t>(s)])] += std::exp(a + b - log_z);
        }
    }

    return make_node({-log_z}, {1}, {logprobs},
                     [logprobs, gamma](Tensor& out_t) {
                         if (!logprobs->requires_grad) return;
                         logprobs->ensure_grad();
                         const double g = out_t.grad[0];
                         for (size_t i = 0; i < gamma.size(); ++i) logprobs->grad[i] -= g * gamma[i];
                     },
                     "ctc_loss");
}

double ctc_brute_force(const TensorPtr& probs, const Transcript& target) {
    validate_ctc_inputs(probs, target, "ctc_brute_force");
    const int64_t frames = probs->shape[0];
    const int64_t cols = probs->shape[1];
    if (frames > 8 || cols - 1 > 5) {
        fail(ErrorCode::kInvalidArg, "ctc_brute_force size guard: frames <= 8 and vocab <= 5 required");
    }
    const int blank = static_cast<int>(cols - 1);

    std::vector<int> path(static_cast<size_t>(frames), 0);
    double total = 0.0;
    while (true) {
        double p = 1.0;
        for (int64_t t = 0; t < frames; ++t) p *= probs->data[static_cast<size_t>(t * cols + path[static_cast<size_t>(t)])];
        if (ctc_collapse(path, blank) == target) total += p;

        // Odometer increment over (vocab+1)^frames paths.
        int64_t pos = frames - 1;
        while (pos >= 0) {
            if (++path[static_cast<size_t>(pos)] < cols) break;
            path[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    return -std::log(total);
}

Transcript greedy_decode(const TensorPtr& logprobs) {
    if (logprobs->shape.size() != 2) {
        fail(ErrorCode::kShape, "greedy_decode expects a frames x (vocab+1) table");
    }
    const int64_t frames = logprobs->shape[0];
    const int64_t cols = logprobs->shape[1];
    const int blank = static_cast<int>(cols - 1);
    std::vector<int> path(static_cast<size_t>(frames));
    for (int64_t t = 0; t < frames; ++t) {
        const double* row = logprobs->data.data() + t * cols;
        int best = 0;
        for (int64_t j = 1; j < cols; ++j) {
            if (row[j] > row[best]) best = static_cast<int>(j);
        }
        path[static_cast<size_t>(t)] = best;
    }
    return ctc_collapse(path, blank);
}

}  // namespace maskasr
