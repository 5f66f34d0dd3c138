#pragma once

#include <vector>

#include "maskasr/tensor.hpp"

namespace maskasr {

// Symbol ids over a head vocabulary, blank excluded. The blank symbol is
// always the LAST column of a probability table: index == vocab_size.
using Transcript = std::vector<int>;

// Merge adjacent repeats, then strip blanks (the CTC collapse rule).
Transcript ctc_collapse(const std::vector<int>& path, int blank);

// Negative log probability of `target` under the alignment set of `logprobs`
// (frames x (vocab+1), blank last). Computed with the log-space forward
// algorithm; the backward pass uses state-occupancy posteriors, so the node is
// differentiable w.r.t. logprobs. Rows are treated as free variables: they do
// not need to be normalized (finite differences perturb single entries).
// Fails with kInfeasibleTarget when the target cannot be aligned into the
// available frames.
TensorPtr ctc_loss(const TensorPtr& logprobs, const Transcript& target);

// Exact enumeration over all (vocab+1)^frames paths; the test oracle for
// ctc_loss. `probs` holds probabilities (not logs). Guarded to frames <= 8 and
// vocab <= 5.
double ctc_brute_force(const TensorPtr& probs, const Transcript& target);

// Per-frame argmax (ties broken toward the lower symbol id), then collapse.
Transcript greedy_decode(const TensorPtr& logprobs);

}  // namespace maskasr
