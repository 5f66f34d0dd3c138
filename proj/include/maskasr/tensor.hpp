#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "maskasr/rng.hpp"

namespace maskasr {

// Dense row-major f64 tensor with taped reverse-mode differentiation.
// Ops build a graph of shared_ptr nodes; backward() walks it once in reverse
// topological order. Slices copy; nothing aliases mutable data.

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor : std::enable_shared_from_this<Tensor> {
    std::vector<int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated lazily on first accumulation

    // Graph bookkeeping. Leaves have no parents and an empty backward_fn.
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;
    const char* op = "";
    bool backward_ran = false;  // set on the node backward() was called on

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }
    double scalar() const;

    void ensure_grad();
    void accumulate_grad(const std::vector<double>& g);
    void zero_grad();
};

// Element count implied by a shape (empty shape = scalar, size 1).
int64_t shape_size(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// NaN/Inf guard at op boundaries. On by default; trainers may disable for
// speed and rely on the per-iteration divergence check instead.
void set_finite_checks(bool on);
bool finite_checks();
void check_finite(const Tensor& t, const char* where);

// While a guard is alive, new nodes record no parents and no backward
// closures: forwards compute identical values but cannot be differentiated.
// Used for evaluation passes.
bool grad_enabled();
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Scoped override of the per-op finite checks. Training loops turn them off
// (they guard the loss value themselves); the previous setting is restored on
// scope exit.
class FiniteCheckGuard {
  public:
    explicit FiniteCheckGuard(bool on);
    ~FiniteCheckGuard();
    FiniteCheckGuard(const FiniteCheckGuard&) = delete;
    FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

  private:
    bool prev_;
};

// Leaf constructors.
TensorPtr tensor(std::vector<double> data, std::vector<int64_t> shape, bool requires_grad = false);
TensorPtr scalar_tensor(double v, bool requires_grad = false);
TensorPtr zeros(std::vector<int64_t> shape, bool requires_grad = false);
TensorPtr ones(std::vector<int64_t> shape, bool requires_grad = false);
TensorPtr full(std::vector<int64_t> shape, double v, bool requires_grad = false);
TensorPtr randn(Rng& rng, std::vector<int64_t> shape, double mean = 0.0, double stddev = 1.0,
                bool requires_grad = false);
TensorPtr rand_uniform(Rng& rng, std::vector<int64_t> shape, double lo, double hi,
                       bool requires_grad = false);

// Detached value copy (no graph, no grad requirement).
TensorPtr detach(const TensorPtr& t);

// Escape hatch for modules that define their own differentiable ops (mask
// assembly, CTC): wraps precomputed forward data plus a custom backward rule.
TensorPtr make_node(std::vector<double> data, std::vector<int64_t> shape,
                    std::vector<TensorPtr> parents, std::function<void(Tensor&)> backward_fn,
                    const char* op);

// --- ops ------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);  // [m,k]x[k,n]
TensorPtr transpose(const TensorPtr& a);                   // 2-D

// Binary elementwise. Shapes must match exactly, or b may be a vector
// broadcast over the last dimension of a (the bias case).
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

TensorPtr scale(const TensorPtr& a, double c);
TensorPtr add_const(const TensorPtr& a, double c);

TensorPtr sigmoid(const TensorPtr& a);
TensorPtr exp(const TensorPtr& a);
TensorPtr log(const TensorPtr& a);  // strictly positive inputs
TensorPtr relu(const TensorPtr& a);
TensorPtr gelu(const TensorPtr& a);  // exact erf form

// Softmax / log-sum-exp over the last axis, max-shifted for stability.
// logsumexp reduces away the last axis (scalar for 1-D input).
TensorPtr softmax(const TensorPtr& a);
TensorPtr log_softmax(const TensorPtr& a);
TensorPtr logsumexp(const TensorPtr& a);

// Normalizes the last axis to zero mean / unit variance, then applies the
// per-feature affine (gain, bias).
TensorPtr layernorm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias, double eps);

TensorPtr sum(const TensorPtr& a);       // scalar
TensorPtr mean_all(const TensorPtr& a);  // scalar

// 2-D column slice/concat; both copy.
TensorPtr slice_cols(const TensorPtr& a, int64_t start, int64_t count);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);

// Inverted dropout; identity when !training or p == 0.
TensorPtr dropout(const TensorPtr& a, double p, Rng& rng, bool training);

// Reverse pass from a scalar loss. Seeds d(loss)/d(loss) = 1, visits the
// recorded graph once, accumulates into every requires_grad node. Calling it
// twice on the same node throws.
void backward(const TensorPtr& loss);

void zero_grads(const std::vector<TensorPtr>& params);

}  // namespace maskasr
