#include "maskasr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "maskasr/common.hpp"

namespace maskasr {

int64_t shape_size(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (const int64_t d : shape) {
        if (d <= 0) fail(ErrorCode::kShape, "non-positive dimension %lld", static_cast<long long>(d));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

double Tensor::scalar() const {
    if (!is_scalar()) fail(ErrorCode::kShape, "scalar() on tensor of shape %s", shape_str(shape).c_str());
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != data.size()) fail(ErrorCode::kShape, "gradient size mismatch in %s", op);
    ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
    backward_ran = false;
}

static std::atomic<bool> g_finite_checks{true};

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks() { return g_finite_checks.load(); }

static thread_local bool g_grad_enabled = true;

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

FiniteCheckGuard::FiniteCheckGuard(bool on) : prev_(finite_checks()) { set_finite_checks(on); }
FiniteCheckGuard::~FiniteCheckGuard() { set_finite_checks(prev_); }

void check_finite(const Tensor& t, const char* where) {
    if (!g_finite_checks.load()) return;
    for (const double v : t.data) {
        if (!std::isfinite(v)) fail(ErrorCode::kData, "non-finite value in %s", where);
    }
}

TensorPtr tensor(std::vector<double> data, std::vector<int64_t> shape, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_size(shape)) {
        fail(ErrorCode::kShape, "data length %zu does not match shape %s", data.size(),
             shape_str(shape).c_str());
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    t->op = "leaf";
    check_finite(*t, "leaf");
    return t;
}

TensorPtr scalar_tensor(double v, bool requires_grad) { return tensor({v}, {1}, requires_grad); }

TensorPtr zeros(std::vector<int64_t> shape, bool requires_grad) {
    const int64_t n = shape_size(shape);
    return tensor(std::vector<double>(static_cast<size_t>(n), 0.0), std::move(shape), requires_grad);
}

TensorPtr ones(std::vector<int64_t> shape, bool requires_grad) {
    const int64_t n = shape_size(shape);
    return tensor(std::vector<double>(static_cast<size_t>(n), 1.0), std::move(shape), requires_grad);
}

TensorPtr full(std::vector<int64_t> shape, double v, bool requires_grad) {
    const int64_t n = shape_size(shape);
    return tensor(std::vector<double>(static_cast<size_t>(n), v), std::move(shape), requires_grad);
}

TensorPtr randn(Rng& rng, std::vector<int64_t> shape, double mean, double stddev, bool requires_grad) {
    const int64_t n = shape_size(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.normal(mean, stddev);
    return tensor(std::move(d), std::move(shape), requires_grad);
}

TensorPtr rand_uniform(Rng& rng, std::vector<int64_t> shape, double lo, double hi, bool requires_grad) {
    const int64_t n = shape_size(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return tensor(std::move(d), std::move(shape), requires_grad);
}

TensorPtr detach(const TensorPtr& t) { return tensor(t->data, t->shape, false); }

static bool any_requires_grad(const std::vector<TensorPtr>& parents) {
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

TensorPtr make_node(std::vector<double> data, std::vector<int64_t> shape,
                    std::vector<TensorPtr> parents, std::function<void(Tensor&)> backward_fn,
                    const char* op) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->op = op;
    if (static_cast<int64_t>(t->data.size()) != shape_size(t->shape)) {
        fail(ErrorCode::kShape, "%s: data length does not match shape", op);
    }
    if (g_grad_enabled && any_requires_grad(parents)) {
        t->requires_grad = true;
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    check_finite(*t, op);
    return t;
}

// --- matmul ---------------------------------------------------------------

static void require_2d(const TensorPtr& a, const char* op) {
    if (a->shape.size() != 2) fail(ErrorCode::kShape, "%s expects a 2-D tensor, got %s", op, shape_str(a->shape).c_str());
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int64_t m = a->shape[0], k = a->shape[1];
    const int64_t k2 = b->shape[0], n = b->shape[1];
    if (k != k2) {
        fail(ErrorCode::kShape, "matmul inner dimensions disagree: %s vs %s",
             shape_str(a->shape).c_str(), shape_str(b->shape).c_str());
    }
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    const double* A = a->data.data();
    const double* B = b->data.data();
    double* C = out.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = B + p * n;
            double* crow = C + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return make_node(std::move(out), {m, n}, {a, b},
                     [a, b, m, k, n](Tensor& out_t) {
                         const double* G = out_t.grad.data();
                         if (a->requires_grad) {
                             a->ensure_grad();
                             const double* B = b->data.data();
                             double* dA = a->grad.data();
                             // dA[i,p] += sum_j G[i,j] * B[p,j]
                             for (int64_t i = 0; i < m; ++i) {
                                 for (int64_t p = 0; p < k; ++p) {
                                     const double* grow = G + i * n;
                                     const double* brow = B + p * n;
                                     double acc = 0.0;
                                     for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                     dA[i * k + p] += acc;
                                 }
                             }
                         }
                         if (b->requires_grad) {
                             b->ensure_grad();
                             const double* A = a->data.data();
                             double* dB = b->grad.data();
                             // dB[p,j] += sum_i A[i,p] * G[i,j]
                             for (int64_t i = 0; i < m; ++i) {
                                 const double* grow = G + i * n;
                                 for (int64_t p = 0; p < k; ++p) {
                                     const double av = A[i * k + p];
                                     if (av == 0.0) continue;
                                     double* brow = dB + p * n;
                                     for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                                 }
                             }
                         }
                     },
                     "matmul");
}

TensorPtr transpose(const TensorPtr& a) {
    require_2d(a, "transpose");
    const int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> out(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a->data[static_cast<size_t>(i * n + j)];
    }
    return make_node(std::move(out), {n, m}, {a},
                     [a, m, n](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t i = 0; i < m; ++i) {
                             for (int64_t j = 0; j < n; ++j) {
                                 a->grad[static_cast<size_t>(i * n + j)] += out_t.grad[static_cast<size_t>(j * m + i)];
                             }
                         }
                     },
                     "transpose");
}

// --- binary elementwise ---------------------------------------------------

enum class BroadcastKind { kSame, kLastDim };

static BroadcastKind binary_broadcast(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape == b->shape) return BroadcastKind::kSame;
    if (b->shape.size() == 1 && !a->shape.empty() && a->shape.back() == b->shape[0]) {
        return BroadcastKind::kLastDim;
    }
    fail(ErrorCode::kShape, "%s shapes not broadcastable: %s vs %s", op, shape_str(a->shape).c_str(),
         shape_str(b->shape).c_str());
}

template <typename Fwd>
static TensorPtr binary_op(const TensorPtr& a, const TensorPtr& b, const char* name, Fwd fwd,
                           double da_coeff, double db_coeff) {
    const BroadcastKind kind = binary_broadcast(a, b, name);
    const int64_t n = a->size();
    const int64_t d = (kind == BroadcastKind::kLastDim) ? b->size() : n;
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double bv = (kind == BroadcastKind::kSame) ? b->data[static_cast<size_t>(i)]
                                                         : b->data[static_cast<size_t>(i % d)];
        out[static_cast<size_t>(i)] = fwd(a->data[static_cast<size_t>(i)], bv);
    }
    return make_node(std::move(out), a->shape, {a, b},
                     [a, b, kind, n, d, da_coeff, db_coeff](Tensor& out_t) {
                         if (a->requires_grad) {
                             a->ensure_grad();
                             for (int64_t i = 0; i < n; ++i) a->grad[static_cast<size_t>(i)] += da_coeff * out_t.grad[static_cast<size_t>(i)];
                         }
                         if (b->requires_grad) {
                             b->ensure_grad();
                             if (kind == BroadcastKind::kSame) {
                                 for (int64_t i = 0; i < n; ++i) b->grad[static_cast<size_t>(i)] += db_coeff * out_t.grad[static_cast<size_t>(i)];
                             } else {
                                 for (int64_t i = 0; i < n; ++i) b->grad[static_cast<size_t>(i % d)] += db_coeff * out_t.grad[static_cast<size_t>(i)];
                             }
                         }
                     },
                     name);
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0);
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0);
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    const BroadcastKind kind = binary_broadcast(a, b, "mul");
    const int64_t n = a->size();
    const int64_t d = (kind == BroadcastKind::kLastDim) ? b->size() : n;
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double bv = (kind == BroadcastKind::kSame) ? b->data[static_cast<size_t>(i)]
                                                         : b->data[static_cast<size_t>(i % d)];
        out[static_cast<size_t>(i)] = a->data[static_cast<size_t>(i)] * bv;
    }
    return make_node(std::move(out), a->shape, {a, b},
                     [a, b, kind, n, d](Tensor& out_t) {
                         if (a->requires_grad) {
                             a->ensure_grad();
                             for (int64_t i = 0; i < n; ++i) {
                                 const double bv = (kind == BroadcastKind::kSame)
                                                       ? b->data[static_cast<size_t>(i)]
                                                       : b->data[static_cast<size_t>(i % d)];
                                 a->grad[static_cast<size_t>(i)] += bv * out_t.grad[static_cast<size_t>(i)];
                             }
                         }
                         if (b->requires_grad) {
                             b->ensure_grad();
                             if (kind == BroadcastKind::kSame) {
                                 for (int64_t i = 0; i < n; ++i) b->grad[static_cast<size_t>(i)] += a->data[static_cast<size_t>(i)] * out_t.grad[static_cast<size_t>(i)];
                             } else {
                                 for (int64_t i = 0; i < n; ++i) b->grad[static_cast<size_t>(i % d)] += a->data[static_cast<size_t>(i)] * out_t.grad[static_cast<size_t>(i)];
                             }
                         }
                     },
                     "mul");
}

// --- unary ----------------------------------------------------------------

template <typename Fwd, typename Dfn>
static TensorPtr unary_op(const TensorPtr& a, const char* name, Fwd fwd, Dfn dfn) {
    const int64_t n = a->size();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(a->data[static_cast<size_t>(i)]);
    return make_node(std::move(out), a->shape, {a},
                     [a, n, dfn](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t i = 0; i < n; ++i) {
                             a->grad[static_cast<size_t>(i)] +=
                                 dfn(a->data[static_cast<size_t>(i)], out_t.data[static_cast<size_t>(i)]) *
                                 out_t.grad[static_cast<size_t>(i)];
                         }
                     },
                     name);
}

TensorPtr scale(const TensorPtr& a, double c) {
    return unary_op(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

TensorPtr add_const(const TensorPtr& a, double c) {
    return unary_op(a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

TensorPtr sigmoid(const TensorPtr& a) {
    return unary_op(a, "sigmoid",
                    [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

TensorPtr exp(const TensorPtr& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

TensorPtr log(const TensorPtr& a) {
    for (const double v : a->data) {
        if (!(v > 0.0)) fail(ErrorCode::kData, "log requires strictly positive inputs, got %g", v);
    }
    return unary_op(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

TensorPtr relu(const TensorPtr& a) {
    return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

TensorPtr gelu(const TensorPtr& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary_op(a, "gelu",
                    [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                    [](double x, double) {
                        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                        return cdf + x * pdf;
                    });
}

// --- reductions over the last axis ---------------------------------------

static void last_axis_dims(const TensorPtr& a, int64_t* rows, int64_t* cols, const char* op) {
    if (a->shape.empty() || a->shape.back() <= 0) fail(ErrorCode::kShape, "%s: empty axis", op);
    *cols = a->shape.back();
    *rows = a->size() / *cols;
}

TensorPtr softmax(const TensorPtr& a) {
    int64_t rows, cols;
    last_axis_dims(a, &rows, &cols, "softmax");
    std::vector<double> out(a->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->data.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = x[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (int64_t j = 0; j < cols; ++j) y[j] /= s;
    }
    return make_node(std::move(out), a->shape, {a},
                     [a, rows, cols](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t r = 0; r < rows; ++r) {
                             const double* y = out_t.data.data() + r * cols;
                             const double* g = out_t.grad.data() + r * cols;
                             double dot = 0.0;
                             for (int64_t j = 0; j < cols; ++j) dot += y[j] * g[j];
                             double* da = a->grad.data() + r * cols;
                             for (int64_t j = 0; j < cols; ++j) da[j] += y[j] * (g[j] - dot);
                         }
                     },
                     "softmax");
}

TensorPtr log_softmax(const TensorPtr& a) {
    int64_t rows, cols;
    last_axis_dims(a, &rows, &cols, "log_softmax");
    std::vector<double> out(a->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->data.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = x[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (int64_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
    }
    return make_node(std::move(out), a->shape, {a},
                     [a, rows, cols](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t r = 0; r < rows; ++r) {
                             const double* y = out_t.data.data() + r * cols;
                             const double* g = out_t.grad.data() + r * cols;
                             double gs = 0.0;
                             for (int64_t j = 0; j < cols; ++j) gs += g[j];
                             double* da = a->grad.data() + r * cols;
                             for (int64_t j = 0; j < cols; ++j) da[j] += g[j] - std::exp(y[j]) * gs;
                         }
                     },
                     "log_softmax");
}

TensorPtr logsumexp(const TensorPtr& a) {
    int64_t rows, cols;
    last_axis_dims(a, &rows, &cols, "logsumexp");
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->data.data() + r * cols;
        double mx = x[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
        out[static_cast<size_t>(r)] = mx + std::log(s);
    }
    std::vector<int64_t> out_shape(a->shape.begin(), a->shape.end() - 1);
    if (out_shape.empty()) out_shape = {1};
    return make_node(std::move(out), out_shape, {a},
                     [a, rows, cols](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t r = 0; r < rows; ++r) {
                             const double lse = out_t.data[static_cast<size_t>(r)];
                             const double g = out_t.grad[static_cast<size_t>(r)];
                             const double* x = a->data.data() + r * cols;
                             double* da = a->grad.data() + r * cols;
                             for (int64_t j = 0; j < cols; ++j) da[j] += g * std::exp(x[j] - lse);
                         }
                     },
                     "logsumexp");
}

TensorPtr layernorm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias, double eps) {
    if (eps <= 0.0) fail(ErrorCode::kInvalidArg, "layernorm eps must be > 0");
    int64_t rows, cols;
    last_axis_dims(x, &rows, &cols, "layernorm");
    if (gain->size() != cols || bias->size() != cols) {
        fail(ErrorCode::kShape, "layernorm gain/bias must have %lld entries", static_cast<long long>(cols));
    }
    std::vector<double> out(x->data.size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    std::vector<double> means(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = x->data.data() + r * cols;
        double mu = 0.0;
        for (int64_t j = 0; j < cols; ++j) mu += xi[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        means[static_cast<size_t>(r)] = mu;
        inv_std[static_cast<size_t>(r)] = is;
        double* y = out.data() + r * cols;
        for (int64_t j = 0; j < cols; ++j) y[j] = gain->data[static_cast<size_t>(j)] * (xi[j] - mu) * is + bias->data[static_cast<size_t>(j)];
    }
    return make_node(std::move(out), x->shape, {x, gain, bias},
                     [x, gain, bias, rows, cols, means, inv_std](Tensor& out_t) {
                         const double inv_n = 1.0 / static_cast<double>(cols);
                         for (int64_t r = 0; r < rows; ++r) {
                             const double mu = means[static_cast<size_t>(r)];
                             const double is = inv_std[static_cast<size_t>(r)];
                             const double* xi = x->data.data() + r * cols;
                             const double* g = out_t.grad.data() + r * cols;
                             if (gain->requires_grad) {
                                 gain->ensure_grad();
                                 for (int64_t j = 0; j < cols; ++j) gain->grad[static_cast<size_t>(j)] += g[j] * (xi[j] - mu) * is;
                             }
                             if (bias->requires_grad) {
                                 bias->ensure_grad();
                                 for (int64_t j = 0; j < cols; ++j) bias->grad[static_cast<size_t>(j)] += g[j];
                             }
                             if (x->requires_grad) {
                                 x->ensure_grad();
                                 // dL/dxhat_j = g_j * gain_j; then the standard two-correction form.
                                 double sum_gh = 0.0, sum_gh_xhat = 0.0;
                                 for (int64_t j = 0; j < cols; ++j) {
                                     const double gh = g[j] * gain->data[static_cast<size_t>(j)];
                                     const double xhat = (xi[j] - mu) * is;
                                     sum_gh += gh;
                                     sum_gh_xhat += gh * xhat;
                                 }
                                 double* dx = x->grad.data() + r * cols;
                                 for (int64_t j = 0; j < cols; ++j) {
                                     const double gh = g[j] * gain->data[static_cast<size_t>(j)];
                                     const double xhat = (xi[j] - mu) * is;
                                     dx[j] += is * (gh - inv_n * sum_gh - inv_n * xhat * sum_gh_xhat);
                                 }
                             }
                         }
                     },
                     "layernorm");
}

TensorPtr sum(const TensorPtr& a) {
    double s = 0.0;
    for (const double v : a->data) s += v;
    return make_node({s}, {1}, {a},
                     [a](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         const double g = out_t.grad[0];
                         for (auto& gv : a->grad) gv += g;
                     },
                     "sum");
}

TensorPtr mean_all(const TensorPtr& a) {
    const double inv_n = 1.0 / static_cast<double>(a->size());
    double s = 0.0;
    for (const double v : a->data) s += v;
    return make_node({s * inv_n}, {1}, {a},
                     [a, inv_n](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         const double g = out_t.grad[0] * inv_n;
                         for (auto& gv : a->grad) gv += g;
                     },
                     "mean");
}

TensorPtr slice_cols(const TensorPtr& a, int64_t start, int64_t count) {
    require_2d(a, "slice_cols");
    const int64_t m = a->shape[0], n = a->shape[1];
    if (start < 0 || count <= 0 || start + count > n) {
        fail(ErrorCode::kShape, "slice_cols [%lld,%lld) out of range for %lld columns",
             static_cast<long long>(start), static_cast<long long>(start + count), static_cast<long long>(n));
    }
    std::vector<double> out(static_cast<size_t>(m * count));
    for (int64_t i = 0; i < m; ++i) {
        std::memcpy(out.data() + i * count, a->data.data() + i * n + start,
                    static_cast<size_t>(count) * sizeof(double));
    }
    return make_node(std::move(out), {m, count}, {a},
                     [a, start, count, m, n](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t i = 0; i < m; ++i) {
                             for (int64_t j = 0; j < count; ++j) {
                                 a->grad[static_cast<size_t>(i * n + start + j)] += out_t.grad[static_cast<size_t>(i * count + j)];
                             }
                         }
                     },
                     "slice_cols");
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) fail(ErrorCode::kInvalidArg, "concat_cols of nothing");
    const int64_t m = parts[0]->shape.size() == 2 ? parts[0]->shape[0] : -1;
    int64_t total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p->shape[0] != m) fail(ErrorCode::kShape, "concat_cols row mismatch");
        total += p->shape[1];
    }
    std::vector<double> out(static_cast<size_t>(m * total));
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t w = p->shape[1];
        for (int64_t i = 0; i < m; ++i) {
            std::memcpy(out.data() + i * total + off, p->data.data() + i * w,
                        static_cast<size_t>(w) * sizeof(double));
        }
        off += w;
    }
    std::vector<TensorPtr> parents = parts;
    return make_node(std::move(out), {m, total}, std::move(parents),
                     [parts, m, total](Tensor& out_t) {
                         int64_t off = 0;
                         for (const auto& p : parts) {
                             const int64_t w = p->shape[1];
                             if (p->requires_grad) {
                                 p->ensure_grad();
                                 for (int64_t i = 0; i < m; ++i) {
                                     for (int64_t j = 0; j < w; ++j) {
                                         p->grad[static_cast<size_t>(i * w + j)] += out_t.grad[static_cast<size_t>(i * total + off + j)];
                                     }
                                 }
                             }
                             off += w;
                         }
                     },
                     "concat_cols");
}

TensorPtr dropout(const TensorPtr& a, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) fail(ErrorCode::kInvalidArg, "dropout rate must be in [0,1)");
    if (!training || p == 0.0) return a;
    const int64_t n = a->size();
    std::vector<double> keep(static_cast<size_t>(n));
    const double inv_keep = 1.0 / (1.0 - p);
    for (auto& k : keep) k = (rng.uniform() >= p) ? inv_keep : 0.0;
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = a->data[static_cast<size_t>(i)] * keep[static_cast<size_t>(i)];
    return make_node(std::move(out), a->shape, {a},
                     [a, keep, n](Tensor& out_t) {
                         if (!a->requires_grad) return;
                         a->ensure_grad();
                         for (int64_t i = 0; i < n; ++i) a->grad[static_cast<size_t>(i)] += keep[static_cast<size_t>(i)] * out_t.grad[static_cast<size_t>(i)];
                     },
                     "dropout");
}

// --- backward -------------------------------------------------------------

void backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        fail(ErrorCode::kShape, "backward expects a scalar loss, got shape %s", shape_str(loss->shape).c_str());
    }
    if (!loss->requires_grad) {
        fail(ErrorCode::kState, "backward on a tensor with no recorded graph");
    }
    if (loss->backward_ran) {
        fail(ErrorCode::kState, "backward called twice on the same graph without reset");
    }
    loss->backward_ran = true;

    // Iterative post-order DFS to get a topological order.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    struct Frame {
        Tensor* node;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.get(), 0});
    visited.insert(loss.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            Tensor* child = f.node->parents[f.next_child++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

void zero_grads(const std::vector<TensorPtr>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace maskasr
