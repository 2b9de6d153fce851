#include "microclip/numerics.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace microclip::numerics {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
int g_threads = 0;  // 0 = OpenMP default
}  // namespace

void set_num_threads(int n) {
    g_threads = n > 0 ? n : 0;
    if (g_threads > 0) omp_set_num_threads(g_threads);
}

int num_threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

static int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.next_normal() * std_dev;
    return t;
}

int64_t Tensor::rows() const {
    if (!is2d()) throw ShapeError("expected 2-d tensor, got " + shape_str(shape_));
    return shape_[0];
}

int64_t Tensor::cols() const {
    if (!is2d()) throw ShapeError("expected 2-d tensor, got " + shape_str(shape_));
    return shape_[1];
}

double& Tensor::at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
double Tensor::at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a scalar, got " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

void matmul_raw(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

static double dot_unrolled(const double* x, const double* y, int64_t k) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
        s0 += x[p] * y[p];
        s1 += x[p + 1] * y[p + 1];
        s2 += x[p + 2] * y[p + 2];
        s3 += x[p + 3] * y[p + 3];
    }
    for (; p < k; ++p) s0 += x[p] * y[p];
    return (s0 + s1) + (s2 + s3);
}

void matmul_nt_raw(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = dot_unrolled(ai, b + j * k, k);
    }
}

// C += A^T * B with A (m,k), B (m,n), C (k,n). Used by matmul backward.
static void matmul_tn_acc_raw(const double* a, const double* b, double* c, int64_t m, int64_t k,
                              int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < k; ++p) {
        double* cp = c + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double aip = a[i * k + p];
            const double* bi = b + i * n;
            for (int64_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

// C += A * B with accumulation.
static void matmul_acc_raw(const double* a, const double* b, double* c, int64_t m, int64_t k,
                           int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C += A * B^T, A (m,k), B (n,k), C (m,n).
static void matmul_nt_acc_raw(const double* a, const double* b, double* c, int64_t m, int64_t k,
                              int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += dot_unrolled(ai, b + j * k, k);
    }
}

// ---------------------------------------------------------------------------
// tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const {
    if (!valid()) throw ShapeError("use of an empty Var");
    return tape->value(*this);
}

Var Tape::emplace(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1), this};
}

Var Tape::leaf(const Tensor& v, std::string name) {
    Var out = emplace(v, true, nullptr);
    nodes_[static_cast<size_t>(out.id)].name = std::move(name);
    return out;
}

Var Tape::constant(const Tensor& v) { return emplace(v, false, nullptr); }

Tape::Node& Tape::node(Var v) {
    if (v.tape != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
        throw ShapeError("Var does not belong to this tape");
    return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return const_cast<Tape*>(this)->node(v).value; }

bool Tape::requires_grad(Var v) const { return const_cast<Tape*>(this)->node(v).requires_grad; }

const std::string& Tape::name(Var v) const { return const_cast<Tape*>(this)->node(v).name; }

const Tensor& Tape::grad(Var v) const {
    Node& n = const_cast<Tape*>(this)->node(v);
    if (!n.grad_alloc)
        const_cast<Tape*>(this)->grad_buffer(v);  // all-zero gradient is valid
    return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.grad_alloc) {
        n.grad = Tensor(n.value.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw ShapeError("backward requires a scalar loss, got " + shape_str(ln.value.shape()));
    grad_buffer(loss).data()[0] = 1.0;
    for (int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.grad_alloc && n.backprop) n.backprop(*this);
    }
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

static void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ShapeError("operands come from different tapes");
}

static bool any_grad(std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (v.tape->requires_grad(v)) return true;
    return false;
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.is2d() || !B.is2d() || A.cols() != B.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
    int64_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C({m, n});
    matmul_raw(A.data(), B.data(), C.data(), m, k, n);
    bool rg = any_grad({a, b});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, b, out, m, k, n](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(a))
                matmul_nt_acc_raw(g.data(), t.value(b).data(), t.grad_buffer(a).data(), m, n, k);
            if (t.requires_grad(b))
                matmul_tn_acc_raw(t.value(a).data(), g.data(), t.grad_buffer(b).data(), m, k, n);
        };
    }
    return out;
}

Var matmul_nt(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.is2d() || !B.is2d() || A.cols() != B.cols())
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
    int64_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor C({m, n});
    matmul_nt_raw(A.data(), B.data(), C.data(), m, k, n);
    bool rg = any_grad({a, b});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, b, out, m, k, n](Tape& t) {
            const Tensor& g = t.grad(out);  // (m,n)
            if (t.requires_grad(a))         // dA += g * B, (m,n)x(n,k)
                matmul_acc_raw(g.data(), t.value(b).data(), t.grad_buffer(a).data(), m, n, k);
            if (t.requires_grad(b))  // dB += g^T * A, (n,m)x(m,k)
                matmul_tn_acc_raw(g.data(), t.value(a).data(), t.grad_buffer(b).data(), m, n, k);
        };
    }
    return out;
}

Var transpose(Var a) {
    const Tensor& A = a.value();
    int64_t m = A.rows(), n = A.cols();
    Tensor C({n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) C.data()[j * m + i] = A.data()[i * n + j];
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, m, n](Tape& t) {
            const Tensor& g = t.grad(out);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t j = 0; j < n; ++j)
                for (int64_t i = 0; i < m; ++i) ga.data()[i * n + j] += g.data()[j * m + i];
        };
    }
    return out;
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B))
        throw ShapeError("add: shape mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = A.data()[i] + B.data()[i];
    bool rg = any_grad({a, b});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& g = t.grad(out);
            for (Var v : {a, b}) {
                if (!t.requires_grad(v)) continue;
                Tensor& gv = t.grad_buffer(v);
                for (int64_t i = 0; i < g.size(); ++i) gv.data()[i] += g.data()[i];
            }
        };
    }
    return out;
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B))
        throw ShapeError("sub: shape mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = A.data()[i] - B.data()[i];
    bool rg = any_grad({a, b});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_buffer(a);
                for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_buffer(b);
                for (int64_t i = 0; i < g.size(); ++i) gb.data()[i] -= g.data()[i];
            }
        };
    }
    return out;
}

Var add_bias(Var a, Var bias) {
    check_same_tape(a, bias);
    const Tensor& A = a.value();
    const Tensor& B = bias.value();
    if (!A.is2d() || B.size() != A.cols())
        throw ShapeError("add_bias: shape mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
    int64_t m = A.rows(), n = A.cols();
    Tensor C({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) C.data()[i * n + j] = A.data()[i * n + j] + B.data()[j];
    bool rg = any_grad({a, bias});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, bias, out, m, n](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_buffer(a);
                for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
            }
            if (t.requires_grad(bias)) {
                Tensor& gb = t.grad_buffer(bias);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) gb.data()[j] += g.data()[i * n + j];
            }
        };
    }
    return out;
}

Var add_rows_tiled(Var a, Var rows, int64_t batch) {
    check_same_tape(a, rows);
    const Tensor& A = a.value();
    const Tensor& R = rows.value();
    if (!A.is2d() || !R.is2d() || A.cols() != R.cols() || A.rows() != batch * R.rows())
        throw ShapeError("add_rows_tiled: shape mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(R.shape()) + " with batch " + std::to_string(batch));
    int64_t s = R.rows(), n = A.cols();
    Tensor C(A.shape());
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < s; ++i)
            for (int64_t j = 0; j < n; ++j)
                C.data()[(b * s + i) * n + j] = A.data()[(b * s + i) * n + j] + R.data()[i * n + j];
    bool rg = any_grad({a, rows});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, rows, out, batch, s, n](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_buffer(a);
                for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
            }
            if (t.requires_grad(rows)) {
                Tensor& gr = t.grad_buffer(rows);
                for (int64_t b = 0; b < batch; ++b)
                    for (int64_t i = 0; i < s; ++i)
                        for (int64_t j = 0; j < n; ++j)
                            gr.data()[i * n + j] += g.data()[(b * s + i) * n + j];
            }
        };
    }
    return out;
}

Var hadamard(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (!A.same_shape(B))
        throw ShapeError("hadamard: shape mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = A.data()[i] * B.data()[i];
    bool rg = any_grad({a, b});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_buffer(a);
                const Tensor& B2 = t.value(b);
                for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * B2.data()[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_buffer(b);
                const Tensor& A2 = t.value(a);
                for (int64_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * A2.data()[i];
            }
        };
    }
    return out;
}

Var scale(Var a, double c) {
    const Tensor& A = a.value();
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = A.data()[i] * c;
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, c](Tape& t) {
            const Tensor& g = t.grad(out);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * c;
        };
    }
    return out;
}

Var mul_scalar_var(Var a, Var s) {
    check_same_tape(a, s);
    const Tensor& A = a.value();
    const Tensor& S = s.value();
    if (S.size() != 1)
        throw ShapeError("mul_scalar_var: scalar operand has shape " + shape_str(S.shape()));
    double sv = S.data()[0];
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = A.data()[i] * sv;
    bool rg = any_grad({a, s});
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, s, out, sv](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_buffer(a);
                for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * sv;
            }
            if (t.requires_grad(s)) {
                const Tensor& A2 = t.value(a);
                double acc = 0.0;
                for (int64_t i = 0; i < g.size(); ++i) acc += g.data()[i] * A2.data()[i];
                t.grad_buffer(s).data()[0] += acc;
            }
        };
    }
    return out;
}

Var gelu(Var a) {
    const Tensor& A = a.value();
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) {
        double x = A.data()[i];
        C.data()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& A2 = t.value(a);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < g.size(); ++i) {
                double x = A2.data()[i];
                double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga.data()[i] += g.data()[i] * (cdf + x * pdf);
            }
        };
    }
    return out;
}

Var exp_elem(Var a) {
    const Tensor& A = a.value();
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = std::exp(A.data()[i]);
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& Y = t.value(out);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * Y.data()[i];
        };
    }
    return out;
}

Var clip_max(Var a, double cap) {
    const Tensor& A = a.value();
    Tensor C(A.shape());
    for (int64_t i = 0; i < A.size(); ++i) C.data()[i] = std::min(A.data()[i], cap);
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, cap](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& A2 = t.value(a);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < g.size(); ++i)
                if (A2.data()[i] < cap) ga.data()[i] += g.data()[i];
        };
    }
    return out;
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    check_same_tape(x, gain);
    check_same_tape(x, bias);
    const Tensor& X = x.value();
    if (!X.is2d() || gain.value().size() != X.cols() || bias.value().size() != X.cols())
        throw ShapeError("layer_norm: shape mismatch " + shape_str(X.shape()) + " vs gain " +
                         shape_str(gain.value().shape()) + " / bias " +
                         shape_str(bias.value().shape()));
    int64_t m = X.rows(), n = X.cols();
    Tensor C({m, n});
    Tensor xhat({m, n});
    Tensor inv_std({m, 1});
    const double* G = gain.value().data();
    const double* B = bias.value().data();
    for (int64_t i = 0; i < m; ++i) {
        const double* xi = X.data() + i * n;
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += xi[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std.data()[i] = is;
        for (int64_t j = 0; j < n; ++j) {
            double xh = (xi[j] - mu) * is;
            xhat.data()[i * n + j] = xh;
            C.data()[i * n + j] = xh * G[j] + B[j];
        }
    }
    bool rg = any_grad({x, gain, bias});
    Var out = x.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        auto xh = std::make_shared<Tensor>(std::move(xhat));
        auto is = std::make_shared<Tensor>(std::move(inv_std));
        out.tape->node(out).backprop = [x, gain, bias, out, xh, is, m, n](Tape& t) {
            const Tensor& g = t.grad(out);
            const double* G = t.value(gain).data();
            if (t.requires_grad(gain)) {
                Tensor& gg = t.grad_buffer(gain);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j)
                        gg.data()[j] += g.data()[i * n + j] * xh->data()[i * n + j];
            }
            if (t.requires_grad(bias)) {
                Tensor& gb = t.grad_buffer(bias);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) gb.data()[j] += g.data()[i * n + j];
            }
            if (t.requires_grad(x)) {
                Tensor& gx = t.grad_buffer(x);
                for (int64_t i = 0; i < m; ++i) {
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        double dxh = g.data()[i * n + j] * G[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh->data()[i * n + j];
                    }
                    double invn = 1.0 / static_cast<double>(n);
                    for (int64_t j = 0; j < n; ++j) {
                        double dxh = g.data()[i * n + j] * G[j];
                        gx.data()[i * n + j] +=
                            is->data()[i] * (dxh - invn * sum_dxhat -
                                             xh->data()[i * n + j] * invn * sum_dxhat_xhat);
                    }
                }
            }
        };
    }
    return out;
}

static void softmax_row(const double* x, double* p, int64_t n) {
    double mx = x[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        p[j] = std::exp(x[j] - mx);
        z += p[j];
    }
    double iz = 1.0 / z;
    for (int64_t j = 0; j < n; ++j) p[j] *= iz;
}

Var softmax_rows(Var a) {
    const Tensor& A = a.value();
    int64_t m = A.rows(), n = A.cols();
    Tensor C({m, n});
    for (int64_t i = 0; i < m; ++i) softmax_row(A.data() + i * n, C.data() + i * n, n);
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, m, n](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& P = t.value(out);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += g.data()[i * n + j] * P.data()[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    ga.data()[i * n + j] += P.data()[i * n + j] * (g.data()[i * n + j] - dot);
            }
        };
    }
    return out;
}

Var log_softmax_rows(Var a) {
    const Tensor& A = a.value();
    int64_t m = A.rows(), n = A.cols();
    Tensor C({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const double* xi = A.data() + i * n;
        double mx = xi[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
        double lz = std::log(z) + mx;
        for (int64_t j = 0; j < n; ++j) C.data()[i * n + j] = xi[j] - lz;
    }
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, m, n](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& L = t.value(out);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < m; ++i) {
                double gsum = 0.0;
                for (int64_t j = 0; j < n; ++j) gsum += g.data()[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    ga.data()[i * n + j] +=
                        g.data()[i * n + j] - std::exp(L.data()[i * n + j]) * gsum;
            }
        };
    }
    return out;
}

Var embedding(Var table, const std::vector<int32_t>& ids) {
    const Tensor& T = table.value();
    int64_t v = T.rows(), d = T.cols();
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= v)
            throw DataError("embedding: id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " outside table of " + std::to_string(v) +
                            " rows");
    int64_t m = static_cast<int64_t>(ids.size());
    Tensor C({m, d});
    for (int64_t i = 0; i < m; ++i)
        std::memcpy(C.data() + i * d, T.data() + static_cast<int64_t>(ids[i]) * d,
                    static_cast<size_t>(d) * sizeof(double));
    bool rg = table.tape->requires_grad(table);
    Var out = table.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [table, out, ids, d, m](Tape& t) {
            const Tensor& g = t.grad(out);
            Tensor& gt = t.grad_buffer(table);
            for (int64_t i = 0; i < m; ++i) {
                double* row = gt.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
                for (int64_t j = 0; j < d; ++j) row[j] += g.data()[i * d + j];
            }
        };
    }
    return out;
}

Var l2_normalize_rows(Var a) {
    const Tensor& A = a.value();
    int64_t m = A.rows(), n = A.cols();
    Tensor C({m, n});
    Tensor norms({m, 1});
    for (int64_t i = 0; i < m; ++i) {
        const double* xi = A.data() + i * n;
        double ss = 0.0;
        for (int64_t j = 0; j < n; ++j) ss += xi[j] * xi[j];
        double r = std::sqrt(ss);
        if (r < 1e-30) r = 1e-30;
        norms.data()[i] = r;
        double ir = 1.0 / r;
        for (int64_t j = 0; j < n; ++j) C.data()[i * n + j] = xi[j] * ir;
    }
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        auto nr = std::make_shared<Tensor>(std::move(norms));
        out.tape->node(out).backprop = [a, out, nr, m, n](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& Y = t.value(out);  // normalized rows
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < m; ++i) {
                double ir = 1.0 / nr->data()[i];
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += g.data()[i * n + j] * Y.data()[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    ga.data()[i * n + j] +=
                        ir * (g.data()[i * n + j] - Y.data()[i * n + j] * dot);
            }
        };
    }
    return out;
}

Var sum(Var a) {
    const Tensor& A = a.value();
    double s = 0.0;
    for (int64_t i = 0; i < A.size(); ++i) s += A.data()[i];
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(Tensor::scalar(s), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out](Tape& t) {
            double g = t.grad(out).data()[0];
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
        };
    }
    return out;
}

Var mean(Var a) {
    const Tensor& A = a.value();
    double s = 0.0;
    for (int64_t i = 0; i < A.size(); ++i) s += A.data()[i];
    double inv = 1.0 / static_cast<double>(A.size());
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(Tensor::scalar(s * inv), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, inv](Tape& t) {
            double g = t.grad(out).data()[0] * inv;
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
        };
    }
    return out;
}

Var gather_rows(Var a, std::vector<int64_t> rows) {
    const Tensor& A = a.value();
    int64_t m = A.rows(), n = A.cols();
    for (int64_t r : rows)
        if (r < 0 || r >= m)
            throw ShapeError("gather_rows: row " + std::to_string(r) + " outside " +
                             shape_str(A.shape()));
    int64_t k = static_cast<int64_t>(rows.size());
    Tensor C({k, n});
    for (int64_t i = 0; i < k; ++i)
        std::memcpy(C.data() + i * n, A.data() + rows[static_cast<size_t>(i)] * n,
                    static_cast<size_t>(n) * sizeof(double));
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, rows = std::move(rows), n](Tape& t) {
            const Tensor& g = t.grad(out);
            Tensor& ga = t.grad_buffer(a);
            for (size_t i = 0; i < rows.size(); ++i) {
                double* dst = ga.data() + rows[i] * n;
                const double* src = g.data() + static_cast<int64_t>(i) * n;
                for (int64_t j = 0; j < n; ++j) dst[j] += src[j];
            }
        };
    }
    return out;
}

Var take_diag(Var a) {
    const Tensor& A = a.value();
    if (A.rows() != A.cols())
        throw ShapeError("take_diag requires a square matrix, got " + shape_str(A.shape()));
    int64_t n = A.rows();
    Tensor C({n, 1});
    for (int64_t i = 0; i < n; ++i) C.data()[i] = A.data()[i * n + i];
    bool rg = a.tape->requires_grad(a);
    Var out = a.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [a, out, n](Tape& t) {
            const Tensor& g = t.grad(out);
            Tensor& ga = t.grad_buffer(a);
            for (int64_t i = 0; i < n; ++i) ga.data()[i * n + i] += g.data()[i];
        };
    }
    return out;
}

Var prepend_row_per_seq(Var first, Var tokens, int64_t batch, int64_t seq) {
    check_same_tape(first, tokens);
    const Tensor& F = first.value();
    const Tensor& T = tokens.value();
    if (!F.is2d() || F.rows() != 1 || F.cols() != T.cols() || T.rows() != batch * seq)
        throw ShapeError("prepend_row_per_seq: shape mismatch " + shape_str(F.shape()) + " vs " +
                         shape_str(T.shape()));
    int64_t n = T.cols(), so = seq + 1;
    Tensor C({batch * so, n});
    for (int64_t b = 0; b < batch; ++b) {
        std::memcpy(C.data() + b * so * n, F.data(), static_cast<size_t>(n) * sizeof(double));
        std::memcpy(C.data() + (b * so + 1) * n, T.data() + b * seq * n,
                    static_cast<size_t>(seq * n) * sizeof(double));
    }
    bool rg = any_grad({first, tokens});
    Var out = first.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [first, tokens, out, batch, seq, n, so](Tape& t) {
            const Tensor& g = t.grad(out);
            if (t.requires_grad(first)) {
                Tensor& gf = t.grad_buffer(first);
                for (int64_t b = 0; b < batch; ++b)
                    for (int64_t j = 0; j < n; ++j) gf.data()[j] += g.data()[b * so * n + j];
            }
            if (t.requires_grad(tokens)) {
                Tensor& gt = t.grad_buffer(tokens);
                for (int64_t b = 0; b < batch; ++b)
                    for (int64_t i = 0; i < seq; ++i)
                        for (int64_t j = 0; j < n; ++j)
                            gt.data()[(b * seq + i) * n + j] += g.data()[(b * so + 1 + i) * n + j];
            }
        };
    }
    return out;
}

Var attention(Var q, Var k, Var v, int64_t batch, int64_t seq, int64_t heads,
              const std::vector<int32_t>& valid_lens) {
    check_same_tape(q, k);
    check_same_tape(q, v);
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    if (!Q.same_shape(K) || !Q.same_shape(V))
        throw ShapeError("attention: Q/K/V shapes differ: " + shape_str(Q.shape()) + ", " +
                         shape_str(K.shape()) + ", " + shape_str(V.shape()));
    int64_t dim = Q.cols();
    if (Q.rows() != batch * seq || dim % heads != 0)
        throw ShapeError("attention: rows " + shape_str(Q.shape()) + " vs batch*seq " +
                         std::to_string(batch * seq) + ", heads " + std::to_string(heads));
    if (static_cast<int64_t>(valid_lens.size()) != batch)
        throw ShapeError("attention: valid_lens size " + std::to_string(valid_lens.size()) +
                         " != batch " + std::to_string(batch));
    for (int32_t l : valid_lens)
        if (l < 1 || l > seq)
            throw ShapeError("attention: valid length " + std::to_string(l) +
                             " outside [1," + std::to_string(seq) + "]");
    int64_t dh = dim / heads;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor C({batch * seq, dim});
    // Attention probabilities, saved for backward: (batch*heads, seq, seq) packed.
    auto probs = std::make_shared<Tensor>(Shape{batch * heads * seq, seq});

#pragma omp parallel for schedule(static)
    for (int64_t bh = 0; bh < batch * heads; ++bh) {
        int64_t b = bh / heads, h = bh % heads;
        int64_t len = valid_lens[static_cast<size_t>(b)];
        int64_t off = h * dh;
        for (int64_t i = 0; i < seq; ++i) {
            const double* qi = Q.data() + (b * seq + i) * dim + off;
            double* prow = probs->data() + (bh * seq + i) * seq;
            double mx = -1e300;
            for (int64_t j = 0; j < len; ++j) {
                const double* kj = K.data() + (b * seq + j) * dim + off;
                double s = dot_unrolled(qi, kj, dh) * inv_sqrt_dh;
                prow[j] = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (int64_t j = 0; j < len; ++j) {
                prow[j] = std::exp(prow[j] - mx);
                z += prow[j];
            }
            double iz = 1.0 / z;
            for (int64_t j = 0; j < len; ++j) prow[j] *= iz;
            for (int64_t j = len; j < seq; ++j) prow[j] = 0.0;
            double* oi = C.data() + (b * seq + i) * dim + off;
            std::fill(oi, oi + dh, 0.0);
            for (int64_t j = 0; j < len; ++j) {
                const double* vj = V.data() + (b * seq + j) * dim + off;
                double p = prow[j];
                for (int64_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
            }
        }
    }

    bool rg = any_grad({q, k, v});
    Var out = q.tape->emplace(std::move(C), rg, nullptr);
    if (rg) {
        out.tape->node(out).backprop = [q, k, v, out, probs, batch, seq, heads, dh, dim,
                                        inv_sqrt_dh, valid_lens](Tape& t) {
            const Tensor& g = t.grad(out);
            const Tensor& Q2 = t.value(q);
            const Tensor& K2 = t.value(k);
            const Tensor& V2 = t.value(v);
            Tensor& gq = t.grad_buffer(q);
            Tensor& gk = t.grad_buffer(k);
            Tensor& gv = t.grad_buffer(v);
            // Parallel over batches: every (b,*) write target is owned by one thread.
#pragma omp parallel
            {
                std::vector<double> ds(static_cast<size_t>(seq));
#pragma omp for schedule(static)
                for (int64_t b = 0; b < batch; ++b) {
                    int64_t len = valid_lens[static_cast<size_t>(b)];
                    for (int64_t h = 0; h < heads; ++h) {
                        int64_t bh = b * heads + h;
                        int64_t off = h * dh;
                        for (int64_t i = 0; i < seq; ++i) {
                            const double* gi = g.data() + (b * seq + i) * dim + off;
                            const double* prow = probs->data() + (bh * seq + i) * seq;
                            // dP and softmax backward
                            double dot = 0.0;
                            for (int64_t j = 0; j < len; ++j) {
                                const double* vj = V2.data() + (b * seq + j) * dim + off;
                                double dp = dot_unrolled(gi, vj, dh);
                                ds[static_cast<size_t>(j)] = dp;
                                dot += dp * prow[j];
                            }
                            for (int64_t j = 0; j < len; ++j)
                                ds[static_cast<size_t>(j)] =
                                    prow[j] * (ds[static_cast<size_t>(j)] - dot) * inv_sqrt_dh;
                            double* gqi = gq.data() + (b * seq + i) * dim + off;
                            const double* qi = Q2.data() + (b * seq + i) * dim + off;
                            for (int64_t j = 0; j < len; ++j) {
                                const double* kj = K2.data() + (b * seq + j) * dim + off;
                                double* gkj = gk.data() + (b * seq + j) * dim + off;
                                double* gvj = gv.data() + (b * seq + j) * dim + off;
                                const double* vj_unused = nullptr;
                                (void)vj_unused;
                                double dsj = ds[static_cast<size_t>(j)];
                                double p = prow[j];
                                for (int64_t c = 0; c < dh; ++c) {
                                    gqi[c] += dsj * kj[c];
                                    gkj[c] += dsj * qi[c];
                                    gvj[c] += p * gi[c];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer and schedule
// ---------------------------------------------------------------------------

int64_t total_param_count(const ParamSet& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

AdamWState AdamWState::init_like(const ParamSet& params) {
    AdamWState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
        s.m.emplace_back(p.value.shape());
        s.v.emplace_back(p.value.shape());
    }
    s.step_count = 0;
    return s;
}

void LrSchedule::validate() const {
    if (warmup_steps <= 0 || total_steps <= 0 || warmup_steps >= total_steps)
        throw ConfigError("schedule requires 0 < warmup_steps < total_steps, got warmup " +
                          std::to_string(warmup_steps) + ", total " + std::to_string(total_steps));
    if (peak_lr <= 0.0) throw ConfigError("peak_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
}

double lr_at(const LrSchedule& schedule, int64_t step) {
    schedule.validate();
    if (step < 0 || step > schedule.total_steps)
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0," +
                          std::to_string(schedule.total_steps) + "]");
    if (step <= schedule.warmup_steps)
        return schedule.peak_lr * static_cast<double>(step) /
               static_cast<double>(schedule.warmup_steps);
    double progress = static_cast<double>(step - schedule.warmup_steps) /
                      static_cast<double>(schedule.total_steps - schedule.warmup_steps);
    return schedule.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamWState& state,
                const LrSchedule& schedule, int64_t step, const AdamWConfig& config) {
    if (step < 1) throw ConfigError("adamw_step: step must be >= 1, got " + std::to_string(step));
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw ShapeError("adamw_step: got " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    if (state.step_count != step - 1)
        throw ConfigError("adamw_step: step " + std::to_string(step) +
                          " does not continue optimizer state at count " +
                          std::to_string(state.step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].value.same_shape(grads[i]))
            throw ShapeError("adamw_step: gradient shape " + shape_str(grads[i].shape()) +
                             " != parameter '" + params[i].name + "' shape " +
                             shape_str(params[i].value.shape()));
        if (!grads[i].all_finite())
            throw NumericalError("non-finite gradient in parameter '" + params[i].name + "'");
    }

    double clip_scale = 1.0;
    if (config.grad_clip_norm > 0.0) {
        double ss = 0.0;
        for (const auto& g : grads)
            for (int64_t i = 0; i < g.size(); ++i) ss += g.data()[i] * g.data()[i];
        double norm = std::sqrt(ss);
        if (norm > config.grad_clip_norm) clip_scale = config.grad_clip_norm / norm;
    }

    double lr = lr_at(schedule, std::min(step, schedule.total_steps));
    double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));

    for (size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].value.data();
        const double* g = grads[i].data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        double wd = params[i].decay ? schedule.weight_decay : 0.0;
        int64_t n = params[i].value.size();
        for (int64_t j = 0; j < n; ++j) {
            double gj = g[j] * clip_scale;
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * (mhat / (std::sqrt(vhat) + config.eps) + wd * p[j]);
        }
    }
    state.step_count = step;
}

}  // namespace microclip::numerics
