#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "microclip/common.hpp"

namespace microclip::numerics {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit reals. All training and evaluation runs
// in this precision; it doubles as the reference mode for gradient checks.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor randn(Shape shape, Rng& rng, double std_dev = 1.0);

    const Shape& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool is2d() const { return shape_.size() == 2; }
    int64_t rows() const;
    int64_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;
    double item() const;  // requires size()==1

    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(Shape shape) const;

  private:
    Shape shape_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape. Ops append nodes in topological order; backward walks
// the tape in reverse. Each thread must own its own tape; a Tape is not
// shareable across threads.
// ---------------------------------------------------------------------------

class Tape;

struct Var {
    int32_t id = -1;
    Tape* tape = nullptr;
    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf with gradient tracking (a parameter). The tensor is copied in.
    Var leaf(const Tensor& v, std::string name = "");
    // Leaf without gradient tracking (batch data, frozen inputs).
    Var constant(const Tensor& v);

    // Runs reverse-mode accumulation from a scalar loss. Rejects non-scalar
    // inputs. Gradients of all reachable grad-tracking leaves are populated.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const;
    const std::string& name(Var v) const;

    size_t node_count() const { return nodes_.size(); }

    // Internal: used by the op implementations.
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_alloc = false;
        std::string name;
        std::function<void(Tape&)> backprop;  // empty for leaves
    };
    Var emplace(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop);
    Node& node(Var v);
    Tensor& grad_buffer(Var v);  // allocates zeros on first touch

  private:
    std::vector<Node> nodes_;
};

// ---- forward ops (all pure; shape errors name both shapes) ----
Var matmul(Var a, Var b);              // (m,k)x(k,n)
Var matmul_nt(Var a, Var b);           // (m,k)x(n,k)^T -> (m,n)
Var transpose(Var a);                  // 2-d
Var add(Var a, Var b);                 // same shape
Var add_bias(Var a, Var bias);         // (m,n)+(n)
Var add_rows_tiled(Var a, Var rows, int64_t batch);  // (b*s,n) + (s,n) per sequence
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);
Var mul_scalar_var(Var a, Var s);      // s has size 1
Var gelu(Var a);
Var exp_elem(Var a);
Var clip_max(Var a, double cap);       // min(x, cap); grad 1 where x < cap
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var a);               // max-subtracted
Var log_softmax_rows(Var a);
Var embedding(Var table, const std::vector<int32_t>& ids);  // -> (|ids|, dim)
Var l2_normalize_rows(Var a);
Var sum(Var a);                        // -> scalar
Var mean(Var a);                       // -> scalar
Var gather_rows(Var a, std::vector<int64_t> rows);
Var take_diag(Var a);                  // (n,n) -> (n,1)
// For each sequence, output row 0 is `first` (a single learned row) followed
// by that sequence's `tokens` rows. tokens is (batch*seq, n).
Var prepend_row_per_seq(Var first, Var tokens, int64_t batch, int64_t seq);
// Fused multi-head attention over packed (batch*seq, dim) Q/K/V with
// per-sequence valid lengths (key positions >= len are masked out).
Var attention(Var q, Var k, Var v, int64_t batch, int64_t seq, int64_t heads,
              const std::vector<int32_t>& valid_lens);

// ---- raw kernels (shared with non-tape paths) ----
void matmul_raw(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt_raw(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// ---- optimizer ----

struct ParamSlot {
    std::string name;
    Tensor value;
    bool decay = true;  // false for norm gains/biases and the logit scale
};
using ParamSet = std::vector<ParamSlot>;

int64_t total_param_count(const ParamSet& params);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    double grad_clip_norm = 0.0;  // 0 disables clipping
};

struct AdamWState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t step_count = 0;

    static AdamWState init_like(const ParamSet& params);
};

struct LrSchedule {
    double peak_lr = 5e-4;
    int64_t warmup_steps = 2000;
    int64_t total_steps = 340000;
    double weight_decay = 0.2;

    void validate() const;
};

// Linear ramp on [0, warmup], cosine from peak to exactly zero after.
double lr_at(const LrSchedule& schedule, int64_t step);

// One decoupled-weight-decay Adam update. `step` is 1-based; the decay term
// uses the scheduled learning rate. Throws NumericalError naming the first
// parameter with a non-finite gradient.
void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamWState& state,
                const LrSchedule& schedule, int64_t step, const AdamWConfig& config = {});

// Thread budget for the kernels. Results are invariant to this setting.
void set_num_threads(int n);
int num_threads();

}  // namespace microclip::numerics
