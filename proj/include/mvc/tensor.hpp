#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mvc {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);
std::vector<int64_t> row_major_strides(const Shape& s);

class Tape;
class Tensor;

namespace detail {

struct Storage {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g; // allocated on first gradient contribution
    bool tracked = false;
    Tape* tape = nullptr;
    int64_t node_id = -1; // index of the tape record that produced this value
};

} // namespace detail

// Value handle over shared storage. Copies alias the same buffer, which is
// what lets a parameter registry and a model struct refer to one tensor.
class Tensor {
public:
    Tensor() = default;

    // Untracked constants.
    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    int rank() const;
    bool tracked() const;
    Tape* tape() const;
    int64_t node_id() const;

    const std::vector<double>& data() const;
    // Mutable access to the raw values. Meant for leaves between steps
    // (optimizer updates, checkpoint loads), not for tensors inside a
    // recorded graph.
    std::vector<double>& data_mut();

    bool has_grad() const;
    const std::vector<double>& grad() const;

    // Value of a rank-0 or single-element tensor.
    double item() const;
    double at(const std::vector<int64_t>& index) const;

private:
    std::shared_ptr<detail::Storage> s_;
    friend class Tape;
    friend struct OpCtx;
    explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}
};

// Records every tracked operation in execution order and replays the records
// in reverse on backward(). Gradient accumulation order is fixed by the
// recording order, so repeated runs produce bit-identical gradients.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // A tracked leaf (parameter or input under differentiation).
    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor leaf_full(Shape shape, double value);

    // Backpropagate from a scalar output through all recorded operations.
    // Calling twice without reset() is an error.
    void backward(const Tensor& output);

    // Drop all records and re-arm backward(). Leaf gradients are kept;
    // clear them separately with zero_grad().
    void reset();
    void zero_grad();

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    size_t num_records() const { return records_.size(); }
    size_t num_leaves() const { return leaves_.size(); }
    bool spent() const { return spent_; }

private:
    struct Record {
        const char* op;
        std::function<void()> backprop;
    };
    std::vector<Record> records_;
    std::vector<std::weak_ptr<detail::Storage>> leaves_;
    bool recording_ = true;
    bool spent_ = false;

    friend struct OpCtx;
    void add_record(const char* op, std::function<void()> fn);
};

// Temporarily disable recording on a tape (forward-only evaluation).
class NoGradGuard {
public:
    explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording()) {
        tape_.set_recording(false);
    }
    ~NoGradGuard() { tape_.set_recording(prev_); }

private:
    Tape& tape_;
    bool prev_;
};

// ---- differentiable operations ----
//
// Each op validates shapes, computes the forward value, and (when any input
// is tracked and its tape is recording) registers a backward record. Output
// tensors are tracked iff a record was registered.

// Matrix product with broadcasting over leading batch dimensions only:
// [B..., m, k] x [B..., k, n], where either operand may omit the batch
// dimensions entirely and is then shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Softmax along one axis (negative axes count from the end), with the usual
// max subtraction so large inputs stay finite.
Tensor softmax(const Tensor& x, int axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
// Elementwise x^p for constant p (domain: x > 0 unless p is a non-negative
// integer).
Tensor pow_const(const Tensor& x, double p);

Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
// tanh-approximated GELU with its exact analytic derivative.
Tensor gelu(const Tensor& x);

// Normalization over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
// gain and bias have shape {last_dim}.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Sum of all elements, returned as a rank-0 tensor.
Tensor sum_all(const Tensor& x);
// Sum over one axis; the axis is removed from the shape.
Tensor sum_axis(const Tensor& x, int axis);
// Repeat the input n times along a fresh trailing axis: [...] -> [..., n].
Tensor expand_last(const Tensor& x, int64_t n);
// x + b with b of shape {x.shape.back()} broadcast over all leading axes.
Tensor add_rowvec(const Tensor& x, const Tensor& b);

// Rotary position embedding over the last axis of x ([..., T, head_dim],
// head_dim divisible by 4). Per token t, the first half of the feature
// vector is rotated by angles derived from coords[t][0] and the second half
// from coords[t][1]; pair i within a half uses frequency
// base^(-2i / (head_dim/2)).
Tensor rope_rotate(const Tensor& x, const std::vector<std::array<int, 2>>& coords, double base);

// Replace token vectors at masked positions with mask_token. tokens has
// shape [V, N, d], masked has V*N entries (1 = replace), mask_token {d}.
Tensor apply_mask_tokens(const Tensor& tokens, const std::vector<uint8_t>& masked,
                         const Tensor& mask_token);

} // namespace mvc
