#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace smetod {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Storage {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

// Dense row-major f64 tensor. Cheap handle over shared storage; copies alias,
// clone() deep-copies. Rank 0 with one element is a scalar.
class Tensor {
public:
    Tensor() : Tensor(scalar(0.0)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> data);
    static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<double> data);

    const Shape& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(s_->value.size()); }
    std::int64_t dim(int axis) const { return s_->shape.at(static_cast<std::size_t>(axis)); }
    bool is_scalar() const { return s_->shape.empty(); }

    std::span<const double> values() const { return s_->value; }
    std::span<double> mutable_values() { return s_->value; }
    double item() const;
    double at(std::int64_t i) const;
    double at(std::int64_t i, std::int64_t j) const;
    double& ref(std::int64_t i, std::int64_t j);

    bool requires_grad() const { return s_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        s_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !s_->grad.empty(); }
    std::span<const double> grad() const;
    void zero_grad() {
        if (has_grad()) s_->grad.assign(s_->value.size(), 0.0);
    }

    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

    // internal storage handle, used by ops and the tape
    const std::shared_ptr<detail::Storage>& impl() const { return s_; }

private:
    explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}
    std::shared_ptr<detail::Storage> s_;

    friend Tensor wrap_storage(std::shared_ptr<detail::Storage>);
};

// Records ops in execution order, so every node's inputs precede it and one
// reverse sweep propagates all gradients. Construction makes the tape active
// for the current thread; destruction restores the previous one. A tape and
// its tensors belong to a single thread.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // loss must be a scalar produced on this tape. Grads of everything the
    // tape references are reset first, so the result is d(loss)/d(tensor),
    // not an accumulation across calls.
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }

    static Tape* active() noexcept;

    void record(std::vector<std::shared_ptr<detail::Storage>> inputs,
                std::shared_ptr<detail::Storage> output,
                std::function<void()> backward);

private:
    struct Node {
        std::vector<std::shared_ptr<detail::Storage>> inputs;
        std::shared_ptr<detail::Storage> output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    Tape* prev_ = nullptr;
};

// Record a custom differentiable operation on the active tape. Marks `out` as
// requiring grad when any input does; `backward` reads out's grad buffer and
// accumulates into the inputs' buffers.
void record_op(std::initializer_list<const Tensor*> inputs, Tensor& out,
               std::function<void()> backward);

// ---- operations ------------------------------------------------------------
// All ops are differentiable and record themselves on the active tape when one
// exists and any input requires grad. Results on finite inputs are finite.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// m[i,:] + row for every i
Tensor add_rowwise(const Tensor& m, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);

// Softmax along `axis` with max-subtraction. `mask`, when defined, must have
// the shape of x; entries where mask == 0 get weight exactly 0 and receive no
// gradient. A slice with every entry masked is an error.
Tensor softmax(const Tensor& x, int axis, const Tensor* mask = nullptr);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor sum(const Tensor& x);

// Mean negative log-likelihood of `targets` under row-wise log-softmax of
// `logits`; rows whose target equals ignore_id are excluded entirely.
Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> targets, int ignore_id);

// ---- gradient checking -----------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
};

// Compares tape gradients of f() against central finite differences for every
// element of every listed parameter. f must be deterministic and must read the
// parameters through their shared storage. Relative error per element is
// |a - n| / max(1, |a|, |n|).
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<const std::pair<std::string, Tensor>> params,
                           double eps);

} // namespace smetod
