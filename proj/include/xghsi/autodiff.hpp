#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "xghsi/tensor.hpp"

namespace xghsi::ad {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Tensor<T>& value() const { return tape_->value(*this); }
    const Shape& shape() const { return value().shape; }
    const Tensor<T>& grad() const { return tape_->grad(*this); }
    bool requires_grad() const { return tape_->requires_grad(*this); }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Linear record of executed operations. Values are immutable once
/// recorded; gradients are filled by backward() in reverse record order.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value);
    Var<T> parameter(Tensor<T> value);

    /// Records an op output. The op requires a gradient iff any input does;
    /// `backward` is dropped otherwise.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

    const Tensor<T>& value(const Var<T>& v) const { return node(v).value; }
    bool requires_grad(const Var<T>& v) const { return node(v).requires_grad; }

    /// Gradient of the last backward() target w.r.t. v; zeros if v received none.
    const Tensor<T>& grad(const Var<T>& v) const;

    /// Reverse sweep from a scalar loss. Resets gradients from any earlier sweep.
    void backward(const Var<T>& loss);

    std::size_t size() const { return nodes_.size(); }

    // Accessors for backward rules.
    const Tensor<T>& value_at(std::size_t id) const { return nodes_[id].value; }
    const Tensor<T>& grad_at(std::size_t id) const { return nodes_[id].grad; }
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    Tensor<T>& grad_buffer(std::size_t id);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    const Node& node(const Var<T>& v) const;

    std::vector<Node> nodes_;
    mutable Tensor<T> zeros_cache_;
};

// Operations. All reductions run sequentially in index order.

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(const Var<T>& a);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Elementwise product of equal shapes.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
/// a[m x n] + b[n] on every row.
template <typename T>
Var<T> add_row_vector(const Var<T>& a, const Var<T>& b);
/// a[m x n] with column c multiplied by v[c].
template <typename T>
Var<T> mul_columns(const Var<T>& a, const Var<T>& v);
/// a[m x ...] with row r multiplied by w[r].
template <typename T>
Var<T> mul_rows(const Var<T>& a, const Var<T>& w);
/// A[m x n] * v[n] -> [m].
template <typename T>
Var<T> matvec(const Var<T>& a, const Var<T>& v);
/// out[k] = a[index[k]] along the leading dimension.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> index);
/// out[s] = sum of a[k] with segment[k] == s, s < num_segments.
template <typename T>
Var<T> segment_sum(const Var<T>& a, std::span<const std::size_t> segment, std::size_t num_segments);
/// [m x p] and [m x q] -> [m x (p+q)].
template <typename T>
Var<T> concat_columns(const Var<T>& a, const Var<T>& b);
/// Stacks along the leading dimension.
template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T>
Var<T> sigmoid(const Var<T>& a);
/// Elementwise binary entropy H(sigmoid(a)) in nats.
template <typename T>
Var<T> binary_entropy_from_logits(const Var<T>& a);
/// Softmax over the last dimension (the whole vector for rank 1).
template <typename T>
Var<T> softmax(const Var<T>& a);
/// Softmax of rank-1 scores normalized within each segment.
template <typename T>
Var<T> segment_softmax(const Var<T>& scores, std::span<const std::size_t> segment,
                       std::size_t num_segments);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
/// Mean of -log(max(p[r, label[r]], floor)) over the listed rows.
template <typename T>
Var<T> nll_loss(const Var<T>& probs, std::span<const int> labels, std::span<const std::size_t> rows,
                T floor = T(1e-12));

// Plain forward kernels shared with non-taped callers.
template <typename T>
T leaky_relu_value(T x, T slope) {
    return x > T(0) ? x : slope * x;
}

template <typename T>
void softmax_inplace(std::span<T> values);

} // namespace xghsi::ad
