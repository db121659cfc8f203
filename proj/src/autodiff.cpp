#include "xghsi/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace xghsi {

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << 'x';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

} // namespace xghsi

namespace xghsi::ad {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
        if (&in.tape() != this) {
            throw ContractError("op input recorded on a different tape");
        }
        n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(const Var<T>& v) const {
    if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
        throw ContractError("variable does not belong to this tape");
    }
    return nodes_[v.id()];
}

template <typename T>
const Tensor<T>& Tape<T>::grad(const Var<T>& v) const {
    const Node& n = node(v);
    if (n.has_grad) {
        return n.grad;
    }
    zeros_cache_ = Tensor<T>::zeros(n.value.shape);
    return zeros_cache_;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor<T>::zeros(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
    const Node& target = node(loss);
    if (target.value.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            shape_string(target.value.shape));
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor<T>{};
    }
    if (!target.requires_grad) {
        return;
    }
    grad_buffer(loss.id()).data[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, i);
        }
    }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Helpers

namespace {

template <typename T>
const Tensor<T>& val(const Var<T>& v) {
    return v.value();
}

template <typename T>
void require_rank2(const Var<T>& v, const char* op) {
    if (v.shape().size() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                             shape_string(v.shape()));
    }
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

template <typename T>
Shape rows_shape(const Tensor<T>& like, std::size_t rows) {
    Shape s = like.shape;
    if (s.empty()) {
        s.push_back(rows);
    } else {
        s[0] = rows;
    }
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const auto& A = val(a);
    const auto& B = val(b);
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    if (B.shape[0] != k) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_string(A.shape) + " and " +
                             shape_string(B.shape));
    }
    Tensor<T> C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = A.data[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                C.data[i * n + j] += aip * B.data[p * n + j];
            }
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(C), {a, b}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        const auto& A = t.value_at(ia);
        const auto& B = t.value_at(ib);
        if (t.needs_grad(ia)) {
            auto& dA = t.grad_buffer(ia);
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += G.data[i * n + j] * B.data[p * n + j];
                    }
                    dA.data[i * k + p] += acc;
                }
            }
        }
        if (t.needs_grad(ib)) {
            auto& dB = t.grad_buffer(ib);
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const T aip = A.data[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) {
                        dB.data[p * n + j] += aip * G.data[i * n + j];
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    require_rank2(a, "transpose");
    const auto& A = val(a);
    const std::size_t m = A.shape[0], n = A.shape[1];
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.data[j * m + i] = A.data[i * n + j];
        }
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, m, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        auto& dA = t.grad_buffer(ia);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                dA.data[i * n + j] += G.data[j * m + i];
            }
        }
    });
}

template <typename T>
Var<T> matvec(const Var<T>& a, const Var<T>& v) {
    require_rank2(a, "matvec");
    const auto& A = val(a);
    const auto& x = val(v);
    const std::size_t m = A.shape[0], n = A.shape[1];
    if (x.shape != Shape{n}) {
        throw DimensionError("matvec: " + shape_string(A.shape) + " times " + shape_string(x.shape));
    }
    Tensor<T> out({m});
    for (std::size_t i = 0; i < m; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            acc += A.data[i * n + j] * x.data[j];
        }
        out.data[i] = acc;
    }
    const std::size_t ia = a.id(), iv = v.id();
    return a.tape().record(std::move(out), {a, v}, [ia, iv, m, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        const auto& A = t.value_at(ia);
        const auto& x = t.value_at(iv);
        if (t.needs_grad(ia)) {
            auto& dA = t.grad_buffer(ia);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    dA.data[i * n + j] += G.data[i] * x.data[j];
                }
            }
        }
        if (t.needs_grad(iv)) {
            auto& dv = t.grad_buffer(iv);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    dv.data[j] += G.data[i] * A.data[i * n + j];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out = val(a);
    const auto& B = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] += B.data[i];
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        for (std::size_t id : {ia, ib}) {
            if (t.needs_grad(id)) {
                auto& d = t.grad_buffer(id);
                for (std::size_t i = 0; i < G.size(); ++i) {
                    d.data[i] += G.data[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out = val(a);
    const auto& B = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] -= B.data[i];
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < G.size(); ++i) {
                d.data[i] += G.data[i];
            }
        }
        if (t.needs_grad(ib)) {
            auto& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < G.size(); ++i) {
                d.data[i] -= G.data[i];
            }
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out = val(a);
    const auto& B = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] *= B.data[i];
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            const auto& B = t.value_at(ib);
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < G.size(); ++i) {
                d.data[i] += G.data[i] * B.data[i];
            }
        }
        if (t.needs_grad(ib)) {
            const auto& A = t.value_at(ia);
            auto& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < G.size(); ++i) {
                d.data[i] += G.data[i] * A.data[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out = val(a);
    for (auto& x : out.data) {
        x *= factor;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, factor](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        auto& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < G.size(); ++i) {
            d.data[i] += G.data[i] * factor;
        }
    });
}

template <typename T>
Var<T> add_row_vector(const Var<T>& a, const Var<T>& b) {
    require_rank2(a, "add_row_vector");
    const auto& A = val(a);
    const auto& B = val(b);
    const std::size_t m = A.shape[0], n = A.shape[1];
    if (B.shape != Shape{n}) {
        throw DimensionError("add_row_vector: " + shape_string(A.shape) + " plus " + shape_string(B.shape));
    }
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.data[i * n + j] += B.data[j];
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < G.size(); ++i) {
                d.data[i] += G.data[i];
            }
        }
        if (t.needs_grad(ib)) {
            auto& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    d.data[j] += G.data[i * n + j];
                }
            }
        }
    });
}

template <typename T>
Var<T> mul_columns(const Var<T>& a, const Var<T>& v) {
    require_rank2(a, "mul_columns");
    const auto& A = val(a);
    const auto& w = val(v);
    const std::size_t m = A.shape[0], n = A.shape[1];
    if (w.shape != Shape{n}) {
        throw DimensionError("mul_columns: " + shape_string(A.shape) + " by " + shape_string(w.shape));
    }
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.data[i * n + j] *= w.data[j];
        }
    }
    const std::size_t ia = a.id(), iv = v.id();
    return a.tape().record(std::move(out), {a, v}, [ia, iv, m, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            const auto& w = t.value_at(iv);
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    d.data[i * n + j] += G.data[i * n + j] * w.data[j];
                }
            }
        }
        if (t.needs_grad(iv)) {
            const auto& A = t.value_at(ia);
            auto& d = t.grad_buffer(iv);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    d.data[j] += G.data[i * n + j] * A.data[i * n + j];
                }
            }
        }
    });
}

template <typename T>
Var<T> mul_rows(const Var<T>& a, const Var<T>& w) {
    const auto& A = val(a);
    const auto& W = val(w);
    const std::size_t m = A.rows(), n = A.cols();
    if (A.rank() == 0 || W.shape != Shape{m}) {
        throw DimensionError("mul_rows: " + shape_string(A.shape) + " by " + shape_string(W.shape));
    }
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.data[i * n + j] *= W.data[i];
        }
    }
    const std::size_t ia = a.id(), iw = w.id();
    return a.tape().record(std::move(out), {a, w}, [ia, iw, m, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            const auto& W = t.value_at(iw);
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    d.data[i * n + j] += G.data[i * n + j] * W.data[i];
                }
            }
        }
        if (t.needs_grad(iw)) {
            const auto& A = t.value_at(ia);
            auto& d = t.grad_buffer(iw);
            for (std::size_t i = 0; i < m; ++i) {
                T acc = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    acc += G.data[i * n + j] * A.data[i * n + j];
                }
                d.data[i] += acc;
            }
        }
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out = val(a);
    for (auto& x : out.data) {
        x = leaky_relu_value(x, slope);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, slope](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        const auto& X = t.value_at(ia);
        auto& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < G.size(); ++i) {
            // subgradient at exactly zero is the negative-side slope
            d.data[i] += G.data[i] * (X.data[i] > T(0) ? T(1) : slope);
        }
    });
}

namespace {

template <typename T>
T sigmoid_value(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// log(1 + exp(x)) without overflow
template <typename T>
T softplus_value(T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = val(a);
    for (auto& x : out.data) {
        x = sigmoid_value(x);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        const auto& S = t.value_at(self);
        auto& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < G.size(); ++i) {
            d.data[i] += G.data[i] * S.data[i] * (T(1) - S.data[i]);
        }
    });
}

template <typename T>
Var<T> binary_entropy_from_logits(const Var<T>& a) {
    // H(s) with s = sigmoid(x):  s*softplus(-x) + (1-s)*softplus(x);  dH/dx = -x s (1-s)
    Tensor<T> out = val(a);
    for (auto& x : out.data) {
        const T s = sigmoid_value(x);
        x = s * softplus_value(-x) + (T(1) - s) * softplus_value(x);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        const auto& X = t.value_at(ia);
        auto& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < G.size(); ++i) {
            const T s = sigmoid_value(X.data[i]);
            d.data[i] += G.data[i] * (-X.data[i] * s * (T(1) - s));
        }
    });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> index) {
    const auto& A = val(a);
    if (A.rank() == 0) {
        throw DimensionError("gather_rows: scalar input");
    }
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out(rows_shape(A, index.size()));
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= m) {
            throw DimensionError("gather_rows: index " + std::to_string(index[k]) + " out of range for " +
                                 shape_string(A.shape));
        }
        std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(index[k] * n), n,
                    out.data.begin() + static_cast<std::ptrdiff_t>(k * n));
    }
    const std::size_t ia = a.id();
    std::vector<std::size_t> idx(index.begin(), index.end());
    return a.tape().record(std::move(out), {a}, [ia, n, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        auto& d = t.grad_buffer(ia);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                d.data[idx[k] * n + j] += G.data[k * n + j];
            }
        }
    });
}

template <typename T>
Var<T> segment_sum(const Var<T>& a, std::span<const std::size_t> segment, std::size_t num_segments) {
    const auto& A = val(a);
    if (A.rank() == 0 || A.rows() != segment.size()) {
        throw DimensionError("segment_sum: " + std::to_string(segment.size()) + " segment ids for shape " +
                             shape_string(A.shape));
    }
    const std::size_t n = A.cols();
    Tensor<T> out(rows_shape(A, num_segments));
    for (std::size_t k = 0; k < segment.size(); ++k) {
        if (segment[k] >= num_segments) {
            throw DimensionError("segment_sum: segment id out of range");
        }
        for (std::size_t j = 0; j < n; ++j) {
            out.data[segment[k] * n + j] += A.data[k * n + j];
        }
    }
    const std::size_t ia = a.id();
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    return a.tape().record(std::move(out), {a}, [ia, n, seg = std::move(seg)](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        auto& d = t.grad_buffer(ia);
        for (std::size_t k = 0; k < seg.size(); ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                d.data[k * n + j] += G.data[seg[k] * n + j];
            }
        }
    });
}

template <typename T>
Var<T> concat_columns(const Var<T>& a, const Var<T>& b) {
    require_rank2(a, "concat_columns");
    require_rank2(b, "concat_columns");
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.shape[0] != B.shape[0]) {
        throw DimensionError("concat_columns: row counts differ for " + shape_string(A.shape) + " and " +
                             shape_string(B.shape));
    }
    const std::size_t m = A.shape[0], p = A.shape[1], q = B.shape[1];
    Tensor<T> out({m, p + q});
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(i * p), p,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * (p + q)));
        std::copy_n(B.data.begin() + static_cast<std::ptrdiff_t>(i * q), q,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * (p + q) + p));
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, p, q](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < p; ++j) {
                    d.data[i * p + j] += G.data[i * (p + q) + j];
                }
            }
        }
        if (t.needs_grad(ib)) {
            auto& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    d.data[i * q + j] += G.data[i * (p + q) + p + j];
                }
            }
        }
    });
}

template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.rank() == 0 || B.rank() != A.rank() || A.cols() != B.cols()) {
        throw DimensionError("concat_rows: incompatible shapes " + shape_string(A.shape) + " and " +
                             shape_string(B.shape));
    }
    Tensor<T> out(rows_shape(A, A.rows() + B.rows()));
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.size()));
    const std::size_t ia = a.id(), ib = b.id(), na = A.size();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, na](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        if (t.needs_grad(ia)) {
            auto& d = t.grad_buffer(ia);
            for (std::size_t i = 0; i < na; ++i) {
                d.data[i] += G.data[i];
            }
        }
        if (t.needs_grad(ib)) {
            auto& d = t.grad_buffer(ib);
            for (std::size_t i = 0; i < d.size(); ++i) {
                d.data[i] += G.data[na + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalizations and reductions

template <typename T>
void softmax_inplace(std::span<T> values) {
    if (values.empty()) {
        return;
    }
    T hi = values[0];
    for (T v : values) {
        hi = std::max(hi, v);
    }
    T total = T(0);
    for (T& v : values) {
        v = std::exp(v - hi);
        total += v;
    }
    for (T& v : values) {
        v /= total;
    }
}

template <typename T>
Var<T> softmax(const Var<T>& a) {
    Tensor<T> out = val(a);
    const std::size_t n = out.rank() <= 1 ? out.size() : out.shape.back();
    const std::size_t m = n == 0 ? 0 : out.size() / n;
    for (std::size_t i = 0; i < m; ++i) {
        softmax_inplace(std::span<T>(out.data.data() + i * n, n));
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, m, n](Tape<T>& t, std::size_t self) {
        const auto& G = t.grad_at(self);
        const auto& Y = t.value_at(self);
        auto& d = t.grad_buffer(ia);
        for (std::size_t i = 0; i < m; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                dot += G.data[i * n + j] * Y.data[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                d.data[i * n + j] += Y.data[i * n + j] * (G.data[i * n + j] - dot);
            }
        }
    });
}

template <typename T>
Var<T> segment_softmax(const Var<T>& scores, std::span<const std::size_t> segment, std::size_t num_segments) {
    const auto& S = val(scores);
    if (S.rank() != 1 || S.size() != segment.size()) {
        throw DimensionError("segment_softmax: " + std::to_string(segment.size()) + " segment ids for shape " +
                             shape_string(S.shape));
    }
    const std::size_t count = S.size();
    std::vector<T> hi(num_segments, -std::numeric_limits<T>::infinity());
    for (std::size_t k = 0; k < count; ++k) {
        if (segment[k] >= num_segments) {
            throw DimensionError("segment_softmax: segment id out of range");
        }
        hi[segment[k]] = std::max(hi[segment[k]], S.data[k]);
    }
    Tensor<T> out(S.shape);
    std::vector<T> total(num_segments, T(0));
    for (std::size_t k = 0; k < count; ++k) {
        out.data[k] = std::exp(S.data[k] - hi[segment[k]]);
        total[segment[k]] += out.data[k];
    }
    for (std::size_t k = 0; k < count; ++k) {
        out.data[k] /= total[segment[k]];
    }
    const std::size_t is = scores.id();
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    return scores.tape().record(
        std::move(out), {scores}, [is, num_segments, seg = std::move(seg)](Tape<T>& t, std::size_t self) {
            const auto& G = t.grad_at(self);
            const auto& Y = t.value_at(self);
            std::vector<T> dot(num_segments, T(0));
            for (std::size_t k = 0; k < seg.size(); ++k) {
                dot[seg[k]] += G.data[k] * Y.data[k];
            }
            auto& d = t.grad_buffer(is);
            for (std::size_t k = 0; k < seg.size(); ++k) {
                d.data[k] += Y.data[k] * (G.data[k] - dot[seg[k]]);
            }
        });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total = T(0);
    for (T x : val(a).data) {
        total += x;
    }
    const std::size_t ia = a.id();
    return a.tape().record(Tensor<T>::scalar(total), {a}, [ia](Tape<T>& t, std::size_t self) {
        const T g = t.grad_at(self).data[0];
        auto& d = t.grad_buffer(ia);
        for (auto& x : d.data) {
            x += g;
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    const std::size_t n = val(a).size();
    if (n == 0) {
        throw DimensionError("mean: empty tensor");
    }
    return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> nll_loss(const Var<T>& probs, std::span<const int> labels, std::span<const std::size_t> rows, T floor) {
    require_rank2(probs, "nll_loss");
    const auto& P = val(probs);
    const std::size_t k = P.shape[1];
    if (rows.empty()) {
        throw ValidationError("no nodes in split");
    }
    if (labels.size() != P.shape[0]) {
        throw DimensionError("nll_loss: " + std::to_string(labels.size()) + " labels for shape " +
                             shape_string(P.shape));
    }
    T total = T(0);
    for (std::size_t r : rows) {
        if (r >= P.shape[0] || labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
            throw ValidationError("nll_loss: invalid row or label");
        }
        total -= std::log(std::max(P.data[r * k + static_cast<std::size_t>(labels[r])], floor));
    }
    const T inv_n = T(1) / static_cast<T>(rows.size());
    const std::size_t ip = probs.id();
    std::vector<std::size_t> targets;
    targets.reserve(rows.size());
    for (std::size_t r : rows) {
        targets.push_back(r * k + static_cast<std::size_t>(labels[r]));
    }
    return probs.tape().record(Tensor<T>::scalar(total * inv_n), {probs},
                               [ip, inv_n, floor, targets = std::move(targets)](Tape<T>& t, std::size_t self) {
                                   const T g = t.grad_at(self).data[0];
                                   const auto& P = t.value_at(ip);
                                   auto& d = t.grad_buffer(ip);
                                   for (std::size_t idx : targets) {
                                       const T p = P.data[idx];
                                       if (p > floor) {
                                           d.data[idx] -= g * inv_n / p;
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Instantiations

#define XGHSI_INSTANTIATE_OPS(T)                                                                        \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                               \
    template Var<T> transpose(const Var<T>&);                                                           \
    template Var<T> matvec(const Var<T>&, const Var<T>&);                                               \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> scale(const Var<T>&, T);                                                            \
    template Var<T> add_row_vector(const Var<T>&, const Var<T>&);                                       \
    template Var<T> mul_columns(const Var<T>&, const Var<T>&);                                          \
    template Var<T> mul_rows(const Var<T>&, const Var<T>&);                                             \
    template Var<T> leaky_relu(const Var<T>&, T);                                                       \
    template Var<T> sigmoid(const Var<T>&);                                                             \
    template Var<T> binary_entropy_from_logits(const Var<T>&);                                          \
    template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                           \
    template Var<T> segment_sum(const Var<T>&, std::span<const std::size_t>, std::size_t);              \
    template Var<T> concat_columns(const Var<T>&, const Var<T>&);                                       \
    template Var<T> concat_rows(const Var<T>&, const Var<T>&);                                          \
    template Var<T> softmax(const Var<T>&);                                                             \
    template Var<T> segment_softmax(const Var<T>&, std::span<const std::size_t>, std::size_t);          \
    template Var<T> sum(const Var<T>&);                                                                 \
    template Var<T> mean(const Var<T>&);                                                                \
    template Var<T> nll_loss(const Var<T>&, std::span<const int>, std::span<const std::size_t>, T);     \
    template void softmax_inplace(std::span<T>);

XGHSI_INSTANTIATE_OPS(float)
XGHSI_INSTANTIATE_OPS(double)

#undef XGHSI_INSTANTIATE_OPS

} // namespace xghsi::ad
