#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace smir {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) {
            throw std::invalid_argument("negative extent in shape");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) {
            out += ",";
        }
    }
    return out + "]";
}

// Thread-local toggle for graph recording. Forward passes under NoGradGuard
// build no graph, which makes shared-weight inference safe across threads.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const std::vector<T>&)> backward_fn;

    void accumulate(const std::vector<T>& g) {
        if (!requires_grad) {
            return;
        }
        if (grad.empty()) {
            grad = g;
        } else {
            for (std::size_t i = 0; i < grad.size(); ++i) {
                grad[i] += g[i];
            }
        }
    }
};

}  // namespace detail

// Dense multi-dimensional array with reverse-mode autodiff. Value-semantic
// handle to a shared node; ops on tensors whose inputs require gradients
// record a backward closure while grad mode is enabled.
template <typename T>
class Tensor {
public:
    using Node = detail::TensorNode<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad, true);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        std::vector<T> v(shape_size(shape), value);
        return from_data(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(T value) { return full({1}, value); }

    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false,
                            bool zero_fill = false) {
        const std::size_t n = shape_size(shape);
        if (zero_fill) {
            values.assign(n, T(0));
        } else if (values.size() != n) {
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return node_->values.size(); }

    std::vector<T>& values() { return node_->values; }
    const std::vector<T>& values() const { return node_->values; }
    T* data() { return node_->values.data(); }
    const T* data() const { return node_->values.data(); }

    T item() const {
        if (size() != 1) {
            throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
        }
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }

    const std::vector<T>& grad() const {
        if (node_->grad.empty()) {
            throw std::runtime_error("tensor has no gradient (backward not run?)");
        }
        return node_->grad;
    }

    void zero_grad() { node_->grad.assign(size(), T(0)); }

    // Copy of the data with no graph attached.
    Tensor detach() const { return from_data(shape(), values()); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> v(size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = static_cast<U>(node_->values[i]);
        }
        return Tensor<U>::from_data(shape(), std::move(v), false);
    }

    // Reverse sweep from a scalar root. Each reachable node is visited once;
    // gradient accumulation across fan-out is additive. Intermediate node
    // gradients are released as soon as their backward closure has run.
    void backward() {
        if (size() != 1) {
            throw std::invalid_argument("backward() requires a scalar root");
        }
        if (!node_->requires_grad) {
            throw std::runtime_error("backward() on a tensor that does not require grad");
        }
        std::vector<Node*> order;
        topo_sort(order);
        node_->grad.assign(1, T(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (!n->backward_fn || n->grad.empty()) {
                continue;
            }
            n->backward_fn(n->grad);
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> visited;
        // Iterative DFS; the graph for a deep model can exceed the stack.
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         std::vector<std::shared_ptr<TensorNode<T>>> parents,
                         std::function<void(const std::vector<T>&)> backward_fn) {
    auto out = Tensor<T>::from_data(std::move(shape), std::move(values));
    bool needs = false;
    if (grad_mode_flag()) {
        for (const auto& p : parents) {
            needs = needs || p->requires_grad;
        }
    }
    if (needs) {
        out.set_requires_grad(true);
        out.node()->parents = std::move(parents);
        out.node()->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise suite. Broadcasting is limited to identical shapes or
// tensor-vs-scalar, which is all the reconstruction loss and U-Net need.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> v(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] + pb[i];
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an, bn},
                                     [an, bn](const std::vector<T>& g) {
                                         an->accumulate(g);
                                         bn->accumulate(g);
                                     });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> v(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] - pb[i];
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an, bn},
                                     [an, bn](const std::vector<T>& g) {
                                         an->accumulate(g);
                                         if (bn->requires_grad) {
                                             std::vector<T> gb(g.size());
                                             for (std::size_t i = 0; i < g.size(); ++i) {
                                                 gb[i] = -g[i];
                                             }
                                             bn->accumulate(gb);
                                         }
                                     });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> v(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] * pb[i];
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an, bn},
                                     [an, bn](const std::vector<T>& g) {
                                         if (an->requires_grad) {
                                             std::vector<T> ga(g.size());
                                             for (std::size_t i = 0; i < g.size(); ++i) {
                                                 ga[i] = g[i] * bn->values[i];
                                             }
                                             an->accumulate(ga);
                                         }
                                         if (bn->requires_grad) {
                                             std::vector<T> gb(g.size());
                                             for (std::size_t i = 0; i < g.size(); ++i) {
                                                 gb[i] = g[i] * an->values[i];
                                             }
                                             bn->accumulate(gb);
                                         }
                                     });
}

// Division guard: denominator magnitudes are clamped to >= div_epsilon in
// both forward and backward. Keeps SSIM ratios finite on constant regions.
template <typename T>
inline constexpr T div_epsilon = T(1e-12);

template <typename T>
inline T guarded_denom(T b) {
    const T eps = div_epsilon<T>;
    if (b >= T(0)) {
        return b < eps ? eps : b;
    }
    return b > -eps ? -eps : b;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<T> v(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] / guarded_denom(pb[i]);
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(v), {an, bn}, [an, bn](const std::vector<T>& g) {
            if (an->requires_grad) {
                std::vector<T> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] / guarded_denom(bn->values[i]);
                }
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                std::vector<T> gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const T d = guarded_denom(bn->values[i]);
                    gb[i] = -g[i] * an->values[i] / (d * d);
                }
                bn->accumulate(gb);
            }
        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] + s;
    }
    auto an = a.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an},
                                     [an](const std::vector<T>& g) { an->accumulate(g); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] * s;
    }
    auto an = a.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an},
                                     [an, s](const std::vector<T>& g) {
                                         if (!an->requires_grad) {
                                             return;
                                         }
                                         std::vector<T> ga(g.size());
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             ga[i] = g[i] * s;
                                         }
                                         an->accumulate(ga);
                                     });
}

// s - a
template <typename T>
Tensor<T> sub_from_scalar(T s, const Tensor<T>& a) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = s - pa[i];
    }
    auto an = a.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an},
                                     [an](const std::vector<T>& g) {
                                         if (!an->requires_grad) {
                                             return;
                                         }
                                         std::vector<T> ga(g.size());
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             ga[i] = -g[i];
                                         }
                                         an->accumulate(ga);
                                     });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] > T(0) ? pa[i] : T(0);
    }
    auto an = a.node();
    return detail::make_op_result<T>(a.shape(), std::move(v), {an},
                                     [an](const std::vector<T>& g) {
                                         if (!an->requires_grad) {
                                             return;
                                         }
                                         std::vector<T> ga(g.size());
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             ga[i] = an->values[i] > T(0) ? g[i] : T(0);
                                         }
                                         an->accumulate(ga);
                                     });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = T(1) / (T(1) + std::exp(-pa[i]));
    }
    auto an = a.node();
    auto y = std::make_shared<std::vector<T>>(v);
    return detail::make_op_result<T>(a.shape(), std::move(v), {an},
                                     [an, y](const std::vector<T>& g) {
                                         if (!an->requires_grad) {
                                             return;
                                         }
                                         std::vector<T> ga(g.size());
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             const T s = (*y)[i];
                                             ga[i] = g[i] * s * (T(1) - s);
                                         }
                                         an->accumulate(ga);
                                     });
}

// Subgradient at 0 is 0, keeping L1 gradients bounded.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = pa[i] < T(0) ? -pa[i] : pa[i];
    }
    auto an = a.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(v), {an}, [an](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = an->values[i];
                ga[i] = x > T(0) ? g[i] : (x < T(0) ? -g[i] : T(0));
            }
            an->accumulate(ga);
        });
}

// x^p with the base clamped to >= pow_floor; derivative is 0 in the clamped
// region. Only used on positive statistics (MS-SSIM per-scale means).
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
    constexpr T pow_floor = T(1e-12);
    std::vector<T> v(a.size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const T b = pa[i] < pow_floor ? pow_floor : pa[i];
        v[i] = std::pow(b, p);
    }
    auto an = a.node();
    auto y = std::make_shared<std::vector<T>>(v);
    return detail::make_op_result<T>(
        a.shape(), std::move(v), {an}, [an, y, p](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = an->values[i];
                if (x < pow_floor) {
                    ga[i] = T(0);
                } else {
                    ga[i] = g[i] * p * (*y)[i] / x;
                }
            }
            an->accumulate(ga);
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    const T* pa = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += pa[i];
    }
    auto an = a.node();
    return detail::make_op_result<T>({1}, {acc}, {an}, [an](const std::vector<T>& g) {
        if (!an->requires_grad) {
            return;
        }
        std::vector<T> ga(an->values.size(), g[0]);
        an->accumulate(ga);
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.size() == 0) {
        throw std::invalid_argument("mean of empty tensor");
    }
    T acc = T(0);
    const T* pa = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += pa[i];
    }
    const T inv = T(1) / static_cast<T>(a.size());
    auto an = a.node();
    return detail::make_op_result<T>({1}, {acc * inv}, {an}, [an, inv](const std::vector<T>& g) {
        if (!an->requires_grad) {
            return;
        }
        std::vector<T> ga(an->values.size(), g[0] * inv);
        an->accumulate(ga);
    });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
    return mul(a, b);
}
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
    return div(a, b);
}

}  // namespace smir
