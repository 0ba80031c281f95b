#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "radsum/rng.hpp"
#include "radsum/util.hpp"

namespace radsum {

// Reverse-mode autograd over dense row-major tensors. Each op builds a graph
// node holding its value and a closure that maps the node's output gradient
// to input-gradient contributions. Gradients live in a GradStore keyed by
// node pointer, not on the tensors themselves: independent examples can then
// run backward concurrently against shared parameter leaves and be reduced
// in a fixed order afterwards.
//
// Scalar type S is float for training and double for verification builds of
// the same code paths.

template <typename S>
struct NodeT;

template <typename S>
class GradStoreT;

template <typename S>
using BackwardFn = std::function<void(const std::vector<S>&, GradStoreT<S>&)>;

template <typename S>
struct NodeT {
    std::vector<size_t> shape;
    std::vector<S> value;
    std::vector<std::shared_ptr<NodeT<S>>> inputs;
    BackwardFn<S> backward;
    bool backward_done = false;

    size_t numel() const {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }
};

inline std::string shape_str(const std::vector<size_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename S>
class TensorT {
  public:
    TensorT() = default;

    static TensorT leaf(std::vector<size_t> shape, std::vector<S> data) {
        auto n = std::make_shared<NodeT<S>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        if (n->numel() != n->value.size())
            throw std::invalid_argument("tensor: data length " + std::to_string(n->value.size()) +
                                        " does not match shape " + shape_str(n->shape));
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

    static TensorT zeros(std::vector<size_t> shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return leaf(std::move(shape), std::vector<S>(n, S(0)));
    }

    static TensorT scalar(S v) { return leaf({1}, {v}); }

    static TensorT make(std::vector<size_t> shape, std::vector<S> value,
                        std::vector<std::shared_ptr<NodeT<S>>> inputs, BackwardFn<S> backward) {
        auto n = std::make_shared<NodeT<S>>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t numel() const { return node_->numel(); }
    const std::vector<S>& value() const { return node_->value; }

    // In-place mutation for the optimizer; never call while graphs built on
    // this leaf are still alive.
    std::vector<S>& mutable_value() { return node_->value; }

    S item() const {
        if (numel() != 1)
            throw std::invalid_argument("item: tensor has shape " + shape_str(shape()));
        return node_->value[0];
    }

    const std::shared_ptr<NodeT<S>>& node() const { return node_; }

  private:
    std::shared_ptr<NodeT<S>> node_;
};

template <typename S>
class GradStoreT {
  public:
    // Accumulation buffer for a node, zero-initialized on first touch.
    std::vector<S>& accum(const NodeT<S>* node) {
        auto it = grads_.find(node);
        if (it == grads_.end())
            it = grads_.emplace(node, std::vector<S>(node->numel(), S(0))).first;
        return it->second;
    }

    const std::vector<S>* find(const TensorT<S>& t) const { return find_raw(t.node().get()); }

    const std::vector<S>* find_raw(const NodeT<S>* node) const {
        auto it = grads_.find(node);
        return it == grads_.end() ? nullptr : &it->second;
    }

    // Gradient of a tensor; zeros when the tensor was not reached by backward.
    std::vector<S> get_or_zero(const TensorT<S>& t) const {
        const auto* g = find(t);
        return g ? *g : std::vector<S>(t.numel(), S(0));
    }

    void clear() { grads_.clear(); }

  private:
    std::unordered_map<const NodeT<S>*, std::vector<S>> grads_;
};

// ---------------------------------------------------------------------------
// backward

template <typename S>
void backward(const TensorT<S>& loss, GradStoreT<S>& store) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    NodeT<S>* root = loss.node().get();
    if (root->backward_done)
        throw std::runtime_error("backward: already run for this graph root; rebuild the graph");
    root->backward_done = true;

    // Post-order DFS for a topological order, then walk it in reverse.
    std::vector<NodeT<S>*> order;
    std::unordered_set<NodeT<S>*> visited;
    std::vector<std::pair<NodeT<S>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeT<S>* child = node->inputs[next++].get();
            if (visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    store.accum(root).assign(1, S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<S>* node = *it;
        if (!node->backward) continue;
        const auto* g = store.find_raw(node);
        if (!g) continue;  // zero gradient flows, nothing to propagate
        node->backward(*g, store);
    }
}

// ---------------------------------------------------------------------------
// ops

namespace detail {

template <typename S>
void check_finite_rows(const std::vector<S>& v, const char* op) {
    for (S x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw std::runtime_error(std::string(op) + ": non-finite input");
}

template <typename S>
void require_matrix(const TensorT<S>& t, const char* op) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got " +
                                    shape_str(t.shape()));
}

}  // namespace detail

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const size_t m = a.shape()[0], k = a.shape()[1];
    const size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    std::vector<S> out(m * n, S(0));
    const auto& av = a.value();
    const auto& bv = b.value();
    // i-k-j order: the inner j loop is elementwise over independent outputs,
    // which vectorizes without reassociating any reduction.
    for (size_t i = 0; i < m; ++i) {
        for (size_t kk = 0; kk < k; ++kk) {
            const S aik = av[i * k + kk];
            const S* brow = &bv[kk * n];
            S* crow = &out[i * n];
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    auto an = a.node(), bn = b.node();
    return TensorT<S>::make(
        {m, n}, std::move(out), {an, bn},
        [an, bn, m, k, n](const std::vector<S>& g, GradStoreT<S>& store) {
            const auto& av2 = an->value;
            const auto& bv2 = bn->value;
            {  // dA = g * B^T, with B transposed once so inner loops stay contiguous
                std::vector<S> bt(n * k);
                for (size_t kk = 0; kk < k; ++kk)
                    for (size_t j = 0; j < n; ++j) bt[j * k + kk] = bv2[kk * n + j];
                auto& da = store.accum(an.get());
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) {
                        const S gij = g[i * n + j];
                        const S* btrow = &bt[j * k];
                        S* darow = &da[i * k];
                        for (size_t kk = 0; kk < k; ++kk) darow[kk] += gij * btrow[kk];
                    }
            }
            {  // dB = A^T * g
                auto& db = store.accum(bn.get());
                for (size_t kk = 0; kk < k; ++kk)
                    for (size_t i = 0; i < m; ++i) {
                        const S aik = av2[i * k + kk];
                        const S* grow = &g[i * n];
                        S* dbrow = &db[kk * n];
                        for (size_t j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
                    }
            }
        });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<S> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto an = a.node(), bn = b.node();
    return TensorT<S>::make(a.shape(), std::move(out), {an, bn},
                            [an, bn](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                auto& db = store.accum(bn.get());
                                for (size_t i = 0; i < g.size(); ++i) {
                                    da[i] += g[i];
                                    db[i] += g[i];
                                }
                            });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<S> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    auto an = a.node(), bn = b.node();
    return TensorT<S>::make(a.shape(), std::move(out), {an, bn},
                            [an, bn](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                auto& db = store.accum(bn.get());
                                for (size_t i = 0; i < g.size(); ++i) {
                                    da[i] += g[i];
                                    db[i] -= g[i];
                                }
                            });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<S> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto an = a.node(), bn = b.node();
    return TensorT<S>::make(a.shape(), std::move(out), {an, bn},
                            [an, bn](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                auto& db = store.accum(bn.get());
                                for (size_t i = 0; i < g.size(); ++i) {
                                    da[i] += g[i] * bn->value[i];
                                    db[i] += g[i] * an->value[i];
                                }
                            });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    std::vector<S> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
    auto an = a.node();
    return TensorT<S>::make(a.shape(), std::move(out), {an},
                            [an, c](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
                            });
}

template <typename S>
TensorT<S> gelu(const TensorT<S>& a) {
    // tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    const double k = 0.044715;
    std::vector<S> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(a.value()[i]);
        out[i] = static_cast<S>(0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))));
    }
    auto an = a.node();
    return TensorT<S>::make(a.shape(), std::move(out), {an},
                            [an, c, k](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                for (size_t i = 0; i < g.size(); ++i) {
                                    const double x = static_cast<double>(an->value[i]);
                                    const double t = std::tanh(c * (x + k * x * x * x));
                                    const double d =
                                        0.5 * (1.0 + t) +
                                        0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
                                    da[i] += g[i] * static_cast<S>(d);
                                }
                            });
}

template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
    detail::require_matrix(a, "softmax_rows");
    detail::check_finite_rows(a.value(), "softmax_rows");
    const size_t m = a.shape()[0], n = a.shape()[1];
    if (n == 0) throw std::invalid_argument("softmax_rows: empty rows");
    std::vector<S> out(m * n);
    for (size_t i = 0; i < m; ++i) {
        const S* row = &a.value()[i * n];
        double mx = static_cast<double>(row[0]);
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - mx);
            out[i * n + j] = static_cast<S>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (size_t j = 0; j < n; ++j)
            out[i * n + j] = static_cast<S>(static_cast<double>(out[i * n + j]) * inv);
    }
    auto an = a.node();
    auto yv = std::make_shared<std::vector<S>>(out);
    return TensorT<S>::make(
        {m, n}, std::move(out), {an},
        [an, yv, m, n](const std::vector<S>& g, GradStoreT<S>& store) {
            auto& da = store.accum(an.get());
            for (size_t i = 0; i < m; ++i) {
                const S* y = &(*yv)[i * n];
                const S* gr = &g[i * n];
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j)
                    dot += static_cast<double>(gr[j]) * static_cast<double>(y[j]);
                for (size_t j = 0; j < n; ++j)
                    da[i * n + j] += static_cast<S>(
                        static_cast<double>(y[j]) * (static_cast<double>(gr[j]) - dot));
            }
        });
}

// Softmax over the lower triangle of a [t,t] score matrix: row i attends to
// columns j <= i only; future columns are exactly zero, making causality an
// identity of the computation rather than a large negative bias.
template <typename S>
TensorT<S> causal_softmax_rows(const TensorT<S>& a) {
    detail::require_matrix(a, "causal_softmax_rows");
    if (a.shape()[0] != a.shape()[1])
        throw std::invalid_argument("causal_softmax_rows: expected square scores, got " +
                                    shape_str(a.shape()));
    detail::check_finite_rows(a.value(), "causal_softmax_rows");
    const size_t t = a.shape()[0];
    std::vector<S> out(t * t, S(0));
    for (size_t i = 0; i < t; ++i) {
        const S* row = &a.value()[i * t];
        double mx = static_cast<double>(row[0]);
        for (size_t j = 1; j <= i; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (size_t j = 0; j <= i; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - mx);
            out[i * t + j] = static_cast<S>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (size_t j = 0; j <= i; ++j)
            out[i * t + j] = static_cast<S>(static_cast<double>(out[i * t + j]) * inv);
    }
    auto an = a.node();
    auto yv = std::make_shared<std::vector<S>>(out);
    return TensorT<S>::make(
        {t, t}, std::move(out), {an},
        [an, yv, t](const std::vector<S>& g, GradStoreT<S>& store) {
            auto& da = store.accum(an.get());
            for (size_t i = 0; i < t; ++i) {
                const S* y = &(*yv)[i * t];
                const S* gr = &g[i * t];
                double dot = 0.0;
                for (size_t j = 0; j <= i; ++j)
                    dot += static_cast<double>(gr[j]) * static_cast<double>(y[j]);
                for (size_t j = 0; j <= i; ++j)
                    da[i * t + j] += static_cast<S>(
                        static_cast<double>(y[j]) * (static_cast<double>(gr[j]) - dot));
            }
        });
}

template <typename S>
TensorT<S> layernorm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                     double eps = 1e-5) {
    detail::require_matrix(x, "layernorm");
    const size_t m = x.shape()[0], d = x.shape()[1];
    if (gain.shape() != std::vector<size_t>{d} || bias.shape() != std::vector<size_t>{d})
        throw std::invalid_argument("layernorm: gain/bias must have shape [" + std::to_string(d) +
                                    "]");
    std::vector<S> out(m * d);
    auto xhat = std::make_shared<std::vector<S>>(m * d);
    auto inv_sigma = std::make_shared<std::vector<S>>(m);
    for (size_t i = 0; i < m; ++i) {
        const S* row = &x.value()[i * d];
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(row[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = static_cast<S>(inv);
        for (size_t j = 0; j < d; ++j) {
            const double xh = (static_cast<double>(row[j]) - mean) * inv;
            (*xhat)[i * d + j] = static_cast<S>(xh);
            out[i * d + j] = static_cast<S>(xh * static_cast<double>(gain.value()[j]) +
                                            static_cast<double>(bias.value()[j]));
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return TensorT<S>::make(
        {m, d}, std::move(out), {xn, gn, bn},
        [xn, gn, bn, xhat, inv_sigma, m, d](const std::vector<S>& g, GradStoreT<S>& store) {
            auto& dx = store.accum(xn.get());
            auto& dgain = store.accum(gn.get());
            auto& dbias = store.accum(bn.get());
            for (size_t i = 0; i < m; ++i) {
                const S* gr = &g[i * d];
                const S* xh = &(*xhat)[i * d];
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    const double dxh =
                        static_cast<double>(gr[j]) * static_cast<double>(gn->value[j]);
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * static_cast<double>(xh[j]);
                    dgain[j] += static_cast<S>(static_cast<double>(gr[j]) *
                                               static_cast<double>(xh[j]));
                    dbias[j] += gr[j];
                }
                mean_dxhat /= static_cast<double>(d);
                mean_dxhat_xhat /= static_cast<double>(d);
                const double inv = static_cast<double>((*inv_sigma)[i]);
                for (size_t j = 0; j < d; ++j) {
                    const double dxh =
                        static_cast<double>(gr[j]) * static_cast<double>(gn->value[j]);
                    dx[i * d + j] += static_cast<S>(
                        inv * (dxh - mean_dxhat - static_cast<double>(xh[j]) * mean_dxhat_xhat));
                }
            }
        });
}

// Mean over non-ignored positions of -log softmax(logits)[target].
template <typename S>
TensorT<S> cross_entropy_mean(const TensorT<S>& logits, const std::vector<int>& targets,
                              int ignore_id) {
    detail::require_matrix(logits, "cross_entropy_mean");
    const size_t t = logits.shape()[0], v = logits.shape()[1];
    if (targets.size() != t)
        throw std::invalid_argument("cross_entropy_mean: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(t) + " logit rows");
    size_t kept = 0;
    for (int id : targets) {
        if (id == ignore_id) continue;
        if (id < 0 || static_cast<size_t>(id) >= v)
            throw std::invalid_argument("cross_entropy_mean: target id " + std::to_string(id) +
                                        " outside vocab of size " + std::to_string(v));
        ++kept;
    }
    if (kept == 0) throw std::invalid_argument("cross_entropy_mean: all positions ignored");

    auto probs = std::make_shared<std::vector<S>>(t * v, S(0));
    double total = 0.0;
    for (size_t i = 0; i < t; ++i) {
        if (targets[i] == ignore_id) continue;
        const S* row = &logits.value()[i * v];
        double mx = static_cast<double>(row[0]);
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (size_t j = 0; j < v; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - mx);
            (*probs)[i * v + j] = static_cast<S>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (size_t j = 0; j < v; ++j)
            (*probs)[i * v + j] = static_cast<S>(static_cast<double>((*probs)[i * v + j]) * inv);
        total -= std::log(static_cast<double>((*probs)[i * v + targets[i]]));
    }
    const double loss = total / static_cast<double>(kept);

    auto ln = logits.node();
    return TensorT<S>::make(
        {1}, {static_cast<S>(loss)}, {ln},
        [ln, probs, targets, ignore_id, t, v, kept](const std::vector<S>& g,
                                                    GradStoreT<S>& store) {
            auto& dl = store.accum(ln.get());
            const S scale = g[0] / static_cast<S>(kept);
            for (size_t i = 0; i < t; ++i) {
                if (targets[i] == ignore_id) continue;
                for (size_t j = 0; j < v; ++j) {
                    S p = (*probs)[i * v + j];
                    if (j == static_cast<size_t>(targets[i])) p -= S(1);
                    dl[i * v + j] += scale * p;
                }
            }
        });
}

// Gathers rows of an embedding table: out[p,:] = table[ids[p],:].
template <typename S>
TensorT<S> embed_rows(const TensorT<S>& table, const std::vector<int>& ids) {
    detail::require_matrix(table, "embed_rows");
    const size_t v = table.shape()[0], d = table.shape()[1];
    std::vector<S> out(ids.size() * d);
    for (size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] < 0 || static_cast<size_t>(ids[p]) >= v)
            throw std::invalid_argument("embed_rows: id " + std::to_string(ids[p]) +
                                        " outside table of " + std::to_string(v) + " rows");
        const S* src = &table.value()[static_cast<size_t>(ids[p]) * d];
        std::copy(src, src + d, &out[p * d]);
    }
    auto tn = table.node();
    return TensorT<S>::make({ids.size(), d}, std::move(out), {tn},
                            [tn, ids, d](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& dt = store.accum(tn.get());
                                for (size_t p = 0; p < ids.size(); ++p) {
                                    S* dst = &dt[static_cast<size_t>(ids[p]) * d];
                                    const S* src = &g[p * d];
                                    for (size_t j = 0; j < d; ++j) dst[j] += src[j];
                                }
                            });
}

template <typename S>
TensorT<S> slice_rows(const TensorT<S>& a, size_t start, size_t count) {
    detail::require_matrix(a, "slice_rows");
    const size_t m = a.shape()[0], n = a.shape()[1];
    if (start + count > m)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") exceeds " +
                                    std::to_string(m) + " rows");
    std::vector<S> out(a.value().begin() + static_cast<long>(start * n),
                       a.value().begin() + static_cast<long>((start + count) * n));
    auto an = a.node();
    return TensorT<S>::make({count, n}, std::move(out), {an},
                            [an, start, count, n](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                for (size_t i = 0; i < count * n; ++i)
                                    da[start * n + i] += g[i];
                            });
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& a, size_t start, size_t count) {
    detail::require_matrix(a, "slice_cols");
    const size_t m = a.shape()[0], n = a.shape()[1];
    if (start + count > n)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") exceeds " +
                                    std::to_string(n) + " columns");
    std::vector<S> out(m * count);
    for (size_t i = 0; i < m; ++i)
        std::copy(&a.value()[i * n + start], &a.value()[i * n + start + count], &out[i * count]);
    auto an = a.node();
    return TensorT<S>::make(
        {m, count}, std::move(out), {an},
        [an, start, count, m, n](const std::vector<S>& g, GradStoreT<S>& store) {
            auto& da = store.accum(an.get());
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < count; ++j) da[i * n + start + j] += g[i * count + j];
        });
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
    detail::require_matrix(a, "transpose");
    const size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<S> out(m * n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
    auto an = a.node();
    return TensorT<S>::make({n, m}, std::move(out), {an},
                            [an, m, n](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                for (size_t i = 0; i < m; ++i)
                                    for (size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
                            });
}

template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const size_t m = parts[0].shape()[0];
    size_t total = 0;
    std::vector<std::shared_ptr<NodeT<S>>> nodes;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p.shape()[0] != m)
            throw std::invalid_argument("concat_cols: row count mismatch " +
                                        shape_str(p.shape()));
        widths.push_back(p.shape()[1]);
        total += p.shape()[1];
        nodes.push_back(p.node());
    }
    std::vector<S> out(m * total);
    size_t off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const size_t w = widths[k];
        for (size_t i = 0; i < m; ++i)
            std::copy(&parts[k].value()[i * w], &parts[k].value()[i * w + w],
                      &out[i * total + off]);
        off += w;
    }
    return TensorT<S>::make(
        {m, total}, std::move(out), nodes,
        [nodes, widths, m, total](const std::vector<S>& g, GradStoreT<S>& store) {
            size_t off2 = 0;
            for (size_t k = 0; k < nodes.size(); ++k) {
                const size_t w = widths[k];
                auto& dp = store.accum(nodes[k].get());
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < w; ++j) dp[i * w + j] += g[i * total + off2 + j];
                off2 += w;
            }
        });
}

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
    double total = 0.0;
    for (S x : a.value()) total += static_cast<double>(x);
    auto an = a.node();
    return TensorT<S>::make({1}, {static_cast<S>(total)}, {an},
                            [an](const std::vector<S>& g, GradStoreT<S>& store) {
                                auto& da = store.accum(an.get());
                                for (auto& x : da) x += g[0];
                            });
}

// ---------------------------------------------------------------------------
// finite-difference verification

// Compares analytic gradients of f() against central differences on a random
// sample of max(100, 1% of total) coordinates. Returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
template <typename S>
double grad_check(const std::function<TensorT<S>()>& f, const std::vector<TensorT<S>>& params,
                  double eps = 1e-3, uint64_t seed = 12345) {
    TensorT<S> loss = f();
    GradStoreT<S> store;
    backward(loss, store);
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw std::runtime_error("grad_check: non-finite loss");

    size_t total = 0;
    for (const auto& p : params) total += p.numel();
    if (total == 0) throw std::invalid_argument("grad_check: no parameters");
    const size_t ncheck = std::min(total, std::max<size_t>(100, total / 100));

    Rng rng = Rng::derive(seed, fnv1a64("grad-check"));
    double max_rel = 0.0;
    for (size_t c = 0; c < ncheck; ++c) {
        size_t coord = rng.uniform_below(total);
        size_t pi = 0;
        while (coord >= params[pi].numel()) coord -= params[pi++].numel();
        TensorT<S> param = params[pi];  // shares the underlying node
        auto& val = param.mutable_value();
        const S orig = val[coord];

        val[coord] = orig + static_cast<S>(eps);
        const double up = static_cast<double>(f().item());
        val[coord] = orig - static_cast<S>(eps);
        const double down = static_cast<double>(f().item());
        val[coord] = orig;

        const double numeric = (up - down) / (2.0 * eps);
        const double analytic =
            static_cast<double>(store.get_or_zero(params[pi])[coord]);
        if (!std::isfinite(numeric) || !std::isfinite(analytic))
            throw std::runtime_error("grad_check: non-finite gradient");
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

using Tensor = TensorT<float>;
using GradStore = GradStoreT<float>;

}  // namespace radsum
