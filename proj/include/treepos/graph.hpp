#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "treepos/tensor.hpp"

namespace treepos {

// Reverse-mode tape over dense tensors. Every operation appends a node
// holding its forward value plus a closure that scatters the node's gradient
// into its parents; backward() seeds a scalar loss and walks the tape once in
// reverse creation order, then flushes leaf gradients into bound parameters.
//
// Reductions whose result depends on summation order (dot products, softmax
// denominators, attention mixes, layer-norm moments) accumulate in double
// regardless of T, so float32 forward values do not drift with operand order.
template <typename T>
class Graph {
public:
    using NodeId = std::size_t;
    static constexpr NodeId npos = std::size_t(-1);

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // constant leaf; no gradient flows into it
    NodeId input(Tensor<T> value) { return push(std::move(value), false); }

    // leaf bound to a learnable parameter; backward() accumulates into p->grad
    NodeId param(Tensor<T>* p) {
        if (p == nullptr || !p->has_grad())
            throw std::logic_error("param leaf requires an allocated grad accumulator");
        Tensor<T> copy;
        copy.shape = p->shape;
        copy.data = p->data;
        NodeId id = push(std::move(copy), true);
        nodes_[id].bound = p;
        return id;
    }

    const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
    const std::vector<T>& grad(NodeId id) const { return nodes_.at(id).grad; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeId>& softmax_nodes() const { return softmax_ids_; }

    // C = A(m,k) . B(k,n)
    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<T>& A = val2(a, "matmul lhs");
        const Tensor<T>& B = val2(b, "matmul rhs");
        if (A.dim(1) != B.dim(0)) throw std::invalid_argument("ShapeMismatch: matmul inner extents");
        const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
        Tensor<T> C({m, n});
        std::vector<double> acc(std::size_t(n), 0.0);
        for (int i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int t = 0; t < k; ++t) {
                const double av = double(A.at(i, t));
                const T* brow = B.data.data() + std::size_t(t) * std::size_t(n);
                for (int j = 0; j < n; ++j) acc[std::size_t(j)] += av * double(brow[std::size_t(j)]);
            }
            for (int j = 0; j < n; ++j) C.at(i, j) = T(acc[std::size_t(j)]);
        }
        NodeId out = push(std::move(C), needs(a) || needs(b));
        nodes_[out].back = [this, a, b, out, m, k, n]() {
            const auto& g = nodes_[out].grad;
            const Tensor<T>& A = nodes_[a].value;
            const Tensor<T>& B = nodes_[b].value;
            if (needs(a)) {
                auto& ga = nodes_[a].grad;
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double s = 0;
                        for (int j = 0; j < n; ++j)
                            s += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) * double(B.at(t, j));
                        ga[std::size_t(i) * std::size_t(k) + std::size_t(t)] += T(s);
                    }
            }
            if (needs(b)) {
                auto& gb = nodes_[b].grad;
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < n; ++j) {
                        double s = 0;
                        for (int i = 0; i < m; ++i)
                            s += double(A.at(i, t)) * double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]);
                        gb[std::size_t(t) * std::size_t(n) + std::size_t(j)] += T(s);
                    }
            }
        };
        return out;
    }

    // C = A(m,k) . B(n,k)^T
    NodeId matmul_nt(NodeId a, NodeId b) {
        const Tensor<T>& A = val2(a, "matmul_nt lhs");
        const Tensor<T>& B = val2(b, "matmul_nt rhs");
        if (A.dim(1) != B.dim(1)) throw std::invalid_argument("ShapeMismatch: matmul_nt inner extents");
        const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
        Tensor<T> C({m, n});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int t = 0; t < k; ++t) s += double(A.at(i, t)) * double(B.at(j, t));
                C.at(i, j) = T(s);
            }
        NodeId out = push(std::move(C), needs(a) || needs(b));
        nodes_[out].back = [this, a, b, out, m, k, n]() {
            const auto& g = nodes_[out].grad;
            const Tensor<T>& A = nodes_[a].value;
            const Tensor<T>& B = nodes_[b].value;
            if (needs(a)) {
                auto& ga = nodes_[a].grad;
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double s = 0;
                        for (int j = 0; j < n; ++j)
                            s += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) * double(B.at(j, t));
                        ga[std::size_t(i) * std::size_t(k) + std::size_t(t)] += T(s);
                    }
            }
            if (needs(b)) {
                auto& gb = nodes_[b].grad;
                for (int j = 0; j < n; ++j)
                    for (int t = 0; t < k; ++t) {
                        double s = 0;
                        for (int i = 0; i < m; ++i)
                            s += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) * double(A.at(i, t));
                        gb[std::size_t(j) * std::size_t(k) + std::size_t(t)] += T(s);
                    }
            }
        };
        return out;
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor<T>& A = nodes_.at(a).value;
        const Tensor<T>& B = nodes_.at(b).value;
        if (!A.same_shape(B)) throw std::invalid_argument("ShapeMismatch: add operands");
        Tensor<T> C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
        NodeId out = push(std::move(C), needs(a) || needs(b));
        nodes_[out].back = [this, a, b, out]() {
            const auto& g = nodes_[out].grad;
            if (needs(a)) {
                auto& ga = nodes_[a].grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (needs(b)) {
                auto& gb = nodes_[b].grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
        return out;
    }

    // A(m,n) + bias(n) broadcast over rows
    NodeId add_row_broadcast(NodeId a, NodeId bias) {
        const Tensor<T>& A = val2(a, "add_row_broadcast lhs");
        const Tensor<T>& B = nodes_.at(bias).value;
        const int m = A.dim(0), n = A.dim(1);
        if (B.ndim() != 1 || B.dim(0) != n)
            throw std::invalid_argument("ShapeMismatch: broadcast bias length");
        Tensor<T> C = A;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) C.at(i, j) += B.at(j);
        NodeId out = push(std::move(C), needs(a) || needs(bias));
        nodes_[out].back = [this, a, bias, out, m, n]() {
            const auto& g = nodes_[out].grad;
            if (needs(a)) {
                auto& ga = nodes_[a].grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (needs(bias)) {
                auto& gb = nodes_[bias].grad;
                for (int j = 0; j < n; ++j) {
                    double s = 0;
                    for (int i = 0; i < m; ++i) s += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]);
                    gb[std::size_t(j)] += T(s);
                }
            }
        };
        return out;
    }

    NodeId scale(NodeId a, T c) {
        Tensor<T> C = nodes_.at(a).value;
        for (T& v : C.data) v *= c;
        NodeId out = push(std::move(C), needs(a));
        nodes_[out].back = [this, a, out, c]() {
            if (!needs(a)) return;
            const auto& g = nodes_[out].grad;
            auto& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        };
        return out;
    }

    NodeId tanh_op(NodeId a) {
        Tensor<T> C = nodes_.at(a).value;
        for (T& v : C.data) v = T(std::tanh(double(v)));
        NodeId out = push(std::move(C), needs(a));
        nodes_[out].back = [this, a, out]() {
            if (!needs(a)) return;
            const auto& g = nodes_[out].grad;
            const auto& y = nodes_[out].value.data;
            auto& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (T(1) - y[i] * y[i]) * g[i];
        };
        return out;
    }

    NodeId relu(NodeId a) {
        Tensor<T> C = nodes_.at(a).value;
        for (T& v : C.data) v = v > T(0) ? v : T(0);
        NodeId out = push(std::move(C), needs(a));
        nodes_[out].back = [this, a, out]() {
            if (!needs(a)) return;
            const auto& g = nodes_[out].grad;
            const auto& x = nodes_[a].value.data;
            auto& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > T(0)) ga[i] += g[i];
        };
        return out;
    }

    // exact (erf-based) gelu; smooth, so finite-difference checks hold at
    // every point, unlike the relu kink
    NodeId gelu(NodeId a) {
        constexpr double inv_sqrt2 = 0.7071067811865476;
        Tensor<T> C = nodes_.at(a).value;
        for (T& v : C.data) {
            const double x = double(v);
            v = T(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
        }
        NodeId out = push(std::move(C), needs(a));
        nodes_[out].back = [this, a, out]() {
            if (!needs(a)) return;
            constexpr double inv_sqrt2 = 0.7071067811865476;
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            const auto& g = nodes_[out].grad;
            const auto& xv = nodes_[a].value.data;
            auto& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = double(xv[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                ga[i] += T((cdf + x * pdf) * double(g[i]));
            }
        };
        return out;
    }

    // row-wise softmax with max subtraction
    NodeId softmax_rows(NodeId a) {
        const Tensor<T>& A = val2(a, "softmax");
        const int m = A.dim(0), n = A.dim(1);
        Tensor<T> C({m, n});
        for (int i = 0; i < m; ++i) {
            double mx = double(A.at(i, 0));
            for (int j = 1; j < n; ++j) mx = std::max(mx, double(A.at(i, j)));
            double denom = 0;
            for (int j = 0; j < n; ++j) denom += std::exp(double(A.at(i, j)) - mx);
            for (int j = 0; j < n; ++j) C.at(i, j) = T(std::exp(double(A.at(i, j)) - mx) / denom);
        }
        NodeId out = push(std::move(C), needs(a));
        softmax_ids_.push_back(out);
        nodes_[out].back = [this, a, out, m, n]() {
            if (!needs(a)) return;
            const auto& g = nodes_[out].grad;
            const Tensor<T>& y = nodes_[out].value;
            auto& ga = nodes_[a].grad;
            for (int i = 0; i < m; ++i) {
                double dot = 0;
                for (int j = 0; j < n; ++j)
                    dot += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) * double(y.at(i, j));
                for (int j = 0; j < n; ++j)
                    ga[std::size_t(i) * std::size_t(n) + std::size_t(j)] +=
                        T(double(y.at(i, j)) *
                          (double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) - dot));
            }
        };
        return out;
    }

    // per-row layer norm with learnable gain/bias vectors of length n
    NodeId layer_norm_rows(NodeId a, NodeId gain, NodeId bias) {
        const Tensor<T>& A = val2(a, "layer_norm");
        const int m = A.dim(0), n = A.dim(1);
        const Tensor<T>& G = nodes_.at(gain).value;
        const Tensor<T>& B = nodes_.at(bias).value;
        if (G.ndim() != 1 || G.dim(0) != n || B.ndim() != 1 || B.dim(0) != n)
            throw std::invalid_argument("ShapeMismatch: layer norm gain/bias length");
        constexpr double eps = 1e-5;
        Tensor<T> C({m, n});
        auto xhat = std::make_shared<std::vector<double>>(std::size_t(m) * std::size_t(n));
        auto inv_std = std::make_shared<std::vector<double>>(std::size_t(m));
        for (int i = 0; i < m; ++i) {
            double mean = 0;
            for (int j = 0; j < n; ++j) mean += double(A.at(i, j));
            mean /= n;
            double var = 0;
            for (int j = 0; j < n; ++j) {
                double d = double(A.at(i, j)) - mean;
                var += d * d;
            }
            var /= n;
            double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[std::size_t(i)] = is;
            for (int j = 0; j < n; ++j) {
                double xh = (double(A.at(i, j)) - mean) * is;
                (*xhat)[std::size_t(i) * std::size_t(n) + std::size_t(j)] = xh;
                C.at(i, j) = T(xh * double(G.at(j)) + double(B.at(j)));
            }
        }
        NodeId out = push(std::move(C), needs(a) || needs(gain) || needs(bias));
        nodes_[out].back = [this, a, gain, bias, out, m, n, xhat, inv_std]() {
            const auto& g = nodes_[out].grad;
            const Tensor<T>& G = nodes_[gain].value;
            if (needs(gain)) {
                auto& gg = nodes_[gain].grad;
                for (int j = 0; j < n; ++j) {
                    double s = 0;
                    for (int i = 0; i < m; ++i)
                        s += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) *
                             (*xhat)[std::size_t(i) * std::size_t(n) + std::size_t(j)];
                    gg[std::size_t(j)] += T(s);
                }
            }
            if (needs(bias)) {
                auto& gb = nodes_[bias].grad;
                for (int j = 0; j < n; ++j) {
                    double s = 0;
                    for (int i = 0; i < m; ++i) s += double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]);
                    gb[std::size_t(j)] += T(s);
                }
            }
            if (needs(a)) {
                auto& ga = nodes_[a].grad;
                for (int i = 0; i < m; ++i) {
                    double mean_dxh = 0, mean_dxh_xh = 0;
                    for (int j = 0; j < n; ++j) {
                        double dxh = double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) * double(G.at(j));
                        double xh = (*xhat)[std::size_t(i) * std::size_t(n) + std::size_t(j)];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh;
                    }
                    mean_dxh /= n;
                    mean_dxh_xh /= n;
                    for (int j = 0; j < n; ++j) {
                        double dxh = double(g[std::size_t(i) * std::size_t(n) + std::size_t(j)]) * double(G.at(j));
                        double xh = (*xhat)[std::size_t(i) * std::size_t(n) + std::size_t(j)];
                        ga[std::size_t(i) * std::size_t(n) + std::size_t(j)] +=
                            T((*inv_std)[std::size_t(i)] * (dxh - mean_dxh - xh * mean_dxh_xh));
                    }
                }
            }
        };
        return out;
    }

    // gathers table rows: out(i,:) = table(ids[i],:)
    NodeId rows_lookup(NodeId table, std::vector<int> ids) {
        const Tensor<T>& Tab = val2(table, "rows_lookup table");
        const int v = Tab.dim(0), d = Tab.dim(1);
        const int m = int(ids.size());
        for (int id : ids)
            if (id < 0 || id >= v)
                throw std::out_of_range("rows_lookup: id " + std::to_string(id) +
                                        " outside table of " + std::to_string(v));
        Tensor<T> C({m, d});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j) C.at(i, j) = Tab.at(ids[std::size_t(i)], j);
        NodeId out = push(std::move(C), needs(table));
        auto ids_p = std::make_shared<std::vector<int>>(std::move(ids));
        nodes_[out].back = [this, table, out, m, d, ids_p]() {
            if (!needs(table)) return;
            const auto& g = nodes_[out].grad;
            auto& gt = nodes_[table].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < d; ++j)
                    gt[std::size_t((*ids_p)[std::size_t(i)]) * std::size_t(d) + std::size_t(j)] +=
                        g[std::size_t(i) * std::size_t(d) + std::size_t(j)];
        };
        return out;
    }

    // gathers a (2r+1, d_head) table into (len, len, d_head) by clipped offset
    NodeId rel_lookup(NodeId table, std::vector<int> clipped, int len, int r_clip) {
        const Tensor<T>& Tab = val2(table, "rel_lookup table");
        if (Tab.dim(0) != 2 * r_clip + 1)
            throw std::invalid_argument("ShapeMismatch: relative table row count");
        if (int(clipped.size()) != len * len)
            throw std::invalid_argument("ShapeMismatch: relative index matrix");
        const int d = Tab.dim(1);
        Tensor<T> C({len, len, d});
        for (std::size_t p = 0; p < clipped.size(); ++p) {
            int rel = clipped[p];
            if (rel < -r_clip || rel > r_clip)
                throw std::out_of_range("IndexOutOfClipRange: relative index " + std::to_string(rel));
            const T* row = Tab.data.data() + std::size_t(rel + r_clip) * std::size_t(d);
            T* dst = C.data.data() + p * std::size_t(d);
            for (int t = 0; t < d; ++t) dst[std::size_t(t)] = row[std::size_t(t)];
        }
        NodeId out = push(std::move(C), needs(table));
        auto idx_p = std::make_shared<std::vector<int>>(std::move(clipped));
        nodes_[out].back = [this, table, out, d, r_clip, idx_p]() {
            if (!needs(table)) return;
            const auto& g = nodes_[out].grad;
            auto& gt = nodes_[table].grad;
            for (std::size_t p = 0; p < idx_p->size(); ++p) {
                std::size_t row = std::size_t((*idx_p)[p] + r_clip);
                for (int t = 0; t < d; ++t)
                    gt[row * std::size_t(d) + std::size_t(t)] += g[p * std::size_t(d) + std::size_t(t)];
            }
        };
        return out;
    }

    NodeId slice_cols(NodeId a, int c0, int c1) {
        const Tensor<T>& A = val2(a, "slice_cols");
        const int m = A.dim(0), n = A.dim(1);
        if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("ShapeMismatch: column slice");
        const int w = c1 - c0;
        Tensor<T> C({m, w});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) C.at(i, j) = A.at(i, c0 + j);
        NodeId out = push(std::move(C), needs(a));
        nodes_[out].back = [this, a, out, m, n, c0, w]() {
            if (!needs(a)) return;
            const auto& g = nodes_[out].grad;
            auto& ga = nodes_[a].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ga[std::size_t(i) * std::size_t(n) + std::size_t(c0 + j)] +=
                        g[std::size_t(i) * std::size_t(w) + std::size_t(j)];
        };
        return out;
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
        const int m = val2(parts[0], "concat_cols").dim(0);
        int total = 0;
        bool any = false;
        for (NodeId p : parts) {
            const Tensor<T>& P = val2(p, "concat_cols part");
            if (P.dim(0) != m) throw std::invalid_argument("ShapeMismatch: concat rows");
            total += P.dim(1);
            any = any || needs(p);
        }
        Tensor<T> C({m, total});
        int off = 0;
        for (NodeId p : parts) {
            const Tensor<T>& P = nodes_[p].value;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < P.dim(1); ++j) C.at(i, off + j) = P.at(i, j);
            off += P.dim(1);
        }
        NodeId out = push(std::move(C), any);
        auto parts_p = std::make_shared<std::vector<NodeId>>(parts);
        nodes_[out].back = [this, out, m, total, parts_p]() {
            const auto& g = nodes_[out].grad;
            int off = 0;
            for (NodeId p : *parts_p) {
                const int w = nodes_[p].value.dim(1);
                if (needs(p)) {
                    auto& gp = nodes_[p].grad;
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            gp[std::size_t(i) * std::size_t(w) + std::size_t(j)] +=
                                g[std::size_t(i) * std::size_t(total) + std::size_t(off + j)];
                }
                off += w;
            }
        };
        return out;
    }

    // attention logits: e(i,j) = q_i . (k_j + rel(i,j,:)) * inv_scale
    NodeId attn_logits(NodeId q, NodeId k, NodeId rel, T inv_scale) {
        const Tensor<T>& Q = val2(q, "attn_logits q");
        const Tensor<T>& K = val2(k, "attn_logits k");
        if (!Q.same_shape(K)) throw std::invalid_argument("ShapeMismatch: q/k shapes");
        const int I = Q.dim(0), d = Q.dim(1);
        const bool with_rel = rel != npos;
        if (with_rel) {
            const Tensor<T>& R = nodes_.at(rel).value;
            if (R.ndim() != 3 || R.dim(0) != I || R.dim(1) != I || R.dim(2) != d)
                throw std::invalid_argument("ShapeMismatch: relative key tensor");
        }
        Tensor<T> C({I, I});
        for (int i = 0; i < I; ++i)
            for (int j = 0; j < I; ++j) {
                double s = 0;
                if (with_rel) {
                    const Tensor<T>& R = nodes_[rel].value;
                    for (int t = 0; t < d; ++t)
                        s += double(Q.at(i, t)) * (double(K.at(j, t)) + double(R.at(i, j, t)));
                } else {
                    for (int t = 0; t < d; ++t) s += double(Q.at(i, t)) * double(K.at(j, t));
                }
                C.at(i, j) = T(s * double(inv_scale));
            }
        bool ng = needs(q) || needs(k) || (with_rel && needs(rel));
        NodeId out = push(std::move(C), ng);
        nodes_[out].back = [this, q, k, rel, out, I, d, inv_scale, with_rel]() {
            const auto& g = nodes_[out].grad;
            const Tensor<T>& Q = nodes_[q].value;
            const Tensor<T>& K = nodes_[k].value;
            for (int i = 0; i < I; ++i)
                for (int j = 0; j < I; ++j) {
                    const double gij = double(g[std::size_t(i) * std::size_t(I) + std::size_t(j)]) * double(inv_scale);
                    if (gij == 0.0) continue;
                    if (needs(q)) {
                        auto& gq = nodes_[q].grad;
                        for (int t = 0; t < d; ++t) {
                            double kt = double(K.at(j, t));
                            if (with_rel) kt += double(nodes_[rel].value.at(i, j, t));
                            gq[std::size_t(i) * std::size_t(d) + std::size_t(t)] += T(gij * kt);
                        }
                    }
                    if (needs(k)) {
                        auto& gk = nodes_[k].grad;
                        for (int t = 0; t < d; ++t)
                            gk[std::size_t(j) * std::size_t(d) + std::size_t(t)] += T(gij * double(Q.at(i, t)));
                    }
                    if (with_rel && needs(rel)) {
                        auto& gr = nodes_[rel].grad;
                        for (int t = 0; t < d; ++t)
                            gr[(std::size_t(i) * std::size_t(I) + std::size_t(j)) * std::size_t(d) + std::size_t(t)] +=
                                T(gij * double(Q.at(i, t)));
                    }
                }
        };
        return out;
    }

    // attention mix: o(i,:) = sum_j w(i,j) * (v_j + rel(i,j,:))
    NodeId attn_mix(NodeId w, NodeId v, NodeId rel) {
        const Tensor<T>& W = val2(w, "attn_mix weights");
        const Tensor<T>& V = val2(v, "attn_mix values");
        const int I = W.dim(0);
        if (W.dim(1) != I || V.dim(0) != I) throw std::invalid_argument("ShapeMismatch: attention mix");
        const int d = V.dim(1);
        const bool with_rel = rel != npos;
        if (with_rel) {
            const Tensor<T>& R = nodes_.at(rel).value;
            if (R.ndim() != 3 || R.dim(0) != I || R.dim(1) != I || R.dim(2) != d)
                throw std::invalid_argument("ShapeMismatch: relative value tensor");
        }
        Tensor<T> C({I, d});
        std::vector<double> acc(std::size_t(d), 0.0);
        for (int i = 0; i < I; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int j = 0; j < I; ++j) {
                const double wij = double(W.at(i, j));
                for (int t = 0; t < d; ++t) {
                    double vt = double(V.at(j, t));
                    if (with_rel) vt += double(nodes_[rel].value.at(i, j, t));
                    acc[std::size_t(t)] += wij * vt;
                }
            }
            for (int t = 0; t < d; ++t) C.at(i, t) = T(acc[std::size_t(t)]);
        }
        bool ng = needs(w) || needs(v) || (with_rel && needs(rel));
        NodeId out = push(std::move(C), ng);
        nodes_[out].back = [this, w, v, rel, out, I, d, with_rel]() {
            const auto& g = nodes_[out].grad;
            const Tensor<T>& W = nodes_[w].value;
            const Tensor<T>& V = nodes_[v].value;
            for (int i = 0; i < I; ++i)
                for (int j = 0; j < I; ++j) {
                    const double wij = double(W.at(i, j));
                    if (needs(w)) {
                        double s = 0;
                        for (int t = 0; t < d; ++t) {
                            double vt = double(V.at(j, t));
                            if (with_rel) vt += double(nodes_[rel].value.at(i, j, t));
                            s += double(g[std::size_t(i) * std::size_t(d) + std::size_t(t)]) * vt;
                        }
                        nodes_[w].grad[std::size_t(i) * std::size_t(I) + std::size_t(j)] += T(s);
                    }
                    if (needs(v)) {
                        auto& gv = nodes_[v].grad;
                        for (int t = 0; t < d; ++t)
                            gv[std::size_t(j) * std::size_t(d) + std::size_t(t)] +=
                                T(wij * double(g[std::size_t(i) * std::size_t(d) + std::size_t(t)]));
                    }
                    if (with_rel && needs(rel)) {
                        auto& gr = nodes_[rel].grad;
                        for (int t = 0; t < d; ++t)
                            gr[(std::size_t(i) * std::size_t(I) + std::size_t(j)) * std::size_t(d) + std::size_t(t)] +=
                                T(wij * double(g[std::size_t(i) * std::size_t(d) + std::size_t(t)]));
                    }
                }
        };
        return out;
    }

    // mean cross-entropy over rows of logits(m, C) against integer targets
    NodeId cross_entropy_mean(NodeId logits, std::vector<int> targets) {
        const Tensor<T>& L = val2(logits, "cross_entropy logits");
        const int m = L.dim(0), c = L.dim(1);
        if (int(targets.size()) != m)
            throw std::invalid_argument("ShapeMismatch: target count vs logit rows");
        for (int t : targets)
            if (t < 0 || t >= c) throw std::out_of_range("cross_entropy: target outside classes");
        auto probs = std::make_shared<std::vector<double>>(std::size_t(m) * std::size_t(c));
        double loss = 0;
        for (int i = 0; i < m; ++i) {
            double mx = double(L.at(i, 0));
            for (int j = 1; j < c; ++j) mx = std::max(mx, double(L.at(i, j)));
            double denom = 0;
            for (int j = 0; j < c; ++j) denom += std::exp(double(L.at(i, j)) - mx);
            for (int j = 0; j < c; ++j)
                (*probs)[std::size_t(i) * std::size_t(c) + std::size_t(j)] =
                    std::exp(double(L.at(i, j)) - mx) / denom;
            loss += mx + std::log(denom) - double(L.at(i, targets[std::size_t(i)]));
        }
        loss /= m;
        Tensor<T> out_t({1}, {T(loss)});
        NodeId out = push(std::move(out_t), needs(logits));
        auto tg = std::make_shared<std::vector<int>>(std::move(targets));
        nodes_[out].back = [this, logits, out, m, c, probs, tg]() {
            if (!needs(logits)) return;
            const T g0 = nodes_[out].grad[0];
            auto& gl = nodes_[logits].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) {
                    double p = (*probs)[std::size_t(i) * std::size_t(c) + std::size_t(j)];
                    double onehot = (*tg)[std::size_t(i)] == j ? 1.0 : 0.0;
                    gl[std::size_t(i) * std::size_t(c) + std::size_t(j)] +=
                        T(double(g0) * (p - onehot) / double(m));
                }
        };
        return out;
    }

    // scalar sum of coeff (x) elementwise products; coeff is a plain tensor
    NodeId weighted_sum(NodeId a, Tensor<T> coeff) {
        const Tensor<T>& A = nodes_.at(a).value;
        if (!A.same_shape(coeff)) throw std::invalid_argument("ShapeMismatch: weighted_sum coeff");
        double s = 0;
        for (std::size_t i = 0; i < A.data.size(); ++i) s += double(A.data[i]) * double(coeff.data[i]);
        Tensor<T> out_t({1}, {T(s)});
        NodeId out = push(std::move(out_t), needs(a));
        auto cf = std::make_shared<Tensor<T>>(std::move(coeff));
        nodes_[out].back = [this, a, out, cf]() {
            if (!needs(a)) return;
            const T g0 = nodes_[out].grad[0];
            auto& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g0 * cf->data[i];
        };
        return out;
    }

    NodeId sum_all(NodeId a) {
        const Tensor<T>& A = nodes_.at(a).value;
        double s = 0;
        for (T v : A.data) s += double(v);
        Tensor<T> out_t({1}, {T(s)});
        NodeId out = push(std::move(out_t), needs(a));
        nodes_[out].back = [this, a, out]() {
            if (!needs(a)) return;
            const T g0 = nodes_[out].grad[0];
            auto& ga = nodes_[a].grad;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g0;
        };
        return out;
    }

    // bilinear pair scores: logit(p, c) = h_i^T W_c h_j + b_c for pairs (i, j)
    NodeId bilinear_pair(NodeId h, NodeId w3, NodeId bias,
                         std::vector<std::pair<int, int>> pairs) {
        const Tensor<T>& H = val2(h, "bilinear h");
        const Tensor<T>& W = nodes_.at(w3).value;
        const Tensor<T>& B = nodes_.at(bias).value;
        if (W.ndim() != 3 || W.dim(1) != H.dim(1) || W.dim(2) != H.dim(1))
            throw std::invalid_argument("ShapeMismatch: bilinear weight");
        const int c = W.dim(0), d = H.dim(1), I = H.dim(0);
        if (B.ndim() != 1 || B.dim(0) != c) throw std::invalid_argument("ShapeMismatch: bilinear bias");
        const int np = int(pairs.size());
        for (auto& [pi, pj] : pairs)
            if (pi < 0 || pi >= I || pj < 0 || pj >= I)
                throw std::out_of_range("bilinear_pair: index outside sequence");
        Tensor<T> C({np, c});
        for (int p = 0; p < np; ++p) {
            const int pi = pairs[std::size_t(p)].first, pj = pairs[std::size_t(p)].second;
            for (int cc = 0; cc < c; ++cc) {
                double s = double(B.at(cc));
                for (int a2 = 0; a2 < d; ++a2) {
                    double hi = double(H.at(pi, a2));
                    if (hi == 0.0) continue;
                    double inner = 0;
                    for (int b2 = 0; b2 < d; ++b2) inner += double(W.at(cc, a2, b2)) * double(H.at(pj, b2));
                    s += hi * inner;
                }
                C.at(p, cc) = T(s);
            }
        }
        bool ng = needs(h) || needs(w3) || needs(bias);
        NodeId out = push(std::move(C), ng);
        auto pp = std::make_shared<std::vector<std::pair<int, int>>>(std::move(pairs));
        nodes_[out].back = [this, h, w3, bias, out, c, d, pp]() {
            const auto& g = nodes_[out].grad;
            const Tensor<T>& H = nodes_[h].value;
            const Tensor<T>& W = nodes_[w3].value;
            const int np = int(pp->size());
            for (int p = 0; p < np; ++p) {
                const int pi = (*pp)[std::size_t(p)].first, pj = (*pp)[std::size_t(p)].second;
                for (int cc = 0; cc < c; ++cc) {
                    const double gpc = double(g[std::size_t(p) * std::size_t(c) + std::size_t(cc)]);
                    if (gpc == 0.0) continue;
                    if (needs(bias)) nodes_[bias].grad[std::size_t(cc)] += T(gpc);
                    for (int a2 = 0; a2 < d; ++a2) {
                        const double hi = double(H.at(pi, a2));
                        double wh_j = 0;   // (W_c h_j)[a2]
                        for (int b2 = 0; b2 < d; ++b2) {
                            const double w_ab = double(W.at(cc, a2, b2));
                            const double hj = double(H.at(pj, b2));
                            wh_j += w_ab * hj;
                            if (needs(w3))
                                nodes_[w3].grad[(std::size_t(cc) * std::size_t(d) + std::size_t(a2)) * std::size_t(d) +
                                                std::size_t(b2)] += T(gpc * hi * hj);
                            if (needs(h))
                                nodes_[h].grad[std::size_t(pj) * std::size_t(d) + std::size_t(b2)] +=
                                    T(gpc * hi * w_ab);
                        }
                        if (needs(h))
                            nodes_[h].grad[std::size_t(pi) * std::size_t(d) + std::size_t(a2)] += T(gpc * wh_j);
                    }
                }
            }
        };
        return out;
    }

    // seeds the scalar loss with gradient 1 and walks the tape in reverse,
    // then flushes parameter-leaf gradients into their bound tensors
    void backward(NodeId loss) {
        if (nodes_.empty()) throw std::logic_error("NoRecordedForward: tape is empty");
        if (loss >= nodes_.size()) throw std::logic_error("NoRecordedForward: unknown node");
        if (nodes_[loss].value.numel() != 1)
            throw std::invalid_argument("ShapeMismatch: backward needs a scalar loss");
        if (ran_backward_)
            throw std::logic_error("backward already ran on this tape");
        ran_backward_ = true;
        if (!nodes_[loss].needs_grad) return;  // nothing learnable upstream
        nodes_[loss].grad[0] = T(1);
        for (std::size_t id = loss + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.needs_grad) continue;
            if (n.back) n.back();
            if (n.bound != nullptr)
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }

private:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        bool needs_grad = false;
        Tensor<T>* bound = nullptr;
        std::function<void()> back;
    };

    std::vector<Node> nodes_;
    std::vector<NodeId> softmax_ids_;
    bool ran_backward_ = false;

    bool needs(NodeId id) const { return nodes_[id].needs_grad; }

    const Tensor<T>& val2(NodeId id, const char* who) const {
        const Tensor<T>& t = nodes_.at(id).value;
        if (t.ndim() != 2)
            throw std::invalid_argument(std::string("ShapeMismatch: ") + who + " must be 2-D");
        return t;
    }

    NodeId push(Tensor<T> value, bool needs_grad) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        if (needs_grad) n.grad.assign(n.value.numel(), T(0));
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }
};

}  // namespace treepos
