#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "treepos/graph.hpp"
#include "treepos/posenc.hpp"
#include "treepos/rng.hpp"

#include "json.hpp"

namespace treepos {

// Model dimensions plus the four position flags selecting one of the nine
// ablation rows: (abs_seq, rel_seq, abs_stru, rel_stru).
struct EncoderConfig {
    int d_model = 64;
    int n_heads = 2;
    int n_layers = 2;
    int d_ffn = 128;
    int r_clip = 16;
    int vocab_size = 50;
    bool abs_seq_on = false;
    bool rel_seq_on = false;
    bool abs_stru_on = false;
    bool rel_stru_on = false;
    FusionMode fusion_mode = FusionMode::nonlinear;
    // relative tables are always shared across heads within a layer; this
    // additionally shares one set of tables across all layers
    bool share_rel_tables_across_layers = false;

    int d_head() const { return d_model / n_heads; }

    void check() const {
        if (d_model <= 0 || d_model % 2 != 0)
            throw std::invalid_argument("EncoderConfig: d_model must be positive and even");
        if (n_heads <= 0 || d_model % n_heads != 0)
            throw std::invalid_argument("EncoderConfig: d_model must divide by n_heads");
        if (n_layers <= 0 || d_ffn <= 0 || vocab_size <= 0 || r_clip < 1)
            throw std::invalid_argument("EncoderConfig: non-positive dimension");
    }

    // applies the flag pattern of an ablation row (1..9)
    void apply_row(int row) {
        if (row < 1 || row > 9) throw std::invalid_argument("ablation row must be 1..9");
        abs_seq_on = row >= 4;
        rel_seq_on = row >= 7;
        abs_stru_on = row == 2 || row == 5 || row == 6 || row == 8 || row == 9;
        rel_stru_on = row == 3 || row == 6 || row == 9;
    }

    std::string flags_string() const {
        auto b = [](bool v) { return v ? "1" : "0"; };
        return std::string(b(abs_seq_on)) + b(rel_seq_on) + b(abs_stru_on) + b(rel_stru_on);
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},       {"n_heads", n_heads},
                {"n_layers", n_layers},     {"d_ffn", d_ffn},
                {"r_clip", r_clip},         {"vocab_size", vocab_size},
                {"abs_seq_on", abs_seq_on}, {"rel_seq_on", rel_seq_on},
                {"abs_stru_on", abs_stru_on}, {"rel_stru_on", rel_stru_on},
                {"fusion_mode", to_string(fusion_mode)},
                {"share_rel_tables_across_layers", share_rel_tables_across_layers}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.d_ffn = j.at("d_ffn").get<int>();
        c.r_clip = j.at("r_clip").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.abs_seq_on = j.at("abs_seq_on").get<bool>();
        c.rel_seq_on = j.at("rel_seq_on").get<bool>();
        c.abs_stru_on = j.at("abs_stru_on").get<bool>();
        c.rel_stru_on = j.at("rel_stru_on").get<bool>();
        c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
        c.share_rel_tables_across_layers = j.at("share_rel_tables_across_layers").get<bool>();
        return c;
    }
};

// Named learnable tensors, ordered by name for deterministic iteration.
template <typename T>
class ParamStore {
public:
    Tensor<T>& create(const std::string& name, std::vector<int> shape) {
        auto [it, fresh] = entries_.emplace(name, Tensor<T>(std::move(shape)));
        if (!fresh) throw std::logic_error("duplicate parameter '" + name + "'");
        it->second.alloc_grad();
        return it->second;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("no parameter '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

    void zero_grads() {
        for (auto& [name, t] : entries_) t.zero_grad();
    }

    double grad_norm() const {
        double s = 0;
        for (const auto& [name, t] : entries_)
            for (T g : t.grad) s += double(g) * double(g);
        return std::sqrt(s);
    }

    std::size_t total_params() const {
        std::size_t s = 0;
        for (const auto& [name, t] : entries_) s += t.numel();
        return s;
    }

    std::map<std::string, Tensor<T>>& entries() { return entries_; }
    const std::map<std::string, Tensor<T>>& entries() const { return entries_; }

private:
    std::map<std::string, Tensor<T>> entries_;
};

namespace detail {

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (T& v : t.data) v = T(rng.uniform(lo, hi));
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (T& v : t.data) v = T(rng.normal() * stddev);
}

template <typename T>
void xavier_init(Tensor<T>& t, Rng& rng, int fan_in, int fan_out) {
    double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    fill_uniform(t, rng, -limit, limit);
}

}  // namespace detail

// Self-attention encoder over one sequence: token embeddings scaled by
// sqrt(d_model), an absolute-position pathway (sinusoidal sequential and/or
// structural, fused when both are active), then n_layers of post-norm blocks
// whose attention optionally adds relative sequential/structural key and
// value embeddings. Parameters live in an external ParamStore so several
// components (task heads, checkpoints) can share one registry.
//
// Every parameter the configuration family could use is always created, so
// two configs differing only in flags share identical initial weights and
// flag-disabled parameters simply receive zero gradient.
template <typename T>
class EncoderModel {
public:
    using NodeId = typename Graph<T>::NodeId;

    EncoderModel(const EncoderConfig& cfg, ParamStore<T>* store, Rng& rng)
        : cfg_(cfg), store_(store) {
        cfg_.check();
        init_params(rng);
    }

    const EncoderConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return *store_; }

    // embedding + absolute-position pathway (the representation fed to layer 0)
    NodeId input_representation(Graph<T>& g, const std::vector<int>& tokens,
                                const PositionAnnotation& ann) const {
        check_annotation(tokens, ann);
        const int len = int(tokens.size());
        const int d = cfg_.d_model;

        NodeId emb = g.rows_lookup(g.param(&store_->at("embed")), tokens);
        NodeId x = g.scale(emb, T(std::sqrt(double(d))));

        if (cfg_.abs_seq_on && cfg_.abs_stru_on) {
            if (cfg_.fusion_mode == FusionMode::addition) {
                Tensor<T> P({len, d});
                for (int i = 0; i < len; ++i) {
                    auto s = sinusoidal_abs(ann.abs_seq[std::size_t(i)], d);
                    auto u = sinusoidal_abs(ann.abs_stru[std::size_t(i)], d);
                    for (int j = 0; j < d; ++j) P.at(i, j) = T(s[std::size_t(j)] + u[std::size_t(j)]);
                }
                x = g.add(x, g.input(std::move(P)));
            } else {
                Tensor<T> C({len, 2 * d});
                for (int i = 0; i < len; ++i) {
                    auto s = sinusoidal_abs(ann.abs_seq[std::size_t(i)], d);
                    auto u = sinusoidal_abs(ann.abs_stru[std::size_t(i)], d);
                    for (int j = 0; j < d; ++j) {
                        C.at(i, j) = T(s[std::size_t(j)]);
                        C.at(i, d + j) = T(u[std::size_t(j)]);
                    }
                }
                NodeId fused = g.tanh_op(g.add_row_broadcast(
                    g.matmul_nt(g.input(std::move(C)), g.param(&store_->at("fuse.weight"))),
                    g.param(&store_->at("fuse.bias"))));
                x = g.add(x, fused);
            }
        } else if (cfg_.abs_seq_on || cfg_.abs_stru_on) {
            const std::vector<int>& pos = cfg_.abs_seq_on ? ann.abs_seq : ann.abs_stru;
            Tensor<T> P({len, d});
            for (int i = 0; i < len; ++i) {
                auto s = sinusoidal_abs(pos[std::size_t(i)], d);
                for (int j = 0; j < d; ++j) P.at(i, j) = T(s[std::size_t(j)]);
            }
            x = g.add(x, g.input(std::move(P)));
        }
        return x;
    }

    NodeId forward(Graph<T>& g, const std::vector<int>& tokens,
                   const PositionAnnotation& ann) const {
        NodeId x = input_representation(g, tokens, ann);
        const int len = int(tokens.size());
        for (int layer = 0; layer < cfg_.n_layers; ++layer)
            x = layer_forward(g, x, layer, len, ann);
        return x;
    }

    std::string rel_param_name(int layer, RelRole role, RelScheme scheme) const {
        std::string base = cfg_.share_rel_tables_across_layers
                               ? std::string("relshared")
                               : "L" + std::to_string(layer);
        base += role == RelRole::key ? ".relk" : ".relv";
        base += scheme == RelScheme::sequential ? ".seq" : ".stru";
        return base;
    }

private:
    EncoderConfig cfg_;
    ParamStore<T>* store_;

    void check_annotation(const std::vector<int>& tokens, const PositionAnnotation& ann) const {
        if (ann.len != int(tokens.size()) || ann.abs_seq.size() != tokens.size() ||
            ann.abs_stru.size() != tokens.size())
            throw std::invalid_argument(
                "ConfigMismatch: annotation length does not match the token count");
        if ((cfg_.rel_seq_on || cfg_.rel_stru_on) && !ann.has_rel())
            throw std::invalid_argument(
                "ConfigMismatch: relative flags set but annotation lacks relative matrices");
        if ((cfg_.rel_seq_on || cfg_.rel_stru_on) && ann.r_clip != cfg_.r_clip)
            throw std::invalid_argument("ConfigMismatch: annotation r_clip " +
                                        std::to_string(ann.r_clip) + " vs config " +
                                        std::to_string(cfg_.r_clip));
        for (int t : tokens)
            if (t < 0 || t >= cfg_.vocab_size)
                throw std::out_of_range("token id outside vocabulary");
    }

    NodeId rel_stack(Graph<T>& g, int layer, RelRole role, const PositionAnnotation& ann,
                     int len) const {
        NodeId acc = Graph<T>::npos;
        auto add_scheme = [&](RelScheme scheme, const std::vector<int>& idx) {
            NodeId table = g.param(&store_->at(rel_param_name(layer, role, scheme)));
            NodeId looked = g.rel_lookup(table, idx, len, cfg_.r_clip);
            acc = acc == Graph<T>::npos ? looked : g.add(acc, looked);
        };
        if (cfg_.rel_seq_on) add_scheme(RelScheme::sequential, ann.rel_seq);
        if (cfg_.rel_stru_on) add_scheme(RelScheme::structural, ann.rel_stru);
        return acc;
    }

    NodeId layer_forward(Graph<T>& g, NodeId x, int layer, int len,
                         const PositionAnnotation& ann) const {
        const std::string L = "L" + std::to_string(layer);
        const int dh = cfg_.d_head();
        const T inv_scale = T(1.0 / std::sqrt(double(dh)));

        NodeId q = g.matmul(x, g.param(&store_->at(L + ".wq")));
        NodeId k = g.matmul(x, g.param(&store_->at(L + ".wk")));
        NodeId v = g.matmul(x, g.param(&store_->at(L + ".wv")));

        NodeId rel_k = Graph<T>::npos, rel_v = Graph<T>::npos;
        if (cfg_.rel_seq_on || cfg_.rel_stru_on) {
            rel_k = rel_stack(g, layer, RelRole::key, ann, len);
            rel_v = rel_stack(g, layer, RelRole::value, ann, len);
        }

        std::vector<NodeId> heads;
        heads.reserve(std::size_t(cfg_.n_heads));
        for (int h = 0; h < cfg_.n_heads; ++h) {
            NodeId qh = g.slice_cols(q, h * dh, (h + 1) * dh);
            NodeId kh = g.slice_cols(k, h * dh, (h + 1) * dh);
            NodeId vh = g.slice_cols(v, h * dh, (h + 1) * dh);
            NodeId logits = g.attn_logits(qh, kh, rel_k, inv_scale);
            NodeId weights = g.softmax_rows(logits);
            heads.push_back(g.attn_mix(weights, vh, rel_v));
        }
        NodeId attn = g.matmul(g.concat_cols(heads), g.param(&store_->at(L + ".wo")));
        x = g.layer_norm_rows(g.add(x, attn), g.param(&store_->at(L + ".ln1.gain")),
                              g.param(&store_->at(L + ".ln1.bias")));

        NodeId mid = g.gelu(g.add_row_broadcast(g.matmul(x, g.param(&store_->at(L + ".ffn.w1"))),
                                                g.param(&store_->at(L + ".ffn.b1"))));
        NodeId ff = g.add_row_broadcast(g.matmul(mid, g.param(&store_->at(L + ".ffn.w2"))),
                                        g.param(&store_->at(L + ".ffn.b2")));
        return g.layer_norm_rows(g.add(x, ff), g.param(&store_->at(L + ".ln2.gain")),
                                 g.param(&store_->at(L + ".ln2.bias")));
    }

    void init_params(Rng& rng) {
        const int d = cfg_.d_model, dh = cfg_.d_head(), r = cfg_.r_clip;

        detail::fill_normal(store_->create("embed", {cfg_.vocab_size, d}), rng,
                            1.0 / std::sqrt(double(d)));
        detail::xavier_init(store_->create("fuse.weight", {d, 2 * d}), rng, 2 * d, d);
        store_->create("fuse.bias", {d});

        auto make_rel = [&](const std::string& name) {
            detail::fill_uniform(store_->create(name, {2 * r + 1, dh}), rng, -0.1, 0.1);
        };
        if (cfg_.share_rel_tables_across_layers) {
            make_rel("relshared.relk.seq");
            make_rel("relshared.relv.seq");
            make_rel("relshared.relk.stru");
            make_rel("relshared.relv.stru");
        }

        for (int layer = 0; layer < cfg_.n_layers; ++layer) {
            const std::string L = "L" + std::to_string(layer);
            detail::xavier_init(store_->create(L + ".wq", {d, d}), rng, d, d);
            detail::xavier_init(store_->create(L + ".wk", {d, d}), rng, d, d);
            detail::xavier_init(store_->create(L + ".wv", {d, d}), rng, d, d);
            detail::xavier_init(store_->create(L + ".wo", {d, d}), rng, d, d);
            store_->create(L + ".ln1.gain", {d}).fill(T(1));
            store_->create(L + ".ln1.bias", {d});
            detail::xavier_init(store_->create(L + ".ffn.w1", {d, cfg_.d_ffn}), rng, d, cfg_.d_ffn);
            store_->create(L + ".ffn.b1", {cfg_.d_ffn});
            detail::xavier_init(store_->create(L + ".ffn.w2", {cfg_.d_ffn, d}), rng, cfg_.d_ffn, d);
            store_->create(L + ".ffn.b2", {d});
            store_->create(L + ".ln2.gain", {d}).fill(T(1));
            store_->create(L + ".ln2.bias", {d});
            if (!cfg_.share_rel_tables_across_layers) {
                make_rel(L + ".relk.seq");
                make_rel(L + ".relv.seq");
                make_rel(L + ".relk.stru");
                make_rel(L + ".relv.stru");
            }
        }
    }
};

// One multi-head attention block on plain tensors: per head,
// e_ij = q_i . (k_j + relK_ij) / sqrt(d_head), weights = row softmax,
// o_i = sum_j w_ij (v_j + relV_ij); heads concatenated then projected.
// rel_k / rel_v, when given, are (I, I, d_head) and shared across heads.
template <typename T>
struct AttentionParams {
    const Tensor<T>& w_q;
    const Tensor<T>& w_k;
    const Tensor<T>& w_v;
    const Tensor<T>& w_o;
};

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& X, const AttentionParams<T>& p, int n_heads,
                            const Tensor<T>* rel_k = nullptr, const Tensor<T>* rel_v = nullptr) {
    if (X.ndim() != 2) throw std::invalid_argument("ShapeMismatch: input must be I x d");
    const int len = X.dim(0), d = X.dim(1);
    if (len < 1) throw std::invalid_argument("ShapeMismatch: empty sequence");
    if (n_heads <= 0 || d % n_heads != 0)
        throw std::invalid_argument("ShapeMismatch: d_model must divide by n_heads");
    const int dh = d / n_heads;
    for (const Tensor<T>* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o})
        if (w->ndim() != 2 || w->dim(0) != d || w->dim(1) != d)
            throw std::invalid_argument("ShapeMismatch: projection weights must be d x d");
    for (const Tensor<T>* r : {rel_k, rel_v}) {
        if (r == nullptr) continue;
        if (r->ndim() != 3 || r->dim(0) != len || r->dim(1) != len || r->dim(2) != dh)
            throw std::invalid_argument("ShapeMismatch: relative tensors must be I x I x d_head");
        if (!r->all_finite()) throw std::invalid_argument("NonFiniteInput: relative tensor");
    }
    if (!X.all_finite()) throw std::invalid_argument("NonFiniteInput: attention input");

    Graph<T> g;
    typename Graph<T>::NodeId x = g.input(X);
    auto q = g.matmul(x, g.input(p.w_q));
    auto k = g.matmul(x, g.input(p.w_k));
    auto v = g.matmul(x, g.input(p.w_v));
    auto rk = rel_k ? g.input(*rel_k) : Graph<T>::npos;
    auto rv = rel_v ? g.input(*rel_v) : Graph<T>::npos;
    std::vector<typename Graph<T>::NodeId> heads;
    const T inv_scale = T(1.0 / std::sqrt(double(dh)));
    for (int h = 0; h < n_heads; ++h) {
        auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        heads.push_back(g.attn_mix(g.softmax_rows(g.attn_logits(qh, kh, rk, inv_scale)), vh, rv));
    }
    return g.value(g.matmul(g.concat_cols(heads), g.input(p.w_o)));
}

}  // namespace treepos
