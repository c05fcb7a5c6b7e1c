#pragma once

#include <string>
#include <vector>

#include "treepos/deptree.hpp"
#include "treepos/tensor.hpp"

#include "json.hpp"

namespace treepos {

enum class FusionMode { nonlinear, addition };
enum class Rule1 { ancestor_path, literal_edge };

std::string to_string(FusionMode m);
std::string to_string(Rule1 r);
FusionMode fusion_mode_from_string(const std::string& s);
Rule1 rule1_from_string(const std::string& s);

struct PositionConfig {
    int d_model = 64;   // embedding width, must be even (sin/cos pairing)
    int r_clip = 16;    // relative positions saturate at +/- r_clip
    FusionMode fusion_mode = FusionMode::nonlinear;
    Rule1 rule1 = Rule1::ancestor_path;

    void check() const;
};

// Integer position structures for one sequence at sub-word granularity.
// rel_seq / rel_stru are len x len row-major matrices of clipped signed
// offsets; they may be empty when a caller only needs absolute positions.
struct PositionAnnotation {
    int len = 0;
    int r_clip = 16;
    Rule1 rule1 = Rule1::ancestor_path;
    std::vector<int> abs_seq;
    std::vector<int> abs_stru;
    std::vector<int> rel_seq;
    std::vector<int> rel_stru;

    bool has_rel() const { return !rel_seq.empty() && !rel_stru.empty(); }
    int rel_seq_at(int i, int j) const { return rel_seq[std::size_t(i) * std::size_t(len) + std::size_t(j)]; }
    int rel_stru_at(int i, int j) const { return rel_stru[std::size_t(i) * std::size_t(len) + std::size_t(j)]; }
};

// Sinusoidal absolute position vector: dimension 2i holds
// sin(pos / 10000^(2i/d)), dimension 2i+1 the matching cosine.
std::vector<double> sinusoidal_abs(int pos, int d_model);

// Relative sequential offset of key j with respect to query i, saturated to
// [-r_clip, r_clip].
int rel_seq_index(int i, int j, int r_clip);

// Tree depth per sub-word position (sub-words share the depth of their source
// word); the EOS slot, when present, gets 1 + the maximum tree depth.
std::vector<int> abs_structural(const DepTree& tree, const SubwordAlignment& align);

// Signed structural offset between sub-word positions i and j. Positions on
// one root-to-leaf path (per the rule-1 interpretation) use the depth
// difference; all other pairs, including any involving EOS, use
// sign(i - j) * (abs_i + abs_j).
int rel_structural_unclipped(const DepTree& tree, const SubwordAlignment& align, int i, int j,
                             Rule1 rule1);
int rel_structural(const DepTree& tree, const SubwordAlignment& align, int i, int j,
                   const PositionConfig& cfg);

// Row-major len x len matrix of clipped rel_structural values.
std::vector<int> rel_structural_matrix(const DepTree& tree, const SubwordAlignment& align,
                                       const PositionConfig& cfg);

PositionAnnotation annotate(const DepTree& tree, const SubwordAlignment& align,
                            const PositionConfig& cfg);

nlohmann::json annotation_to_json(const PositionAnnotation& ann,
                                  const std::vector<std::string>& tokens);
PositionAnnotation annotation_from_json(const nlohmann::json& j);

// ---- learnable position parameters ----

enum class RelRole { key, value };
enum class RelScheme { sequential, structural };

// (2*r_clip + 1) x d_head table of learnable relative-position embeddings,
// indexed by clipped offset + r_clip.
template <typename T>
struct RelEmbeddingTable {
    Tensor<T> entries;
    RelRole role = RelRole::key;
    RelScheme scheme = RelScheme::sequential;
    int r_clip = 16;

    RelEmbeddingTable() = default;
    RelEmbeddingTable(int r, int d_head, RelRole ro, RelScheme sc)
        : entries({2 * r + 1, d_head}), role(ro), scheme(sc), r_clip(r) {}
};

// Gathers table rows for a whole len x len index matrix -> len x len x d_head.
template <typename T>
Tensor<T> lookup_relative(const std::vector<int>& indices, int len,
                          const RelEmbeddingTable<T>& table) {
    if (int(indices.size()) != len * len)
        throw std::invalid_argument("ShapeMismatch: index matrix is not len x len");
    const int d_head = table.entries.dim(1);
    const int r = table.r_clip;
    Tensor<T> out({len, len, d_head});
    for (int i = 0; i < len; ++i) {
        for (int j = 0; j < len; ++j) {
            int rel = indices[std::size_t(i) * std::size_t(len) + std::size_t(j)];
            if (rel < -r || rel > r)
                throw std::out_of_range("IndexOutOfClipRange: relative index " +
                                        std::to_string(rel) + " exceeds clip " +
                                        std::to_string(r));
            const T* row = table.entries.data.data() + std::size_t(rel + r) * std::size_t(d_head);
            T* dst = out.data.data() +
                     (std::size_t(i) * std::size_t(len) + std::size_t(j)) * std::size_t(d_head);
            for (int t = 0; t < d_head; ++t) dst[std::size_t(t)] = row[std::size_t(t)];
        }
    }
    return out;
}

// Parameters of the nonlinear absolute fusion: tanh(W.concat(seq, stru) + b).
template <typename T>
struct FusionParams {
    Tensor<T> weight;  // d_model x (2*d_model)
    Tensor<T> bias;    // d_model

    FusionParams() = default;
    explicit FusionParams(int d_model) : weight({d_model, 2 * d_model}), bias({d_model}) {}
};

// Combines the sequential and structural absolute embeddings for one position.
template <typename T>
std::vector<T> fuse_absolute(const std::vector<T>& seq_vec, const std::vector<T>& stru_vec,
                             FusionMode mode, const FusionParams<T>* params) {
    if (seq_vec.size() != stru_vec.size())
        throw std::invalid_argument("ShapeMismatch: fused vectors differ in length");
    const int d = int(seq_vec.size());
    if (mode == FusionMode::addition) {
        std::vector<T> out(std::size_t(d), T(0));
        for (int i = 0; i < d; ++i) out[std::size_t(i)] = seq_vec[std::size_t(i)] + stru_vec[std::size_t(i)];
        return out;
    }
    if (params == nullptr)
        throw std::invalid_argument("ShapeMismatch: nonlinear fusion requires parameters");
    if (params->weight.ndim() != 2 || params->weight.dim(0) != d || params->weight.dim(1) != 2 * d ||
        params->bias.numel() != std::size_t(d))
        throw std::invalid_argument("ShapeMismatch: fusion parameter shapes");
    std::vector<T> out(std::size_t(d), T(0));
    for (int r = 0; r < d; ++r) {
        double acc = double(params->bias.at(r));
        for (int c = 0; c < d; ++c) acc += double(params->weight.at(r, c)) * double(seq_vec[std::size_t(c)]);
        for (int c = 0; c < d; ++c) acc += double(params->weight.at(r, d + c)) * double(stru_vec[std::size_t(c)]);
        out[std::size_t(r)] = T(std::tanh(acc));
    }
    return out;
}

}  // namespace treepos
