#include "treepos/posenc.hpp"

#include <algorithm>
#include <cmath>

namespace treepos {

std::string to_string(FusionMode m) {
    return m == FusionMode::nonlinear ? "nonlinear" : "addition";
}

std::string to_string(Rule1 r) {
    return r == Rule1::ancestor_path ? "ancestor" : "edge";
}

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "nonlinear") return FusionMode::nonlinear;
    if (s == "addition") return FusionMode::addition;
    throw std::invalid_argument("unknown fusion mode '" + s + "'");
}

Rule1 rule1_from_string(const std::string& s) {
    if (s == "ancestor" || s == "ancestor_path") return Rule1::ancestor_path;
    if (s == "edge" || s == "literal_edge") return Rule1::literal_edge;
    throw std::invalid_argument("unknown rule1 interpretation '" + s + "'");
}

void PositionConfig::check() const {
    if (d_model <= 0 || d_model % 2 != 0)
        throw std::invalid_argument("OddDimension: d_model must be positive and even");
    if (r_clip < 1) throw std::invalid_argument("r_clip must be >= 1");
}

std::vector<double> sinusoidal_abs(int pos, int d_model) {
    if (d_model <= 0 || d_model % 2 != 0)
        throw std::invalid_argument("OddDimension: sinusoidal encoding needs even d_model");
    if (pos < 0) throw std::invalid_argument("position must be non-negative");
    std::vector<double> out(std::size_t(d_model), 0.0);
    for (int i = 0; 2 * i < d_model; ++i) {
        double angle = double(pos) / std::pow(10000.0, double(2 * i) / double(d_model));
        out[std::size_t(2 * i)] = std::sin(angle);
        out[std::size_t(2 * i + 1)] = std::cos(angle);
    }
    return out;
}

int rel_seq_index(int i, int j, int r_clip) {
    return std::clamp(j - i, -r_clip, r_clip);
}

std::vector<int> abs_structural(const DepTree& tree, const SubwordAlignment& align) {
    std::vector<int> out;
    out.reserve(std::size_t(align.total_len()));
    for (int w : align.word_of_subword) {
        if (w < 0 || w >= tree.n)
            throw std::out_of_range("AlignmentOutOfRange: sub-word maps to word " +
                                    std::to_string(w) + " of " + std::to_string(tree.n));
        out.push_back(tree.depth[std::size_t(w)]);
    }
    if (align.has_eos) {
        int max_depth = 0;
        for (int d : tree.depth) max_depth = std::max(max_depth, d);
        out.push_back(max_depth + 1);
    }
    return out;
}

namespace {

int sign_of(int x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

bool same_path(const DepTree& tree, int wi, int wj, Rule1 rule1) {
    if (rule1 == Rule1::literal_edge)
        return tree.parent[std::size_t(wi)] == wj || tree.parent[std::size_t(wj)] == wi;
    return is_on_same_root_path(tree, wi, wj);
}

int rel_structural_core(const DepTree& tree, const std::vector<int>& abs,
                        const SubwordAlignment& align, int i, int j, Rule1 rule1) {
    if (i == j) return 0;
    const int wi = align.word_at(i);
    const int wj = align.word_at(j);
    if (wi >= 0 && wj >= 0 && wi == wj) return 0;  // sub-words of one word
    const int ai = abs[std::size_t(i)];
    const int aj = abs[std::size_t(j)];
    // EOS sits on no tree path, so any pair involving it falls to rule 2
    if (wi >= 0 && wj >= 0 && same_path(tree, wi, wj, rule1)) return ai - aj;
    return sign_of(i - j) * (ai + aj);
}

void check_subword_index(const SubwordAlignment& align, int i, const char* who) {
    if (i < 0 || i >= align.total_len())
        throw TreeError(TreeErrorKind::IndexOutOfRange,
                        std::string(who) + ": sub-word position " + std::to_string(i) +
                            " outside [0," + std::to_string(align.total_len()) + ")");
}

}  // namespace

int rel_structural_unclipped(const DepTree& tree, const SubwordAlignment& align, int i, int j,
                             Rule1 rule1) {
    check_subword_index(align, i, "rel_structural");
    check_subword_index(align, j, "rel_structural");
    const std::vector<int> abs = abs_structural(tree, align);
    return rel_structural_core(tree, abs, align, i, j, rule1);
}

int rel_structural(const DepTree& tree, const SubwordAlignment& align, int i, int j,
                   const PositionConfig& cfg) {
    cfg.check();
    int v = rel_structural_unclipped(tree, align, i, j, cfg.rule1);
    return std::clamp(v, -cfg.r_clip, cfg.r_clip);
}

std::vector<int> rel_structural_matrix(const DepTree& tree, const SubwordAlignment& align,
                                       const PositionConfig& cfg) {
    cfg.check();
    const int len = align.total_len();
    const std::vector<int> abs = abs_structural(tree, align);
    std::vector<int> m(std::size_t(len) * std::size_t(len), 0);
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j)
            m[std::size_t(i) * std::size_t(len) + std::size_t(j)] =
                std::clamp(rel_structural_core(tree, abs, align, i, j, cfg.rule1),
                           -cfg.r_clip, cfg.r_clip);
    return m;
}

PositionAnnotation annotate(const DepTree& tree, const SubwordAlignment& align,
                            const PositionConfig& cfg) {
    cfg.check();
    PositionAnnotation ann;
    ann.len = align.total_len();
    ann.r_clip = cfg.r_clip;
    ann.rule1 = cfg.rule1;
    ann.abs_seq.resize(std::size_t(ann.len));
    for (int k = 0; k < ann.len; ++k) ann.abs_seq[std::size_t(k)] = k;
    ann.abs_stru = abs_structural(tree, align);
    ann.rel_seq.resize(std::size_t(ann.len) * std::size_t(ann.len));
    for (int i = 0; i < ann.len; ++i)
        for (int j = 0; j < ann.len; ++j)
            ann.rel_seq[std::size_t(i) * std::size_t(ann.len) + std::size_t(j)] =
                rel_seq_index(i, j, cfg.r_clip);
    ann.rel_stru = rel_structural_matrix(tree, align, cfg);
    return ann;
}

nlohmann::json annotation_to_json(const PositionAnnotation& ann,
                                  const std::vector<std::string>& tokens) {
    nlohmann::json j;
    j["tokens"] = tokens;
    j["abs_seq"] = ann.abs_seq;
    j["abs_stru"] = ann.abs_stru;
    j["rel_seq"] = ann.rel_seq;
    j["rel_stru"] = ann.rel_stru;
    j["r_clip"] = ann.r_clip;
    j["rule1_interpretation"] = to_string(ann.rule1);
    return j;
}

PositionAnnotation annotation_from_json(const nlohmann::json& j) {
    PositionAnnotation ann;
    ann.abs_seq = j.at("abs_seq").get<std::vector<int>>();
    ann.abs_stru = j.at("abs_stru").get<std::vector<int>>();
    ann.rel_seq = j.at("rel_seq").get<std::vector<int>>();
    ann.rel_stru = j.at("rel_stru").get<std::vector<int>>();
    ann.r_clip = j.at("r_clip").get<int>();
    ann.rule1 = rule1_from_string(j.at("rule1_interpretation").get<std::string>());
    ann.len = int(ann.abs_seq.size());
    if (ann.rel_seq.size() != std::size_t(ann.len) * std::size_t(ann.len) ||
        ann.rel_stru.size() != ann.rel_seq.size() || ann.abs_stru.size() != ann.abs_seq.size())
        throw std::invalid_argument("ShapeMismatch: annotation fields disagree in length");
    return ann;
}

}  // namespace treepos
