#pragma once

#include "treepos/deptree.hpp"
#include "treepos/rng.hpp"

namespace treepos {

// Random tree over n tokens: each node attaches to a uniform earlier node.
inline std::vector<int> random_parent_links(Rng& rng, int n) {
    std::vector<int> parent(std::size_t(n), kRootParent);
    for (int t = 1; t < n; ++t) parent[std::size_t(t)] = rng.uniform_int(0, t - 1);
    return parent;
}

inline DepTree random_tree(Rng& rng, int n) { return make_tree(random_parent_links(rng, n)); }

// Same attachment process followed by a uniform relabeling of positions, so
// the root can sit anywhere and token order carries no depth information.
inline DepTree random_permuted_tree(Rng& rng, int n) {
    std::vector<int> parent = random_parent_links(rng, n);
    std::vector<int> perm(std::size_t(n), 0);
    for (int i = 0; i < n; ++i) perm[std::size_t(i)] = i;
    rng.shuffle(perm);
    std::vector<int> relabeled(std::size_t(n), 0);
    for (int t = 0; t < n; ++t)
        relabeled[std::size_t(perm[std::size_t(t)])] =
            parent[std::size_t(t)] == kRootParent ? kRootParent : perm[std::size_t(parent[std::size_t(t)])];
    return make_tree(std::move(relabeled));
}

// Random sub-word alignment: each word expands to 1..max_split sub-words.
inline SubwordAlignment random_alignment(Rng& rng, int n_words, int max_split, bool with_eos) {
    SubwordAlignment a;
    for (int w = 0; w < n_words; ++w) {
        int reps = rng.uniform_int(1, max_split);
        for (int s = 0; s < reps; ++s) a.word_of_subword.push_back(w);
    }
    a.has_eos = with_eos;
    return a;
}

}  // namespace treepos
