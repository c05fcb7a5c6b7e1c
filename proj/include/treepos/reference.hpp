#pragma once

#include <queue>
#include <set>
#include <vector>

namespace treepos::reference {

// Straight-line reference implementations used to cross-check the production
// position code. Everything here works from a raw parent array and recomputes
// depths by breadth-first search and ancestry from explicit ancestor sets, so
// none of it shares a code path with deptree/posenc.

inline std::vector<int> bfs_depths(const std::vector<int>& parent) {
    const int n = int(parent.size());
    auto children = std::vector<std::vector<int>>(std::size_t(n));
    int root = -1;
    for (int i = 0; i < n; ++i) {
        if (parent[std::size_t(i)] < 0)
            root = i;
        else
            children[std::size_t(parent[std::size_t(i)])].push_back(i);
    }
    std::vector<int> depth(std::size_t(n), -1);
    std::queue<int> q;
    depth[std::size_t(root)] = 0;
    q.push(root);
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int c : children[std::size_t(u)]) {
            depth[std::size_t(c)] = depth[std::size_t(u)] + 1;
            q.push(c);
        }
    }
    return depth;
}

// Shortest-path length between a and b over the undirected tree, by BFS.
inline int bfs_distance(const std::vector<int>& parent, int a, int b) {
    const int n = int(parent.size());
    auto adj = std::vector<std::vector<int>>(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        int p = parent[std::size_t(i)];
        if (p >= 0) {
            adj[std::size_t(i)].push_back(p);
            adj[std::size_t(p)].push_back(i);
        }
    }
    std::vector<int> dist(std::size_t(n), -1);
    std::queue<int> q;
    dist[std::size_t(a)] = 0;
    q.push(a);
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj[std::size_t(u)]) {
            if (dist[std::size_t(v)] < 0) {
                dist[std::size_t(v)] = dist[std::size_t(u)] + 1;
                q.push(v);
            }
        }
    }
    return dist[std::size_t(b)];
}

// Proper-plus-self ancestor set of each node, by walking parent links.
inline std::vector<std::set<int>> ancestor_sets(const std::vector<int>& parent) {
    const int n = int(parent.size());
    auto anc = std::vector<std::set<int>>(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        int t = i;
        while (t >= 0) {
            anc[std::size_t(i)].insert(t);
            t = parent[std::size_t(t)];
        }
    }
    return anc;
}

inline std::vector<int> abs_structural_oracle(const std::vector<int>& parent,
                                              const std::vector<int>& word_of_subword,
                                              bool has_eos) {
    std::vector<int> depth = bfs_depths(parent);
    int max_depth = 0;
    for (int d : depth) max_depth = d > max_depth ? d : max_depth;
    std::vector<int> out;
    for (int w : word_of_subword) out.push_back(depth[std::size_t(w)]);
    if (has_eos) out.push_back(max_depth + 1);
    return out;
}

// Row-major relative structural matrix. r_clip < 0 means unclipped.
// literal_edge selects the single-edge reading of rule 1 instead of the
// ancestor-path reading.
inline std::vector<int> rel_structural_oracle(const std::vector<int>& parent,
                                              const std::vector<int>& word_of_subword,
                                              bool has_eos, bool literal_edge, int r_clip) {
    const std::vector<int> abs = abs_structural_oracle(parent, word_of_subword, has_eos);
    const auto anc = ancestor_sets(parent);
    const int len = int(abs.size());
    const int n_sub = int(word_of_subword.size());
    std::vector<int> m(std::size_t(len) * std::size_t(len), 0);
    for (int i = 0; i < len; ++i) {
        for (int j = 0; j < len; ++j) {
            if (i == j) continue;
            int wi = i < n_sub ? word_of_subword[std::size_t(i)] : -1;
            int wj = j < n_sub ? word_of_subword[std::size_t(j)] : -1;
            int v = 0;
            if (wi >= 0 && wj >= 0 && wi == wj) {
                v = 0;
            } else {
                bool same_path = false;
                if (wi >= 0 && wj >= 0) {
                    if (literal_edge)
                        same_path = parent[std::size_t(wi)] == wj || parent[std::size_t(wj)] == wi;
                    else
                        same_path = anc[std::size_t(wi)].count(wj) > 0 ||
                                    anc[std::size_t(wj)].count(wi) > 0;
                }
                if (same_path) {
                    v = abs[std::size_t(i)] - abs[std::size_t(j)];
                } else {
                    int sign = i > j ? 1 : -1;
                    v = sign * (abs[std::size_t(i)] + abs[std::size_t(j)]);
                }
            }
            if (r_clip >= 0) {
                if (v > r_clip) v = r_clip;
                if (v < -r_clip) v = -r_clip;
            }
            m[std::size_t(i) * std::size_t(len) + std::size_t(j)] = v;
        }
    }
    return m;
}

}  // namespace treepos::reference
