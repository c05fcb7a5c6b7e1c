#include "treepos/deptree.hpp"

#include <charconv>
#include <sstream>

namespace treepos {

namespace {

void check_index(const DepTree& tree, int i, const char* who) {
    if (i < 0 || i >= tree.n)
        throw TreeError(TreeErrorKind::IndexOutOfRange,
                        std::string(who) + ": token index " + std::to_string(i) +
                            " outside [0," + std::to_string(tree.n) + ")");
}

// Walks every parent chain once, assigning depths and detecting cycles.
// state: 0 = unvisited, 1 = on the current chain, 2 = finished.
std::vector<int> compute_depths(const std::vector<int>& parent, int root) {
    const int n = int(parent.size());
    std::vector<int> depth(std::size_t(n), -1);
    std::vector<int> state(std::size_t(n), 0);
    std::vector<int> chain;
    for (int start = 0; start < n; ++start) {
        if (state[std::size_t(start)] == 2) continue;
        chain.clear();
        int t = start;
        while (true) {
            if (state[std::size_t(t)] == 1)
                throw TreeError(TreeErrorKind::CycleDetected,
                                "CycleDetected: parent links loop through token " +
                                    std::to_string(t));
            if (state[std::size_t(t)] == 2) break;
            state[std::size_t(t)] = 1;
            chain.push_back(t);
            if (t == root) {
                depth[std::size_t(t)] = 0;
                break;
            }
            t = parent[std::size_t(t)];
        }
        // unwind: chain back determines depths from the terminus
        for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
            int u = *it;
            if (depth[std::size_t(u)] < 0)
                depth[std::size_t(u)] = depth[std::size_t(parent[std::size_t(u)])] + 1;
            state[std::size_t(u)] = 2;
        }
    }
    return depth;
}

}  // namespace

DepTree make_tree(std::vector<int> parent, std::vector<std::string> deprel,
                  std::vector<std::string> form) {
    const int n = int(parent.size());
    DepTree tree;
    tree.n = n;
    tree.parent = std::move(parent);
    tree.deprel = std::move(deprel);
    tree.form = std::move(form);
    if (tree.deprel.empty()) tree.deprel.assign(std::size_t(n), "dep");
    if (tree.form.empty()) {
        tree.form.reserve(std::size_t(n));
        for (int i = 0; i < n; ++i) tree.form.push_back("w" + std::to_string(i));
    }
    tree.extra.assign(std::size_t(n), {"_", "_", "_", "_", "_", "_"});

    int root = -1;
    for (int i = 0; i < n; ++i) {
        int p = tree.parent[std::size_t(i)];
        if (p == kRootParent) {
            if (root >= 0)
                throw TreeError(TreeErrorKind::MultipleRoots,
                                "MultipleRoots: tokens " + std::to_string(root) + " and " +
                                    std::to_string(i) + " both claim the root");
            root = i;
        } else if (p < 0 || p >= n) {
            throw TreeError(TreeErrorKind::HeadOutOfRange,
                            "HeadOutOfRange: token " + std::to_string(i) + " has parent " +
                                std::to_string(p) + " outside [0," + std::to_string(n) + ")");
        }
    }
    if (root < 0) {
        // with every node parented, the links necessarily loop; report the
        // cycle rather than the missing root
        compute_depths(tree.parent, -1);
        throw TreeError(TreeErrorKind::NoRoot, "NoRoot: no token has the ROOT sentinel");
    }

    tree.root_index = root;
    tree.depth = compute_depths(tree.parent, root);
    return tree;
}

void validate(const DepTree& tree) {
    const std::size_t n = std::size_t(tree.n);
    if (tree.n < 0 || tree.parent.size() != n || tree.depth.size() != n ||
        tree.deprel.size() != n || tree.form.size() != n)
        throw TreeError(TreeErrorKind::InvariantViolation,
                        "InvariantViolation: field lengths disagree with n");

    int root = -1;
    for (int i = 0; i < tree.n; ++i) {
        int p = tree.parent[std::size_t(i)];
        if (p == kRootParent) {
            if (root >= 0)
                throw TreeError(TreeErrorKind::MultipleRoots,
                                "MultipleRoots: more than one ROOT sentinel");
            root = i;
        } else if (p < 0 || p >= tree.n) {
            throw TreeError(TreeErrorKind::HeadOutOfRange,
                            "HeadOutOfRange: parent " + std::to_string(p));
        }
    }
    if (root < 0) {
        compute_depths(tree.parent, -1);
        throw TreeError(TreeErrorKind::NoRoot, "NoRoot: no ROOT sentinel");
    }
    if (root != tree.root_index)
        throw TreeError(TreeErrorKind::InvariantViolation,
                        "InvariantViolation: root_index does not match the ROOT sentinel");

    std::vector<int> expect = compute_depths(tree.parent, root);
    for (int i = 0; i < tree.n; ++i) {
        if (tree.depth[std::size_t(i)] != expect[std::size_t(i)])
            throw TreeError(TreeErrorKind::InvariantViolation,
                            "InvariantViolation: depth[" + std::to_string(i) +
                                "] inconsistent with parent links");
    }
}

int lca(const DepTree& tree, int i, int j) {
    check_index(tree, i, "lca");
    check_index(tree, j, "lca");
    int a = i, b = j;
    while (tree.depth[std::size_t(a)] > tree.depth[std::size_t(b)]) a = tree.parent[std::size_t(a)];
    while (tree.depth[std::size_t(b)] > tree.depth[std::size_t(a)]) b = tree.parent[std::size_t(b)];
    while (a != b) {
        a = tree.parent[std::size_t(a)];
        b = tree.parent[std::size_t(b)];
    }
    return a;
}

int tree_distance(const DepTree& tree, int i, int j) {
    check_index(tree, i, "tree_distance");
    check_index(tree, j, "tree_distance");
    int anc = lca(tree, i, j);
    return tree.depth[std::size_t(i)] + tree.depth[std::size_t(j)] -
           2 * tree.depth[std::size_t(anc)];
}

bool is_on_same_root_path(const DepTree& tree, int i, int j) {
    check_index(tree, i, "is_on_same_root_path");
    check_index(tree, j, "is_on_same_root_path");
    const int anc = lca(tree, i, j);
    return anc == i || anc == j;
}

// ---- CoNLL-U ----

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string_view line = (nl == std::string_view::npos)
                                    ? text.substr(pos)
                                    : text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return lines;
}

bool is_blank(std::string_view line) {
    return line.find_first_not_of(" \t") == std::string_view::npos;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t pos = 0;
    while (true) {
        std::size_t tab = line.find('\t', pos);
        if (tab == std::string_view::npos) {
            cols.push_back(line.substr(pos));
            break;
        }
        cols.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return cols;
}

bool parse_int(std::string_view s, int& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

}  // namespace

std::vector<std::string> split_sentence_blocks(std::string_view text) {
    std::vector<std::string> blocks;
    std::string cur;
    for (std::string_view line : split_lines(text)) {
        if (is_blank(line)) {
            if (!cur.empty()) {
                blocks.push_back(std::move(cur));
                cur.clear();
            }
            continue;
        }
        if (line.front() == '#') continue;
        cur.append(line);
        cur.push_back('\n');
    }
    if (!cur.empty()) blocks.push_back(std::move(cur));
    return blocks;
}

DepTree parse_conllu_sentence(std::string_view block) {
    std::vector<int> heads;          // 1-based HEAD values, 0 = root
    std::vector<std::string> forms, deprels;
    std::vector<std::array<std::string, 6>> extras;

    int expected_id = 1;
    for (std::string_view line : split_lines(block)) {
        if (is_blank(line)) continue;
        if (line.front() == '#') continue;
        auto cols = split_tabs(line);
        if (cols.size() != 10)
            throw TreeError(TreeErrorKind::MalformedLine,
                            "MalformedLine: expected 10 tab-separated columns, got " +
                                std::to_string(cols.size()));
        std::string_view id = cols[0];
        // multiword ranges ("3-4") and empty nodes ("1.1") carry no HEAD
        if (id.find('-') != std::string_view::npos ||
            id.find('.') != std::string_view::npos)
            continue;
        int id_val = 0;
        if (!parse_int(id, id_val) || id_val != expected_id)
            throw TreeError(TreeErrorKind::MalformedLine,
                            "MalformedLine: bad token id '" + std::string(id) + "'");
        ++expected_id;

        int head = 0;
        if (!parse_int(cols[6], head) || head < 0)
            throw TreeError(TreeErrorKind::MalformedLine,
                            "MalformedLine: bad HEAD '" + std::string(cols[6]) + "'");
        heads.push_back(head);
        forms.emplace_back(cols[1]);
        deprels.emplace_back(cols[7]);
        extras.push_back({std::string(cols[2]), std::string(cols[3]), std::string(cols[4]),
                          std::string(cols[5]), std::string(cols[8]), std::string(cols[9])});
    }

    const int n = int(heads.size());
    if (n == 0)
        throw TreeError(TreeErrorKind::MalformedLine, "MalformedLine: empty sentence block");

    std::vector<int> parent(std::size_t(n), 0);
    for (int i = 0; i < n; ++i) {
        int h = heads[std::size_t(i)];
        if (h == 0) {
            parent[std::size_t(i)] = kRootParent;
        } else if (h > n) {
            throw TreeError(TreeErrorKind::HeadOutOfRange,
                            "HeadOutOfRange: token " + std::to_string(i + 1) +
                                " references HEAD " + std::to_string(h) + " of " +
                                std::to_string(n));
        } else {
            parent[std::size_t(i)] = h - 1;
        }
    }

    DepTree tree = make_tree(std::move(parent), std::move(deprels), std::move(forms));
    tree.extra = std::move(extras);
    return tree;
}

std::vector<DepTree> parse_conllu(std::string_view text) {
    std::vector<DepTree> trees;
    for (const std::string& block : split_sentence_blocks(text))
        trees.push_back(parse_conllu_sentence(block));
    return trees;
}

std::string to_conllu(const DepTree& tree) {
    std::ostringstream out;
    for (int i = 0; i < tree.n; ++i) {
        const auto& ex = tree.extra[std::size_t(i)];
        int head = tree.parent[std::size_t(i)] == kRootParent
                       ? 0
                       : tree.parent[std::size_t(i)] + 1;
        out << (i + 1) << '\t' << tree.form[std::size_t(i)] << '\t' << ex[0] << '\t' << ex[1]
            << '\t' << ex[2] << '\t' << ex[3] << '\t' << head << '\t'
            << tree.deprel[std::size_t(i)] << '\t' << ex[4] << '\t' << ex[5] << '\n';
    }
    out << '\n';
    return out.str();
}

SubwordAlignment SubwordAlignment::identity(int n_words, bool with_eos) {
    SubwordAlignment a;
    a.word_of_subword.resize(std::size_t(n_words));
    for (int i = 0; i < n_words; ++i) a.word_of_subword[std::size_t(i)] = i;
    a.has_eos = with_eos;
    return a;
}

}  // namespace treepos
