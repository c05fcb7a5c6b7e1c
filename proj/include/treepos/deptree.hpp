#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace treepos {

inline constexpr int kRootParent = -1;

enum class TreeErrorKind {
    HeadOutOfRange,
    CycleDetected,
    MultipleRoots,
    NoRoot,
    MalformedLine,
    InvariantViolation,
    IndexOutOfRange,
};

class TreeError : public std::runtime_error {
public:
    TreeError(TreeErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    TreeErrorKind kind() const { return kind_; }

private:
    TreeErrorKind kind_;
};

// Dependency tree over one sentence. parent[t] is a 0-based token index or
// kRootParent; depth[t] counts edges down from the root. Values are immutable
// by convention once built, so trees are safe to share across readers.
struct DepTree {
    int n = 0;
    std::vector<int> parent;
    std::vector<std::string> deprel;
    std::vector<int> depth;
    int root_index = -1;
    std::vector<std::string> form;
    // LEMMA, UPOS, XPOS, FEATS, DEPS, MISC columns, kept verbatim so a parsed
    // sentence can be written back out unchanged.
    std::vector<std::array<std::string, 6>> extra;

    bool operator==(const DepTree&) const = default;
};

// Builds a tree from parent links, computing depths and locating the root.
// Throws TreeError with the same taxonomy as the CoNLL-U parser.
DepTree make_tree(std::vector<int> parent,
                  std::vector<std::string> deprel = {},
                  std::vector<std::string> form = {});

// Re-checks every DepTree invariant; for trees assembled by hand.
void validate(const DepTree& tree);

int lca(const DepTree& tree, int i, int j);

// Length of the unique undirected path between tokens i and j, computed as
// depth[i] + depth[j] - 2*depth[lca(i,j)].
int tree_distance(const DepTree& tree, int i, int j);

// True iff i and j lie on one root-to-leaf path: i is an ancestor of j,
// j is an ancestor of i, or i == j.
bool is_on_same_root_path(const DepTree& tree, int i, int j);

// ---- CoNLL-U ----

// Splits input into sentence blocks: comment lines ('#') are dropped and
// blank lines separate sentences. Each block holds raw token lines.
std::vector<std::string> split_sentence_blocks(std::string_view text);

// Parses one sentence block of 10-column tab-separated token lines.
// Multiword ranges ("3-4") and empty nodes ("1.1") are skipped; HEAD=0 maps
// to kRootParent.
DepTree parse_conllu_sentence(std::string_view block);

std::vector<DepTree> parse_conllu(std::string_view text);

// Serializes the retained columns back to 10-column CoNLL-U (one trailing
// blank line, no comments).
std::string to_conllu(const DepTree& tree);

// Maps sub-word positions to source word indices. If has_eos, a synthetic
// end-of-sentence symbol occupies the final position and maps to no word.
struct SubwordAlignment {
    std::vector<int> word_of_subword;
    bool has_eos = false;

    int total_len() const { return int(word_of_subword.size()) + (has_eos ? 1 : 0); }
    int n_subwords() const { return int(word_of_subword.size()); }
    // word index of position k, or kRootParent-style -1 for the EOS slot
    int word_at(int k) const { return k < n_subwords() ? word_of_subword[std::size_t(k)] : -1; }

    static SubwordAlignment identity(int n_words, bool with_eos = false);
};

}  // namespace treepos
