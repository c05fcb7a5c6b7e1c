#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <functional>

#include "treepos/deptree.hpp"
#include "treepos/reference.hpp"
#include "treepos/treegen.hpp"

using namespace treepos;

namespace {

// "Bush held a talk with Sharon": Bush->held, held->ROOT, a->talk,
// talk->held, with->Sharon, Sharon->held
const char* kFixture =
    "# text = Bush held a talk with Sharon\n"
    "1\tBush\tBush\tPROPN\tNNP\t_\t2\tnsubj\t_\t_\n"
    "2\theld\thold\tVERB\tVBD\t_\t0\troot\t_\t_\n"
    "3\ta\ta\tDET\tDT\t_\t4\tdet\t_\t_\n"
    "4\ttalk\ttalk\tNOUN\tNN\t_\t2\tobj\t_\t_\n"
    "5\twith\twith\tADP\tIN\t_\t6\tcase\t_\t_\n"
    "6\tSharon\tSharon\tPROPN\tNNP\t_\t2\tobl\t_\t_\n";

DepTree fixture() { return parse_conllu(kFixture).at(0); }

TreeErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const TreeError& e) {
        return e.kind();
    }
    FAIL("expected a TreeError");
    return TreeErrorKind::InvariantViolation;
}

}  // namespace

TEST_CASE("two-token block parses with root second") {
    const char* text =
        "1\tBush\t_\t_\t_\t_\t2\tnsubj\t_\t_\n"
        "2\theld\t_\t_\t_\t_\t0\troot\t_\t_\n";
    auto trees = parse_conllu(text);
    REQUIRE(trees.size() == 1);
    CHECK(trees[0].root_index == 1);
    CHECK(trees[0].depth == std::vector<int>{1, 0});
    CHECK(trees[0].parent == std::vector<int>{1, kRootParent});
    CHECK(trees[0].form == std::vector<std::string>{"Bush", "held"});
}

TEST_CASE("two-cycle is rejected") {
    const char* text =
        "1\ta\t_\t_\t_\t_\t2\tdep\t_\t_\n"
        "2\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n";
    CHECK(kind_of([&] { parse_conllu(text); }) == TreeErrorKind::CycleDetected);
}

TEST_CASE("fixture depths") {
    DepTree tree = fixture();
    CHECK(tree.n == 6);
    CHECK(tree.depth == std::vector<int>{1, 0, 2, 1, 2, 1});
    CHECK(tree.root_index == 1);
}

TEST_CASE("parse error taxonomy") {
    CHECK(kind_of([] { parse_conllu("1\tx\t_\t_\t_\t_\t5\tdep\t_\t_\n"); }) ==
          TreeErrorKind::HeadOutOfRange);
    CHECK(kind_of([] { parse_conllu("1\tx\t_\t_\t_\t5\tdep\t_\t_\n"); }) ==
          TreeErrorKind::MalformedLine);
    CHECK(kind_of([] {
        parse_conllu(
            "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n");
    }) == TreeErrorKind::MultipleRoots);
    CHECK(kind_of([] {
        parse_conllu(
            "1\ta\t_\t_\t_\t_\t2\tdep\t_\t_\n"
            "2\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n"
            "3\tc\t_\t_\t_\t_\t1\tdep\t_\t_\n");
    }) == TreeErrorKind::CycleDetected);
    // no HEAD=0 anywhere: 1->2, 2->1 would be a cycle; use a self-contained case
    CHECK(kind_of([] { parse_conllu("1\ta\t_\t_\t_\t_\t1\tdep\t_\t_\n"); }) ==
          TreeErrorKind::CycleDetected);
}

TEST_CASE("multiword ranges, empty nodes and comments are skipped") {
    const char* text =
        "# sent_id = 1\n"
        "1\tvamos\t_\t_\t_\t_\t0\troot\t_\t_\n"
        "2-3\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "2\tde\t_\t_\t_\t_\t1\tcase\t_\t_\n"
        "3\tel\t_\t_\t_\t_\t1\tdet\t_\t_\n"
        "3.1\tnull\t_\t_\t_\t_\t_\t_\t_\t_\n";
    auto trees = parse_conllu(text);
    REQUIRE(trees.size() == 1);
    CHECK(trees[0].n == 3);
    CHECK(trees[0].depth == std::vector<int>{0, 1, 1});
}

TEST_CASE("multiple sentences split on blank lines") {
    std::string text = std::string(kFixture) + "\n" +
                       "1\tok\t_\t_\t_\t_\t0\troot\t_\t_\n";
    auto trees = parse_conllu(text);
    CHECK(trees.size() == 2);
    CHECK(trees[1].n == 1);
    CHECK(trees[1].depth == std::vector<int>{0});
}

TEST_CASE("tree_distance on the fixture") {
    DepTree tree = fixture();
    const int bush = 0, held = 1, a = 2, talk = 3;
    CHECK(tree_distance(tree, talk, held) == 1);   // dependent of the head
    CHECK(tree_distance(tree, talk, talk) == 0);
    CHECK(tree_distance(tree, a, bush) == 3);
    CHECK_THROWS_AS(tree_distance(tree, 0, 6), TreeError);
    CHECK_THROWS_AS(tree_distance(tree, -1, 0), TreeError);
}

TEST_CASE("is_on_same_root_path") {
    DepTree tree = fixture();
    const int bush = 0, held = 1, a = 2, talk = 3;
    CHECK(is_on_same_root_path(tree, talk, held));
    CHECK(is_on_same_root_path(tree, held, talk));
    CHECK(is_on_same_root_path(tree, a, held));     // a -> talk -> held
    CHECK_FALSE(is_on_same_root_path(tree, bush, a));
    CHECK(is_on_same_root_path(tree, bush, bush));
}

TEST_CASE("validate accepts the fixture and rejects corruption") {
    DepTree tree = fixture();
    CHECK_NOTHROW(validate(tree));

    DepTree two_roots = tree;
    two_roots.parent[0] = kRootParent;
    CHECK(kind_of([&] { validate(two_roots); }) == TreeErrorKind::MultipleRoots);

    DepTree bad_depth = tree;
    bad_depth.depth[2] = 5;
    CHECK(kind_of([&] { validate(bad_depth); }) == TreeErrorKind::InvariantViolation);

    DepTree no_root = tree;
    no_root.parent[1] = 0;  // held -> Bush closes the cycle
    CHECK_THROWS_AS(validate(no_root), TreeError);
}

TEST_CASE("make_tree computes depths") {
    DepTree tree = make_tree({1, kRootParent, 3, 1, 5, 1});
    CHECK(tree.depth == std::vector<int>{1, 0, 2, 1, 2, 1});
    CHECK(tree.root_index == 1);
}

TEST_CASE("property: lca distance equals BFS oracle on random trees") {
    Rng rng(101);
    for (int t = 0; t < 1000; ++t) {
        const int n = rng.uniform_int(1, 30);
        DepTree tree = random_tree(rng, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                REQUIRE(tree_distance(tree, i, j) == reference::bfs_distance(tree.parent, i, j));
    }
}

TEST_CASE("property: distance is a metric and depth is distance to root") {
    Rng rng(102);
    for (int t = 0; t < 200; ++t) {
        const int n = rng.uniform_int(2, 30);
        DepTree tree = random_permuted_tree(rng, n);
        for (int s = 0; s < 30; ++s) {
            int i = rng.uniform_int(0, n - 1), j = rng.uniform_int(0, n - 1),
                k = rng.uniform_int(0, n - 1);
            int dij = tree_distance(tree, i, j);
            REQUIRE(dij == tree_distance(tree, j, i));
            REQUIRE((dij == 0) == (i == j));
            REQUIRE(dij <= tree_distance(tree, i, k) + tree_distance(tree, k, j));
        }
        for (int i = 0; i < n; ++i)
            REQUIRE(tree.depth[std::size_t(i)] == tree_distance(tree, i, tree.root_index));
    }
}

TEST_CASE("round-trip: parse, serialize, re-parse is identity") {
    const char* messy =
        "# a comment\n"
        "1\tBush\tbush\tPROPN\tNNP\tNumber=Sing\t2\tnsubj\t_\tSpaceAfter=No\n"
        "2\theld\thold\tVERB\tVBD\t_\t0\troot\t_\t_\n";
    DepTree first = parse_conllu(messy).at(0);
    DepTree second = parse_conllu(to_conllu(first)).at(0);
    CHECK(first == second);

    Rng rng(103);
    for (int t = 0; t < 50; ++t) {
        DepTree tree = random_permuted_tree(rng, rng.uniform_int(1, 20));
        DepTree back = parse_conllu(to_conllu(tree)).at(0);
        CHECK(tree == back);
    }
}

TEST_CASE("subword alignment basics") {
    SubwordAlignment id = SubwordAlignment::identity(3, true);
    CHECK(id.total_len() == 4);
    CHECK(id.word_at(2) == 2);
    CHECK(id.word_at(3) == -1);  // EOS maps to no word
}
