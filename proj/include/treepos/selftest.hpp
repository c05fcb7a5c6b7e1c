#pragma once

#include <string>
#include <vector>

#include "treepos/harness.hpp"

namespace treepos {
namespace selftest {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0;
};

// Hand-built "Bush held a talk with Sharon" sentence in CoNLL-U form.
extern const char* kFixtureConllu;

// abs/rel structural positions vs the straight-line BFS + ancestor-set
// reference on random trees with random sub-word alignments; exact match.
SuiteResult oracle_equivalence(int n_trees = 1000, std::uint64_t seed = 11);

// structural distance 1 vs sequential offset 2 on the fixture sentence
SuiteResult figure1_fixture();

// M[i][j] == -M[j][i] (unclipped) and zero diagonal on random trees.
// mutate_rule2_sign deliberately drops the sign factor of rule 2 inside the
// checked computation; the suite must then fail, which is exercised by the
// mutation-sanity test.
SuiteResult antisymmetry(int n_trees = 1000, std::uint64_t seed = 12,
                         bool mutate_rule2_sign = false);

// encoder with all flags off is permutation-equivariant within 1e-6; with
// absolute sequential PE on, the same pairs break it by more than 1e-3
SuiteResult permutation_equivariance(int n_pairs = 100, std::uint64_t seed = 13);

// relative flags on with zeroed tables reproduces the flags-off output
// bit-for-bit
SuiteResult zero_table_reduction(int n_inputs = 100, std::uint64_t seed = 14);

// max relative gradient error across all nine ablation rows
SuiteResult grad_check_rows(std::uint64_t seed = 7, double eps = 1e-3);

// save/load reproduces evaluation outputs bit-for-bit
SuiteResult checkpoint_roundtrip(std::uint64_t seed = 15);

// row 9 beats row 4 on the distance task; row 1 sits within 3 standard
// errors of the label-marginal baseline on the depth task
struct AblationScale {
    int distance_train = 2200;
    int distance_test = 600;
    int distance_max_len = 20;
    int distance_epochs = 6;
    int depth_train = 3000;
    int depth_test = 500;
    int depth_max_len = 16;
    int depth_epochs = 3;
    std::uint64_t seed = 21;
};
SuiteResult ablation_direction(const AblationScale& scale = {});

// the four suites behind the `selftest` CLI command
std::vector<SuiteResult> run_core_suites();

}  // namespace selftest
}  // namespace treepos
