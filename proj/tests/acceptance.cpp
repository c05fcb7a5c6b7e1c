// Acceptance suite: one line per criterion, nonzero exit on any failure.

#include <cstdio>
#include <vector>

#include "treepos/selftest.hpp"

using treepos::selftest::SuiteResult;

namespace {

struct Criterion {
    SuiteResult result;
    double time_limit_s;  // <= 0 means no limit
};

void print_line(const Criterion& c, bool ok) {
    std::printf("[%s] %-26s %s (%.1fs)\n", ok ? "PASS" : "FAIL", c.result.name.c_str(),
                c.result.detail.c_str(), c.result.seconds);
    std::fflush(stdout);
}

}  // namespace

int main() {
    using namespace treepos::selftest;
    bool all_ok = true;

    std::vector<Criterion> criteria;
    auto run = [&](SuiteResult r, double limit) {
        Criterion c{std::move(r), limit};
        bool ok = c.result.passed && (c.time_limit_s <= 0 || c.result.seconds < c.time_limit_s);
        if (c.result.passed && !ok)
            c.result.detail += " [exceeded " + std::to_string(int(limit)) + "s budget]";
        print_line(c, ok);
        all_ok = all_ok && ok;
    };

    run(oracle_equivalence(1000), 30.0);
    run(figure1_fixture(), 0);
    run(antisymmetry(1000), 0);
    run(permutation_equivariance(100), 0);
    run(zero_table_reduction(100), 0);
    run(grad_check_rows(), 300.0);
    run(ablation_direction(), 0);  // per-row 10-minute budget checked inside
    run(checkpoint_roundtrip(), 0);

    std::printf("%s\n", all_ok ? "ACCEPTANCE: all criteria passed"
                               : "ACCEPTANCE: at least one criterion failed");
    return all_ok ? 0 : 1;
}
