#include "treepos/selftest.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "treepos/gradcheck.hpp"
#include "treepos/reference.hpp"

namespace treepos {
namespace selftest {

namespace {

class Timer {
public:
    Timer() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

SuiteResult finish(std::string name, bool passed, std::string detail, const Timer& t) {
    return {std::move(name), passed, std::move(detail), t.seconds()};
}

}  // namespace

const char* kFixtureConllu =
    "# text = Bush held a talk with Sharon\n"
    "1\tBush\tBush\tPROPN\tNNP\t_\t2\tnsubj\t_\t_\n"
    "2\theld\thold\tVERB\tVBD\t_\t0\troot\t_\t_\n"
    "3\ta\ta\tDET\tDT\t_\t4\tdet\t_\t_\n"
    "4\ttalk\ttalk\tNOUN\tNN\t_\t2\tobj\t_\t_\n"
    "5\twith\twith\tADP\tIN\t_\t6\tcase\t_\t_\n"
    "6\tSharon\tSharon\tPROPN\tNNP\t_\t2\tobl\t_\t_\n";

SuiteResult oracle_equivalence(int n_trees, std::uint64_t seed) {
    Timer timer;
    Rng rng(seed);
    for (int t = 0; t < n_trees; ++t) {
        const int n = rng.uniform_int(1, 30);
        DepTree tree = random_tree(rng, n);
        SubwordAlignment align = rng.bernoulli(0.5)
                                     ? SubwordAlignment::identity(n, rng.bernoulli(0.5))
                                     : random_alignment(rng, n, 3, rng.bernoulli(0.5));
        PositionConfig cfg;
        cfg.r_clip = rng.bernoulli(0.3) ? 3 : 16;
        cfg.rule1 = rng.bernoulli(0.5) ? Rule1::ancestor_path : Rule1::literal_edge;

        const std::vector<int> abs_got = abs_structural(tree, align);
        const std::vector<int> abs_want =
            reference::abs_structural_oracle(tree.parent, align.word_of_subword, align.has_eos);
        if (abs_got != abs_want)
            return finish("oracle-equivalence", false,
                          "absolute positions diverge on tree " + std::to_string(t), timer);

        const std::vector<int> rel_got = rel_structural_matrix(tree, align, cfg);
        const std::vector<int> rel_want = reference::rel_structural_oracle(
            tree.parent, align.word_of_subword, align.has_eos,
            cfg.rule1 == Rule1::literal_edge, cfg.r_clip);
        if (rel_got != rel_want)
            return finish("oracle-equivalence", false,
                          "relative matrices diverge on tree " + std::to_string(t), timer);
    }
    return finish("oracle-equivalence", true,
                  std::to_string(n_trees) + " random trees matched the reference", timer);
}

SuiteResult figure1_fixture() {
    Timer timer;
    std::vector<DepTree> trees = parse_conllu(kFixtureConllu);
    if (trees.size() != 1) return finish("figure1-fixture", false, "fixture parse failed", timer);
    const DepTree& tree = trees[0];
    const int talk = 3, held = 1;
    const std::vector<int> want_depth = {1, 0, 2, 1, 2, 1};
    bool ok = tree.depth == want_depth && tree.root_index == held &&
              tree_distance(tree, talk, held) == 1 && std::abs(talk - held) == 2;
    std::ostringstream detail;
    detail << "tree_distance(talk, held) = " << tree_distance(tree, talk, held)
           << ", sequential offset = " << std::abs(talk - held);
    return finish("figure1-fixture", ok, detail.str(), timer);
}

SuiteResult antisymmetry(int n_trees, std::uint64_t seed, bool mutate_rule2_sign) {
    Timer timer;
    Rng rng(seed);
    for (int t = 0; t < n_trees; ++t) {
        const int n = rng.uniform_int(1, 30);
        DepTree tree = random_tree(rng, n);
        SubwordAlignment align = rng.bernoulli(0.5)
                                     ? SubwordAlignment::identity(n, rng.bernoulli(0.5))
                                     : random_alignment(rng, n, 3, rng.bernoulli(0.5));
        const Rule1 rule1 = rng.bernoulli(0.5) ? Rule1::ancestor_path : Rule1::literal_edge;
        const int len = align.total_len();
        for (int i = 0; i < len; ++i)
            for (int j = 0; j < len; ++j) {
                int vij = rel_structural_unclipped(tree, align, i, j, rule1);
                int vji = rel_structural_unclipped(tree, align, j, i, rule1);
                if (mutate_rule2_sign) {
                    // corrupted rule 2: drop the sign factor entirely
                    const int wi = align.word_at(i), wj = align.word_at(j);
                    const bool same_word = wi >= 0 && wj >= 0 && wi == wj;
                    const bool same_path =
                        wi >= 0 && wj >= 0 &&
                        (rule1 == Rule1::literal_edge
                             ? tree.parent[std::size_t(wi)] == wj || tree.parent[std::size_t(wj)] == wi
                             : is_on_same_root_path(tree, wi, wj));
                    if (i != j && !same_word && !same_path) {
                        vij = std::abs(vij);
                        vji = std::abs(vji);
                    }
                }
                if (i == j && vij != 0)
                    return finish("antisymmetry", false, "nonzero diagonal", timer);
                if (vij != -vji)
                    return finish("antisymmetry", false,
                                  "M[i][j] != -M[j][i] on tree " + std::to_string(t), timer);
            }
    }
    return finish("antisymmetry", true,
                  std::to_string(n_trees) + " random trees antisymmetric with zero diagonal",
                  timer);
}

namespace {

// encoder output for a token sequence under the given config/weights
Tensor<float> encoder_output(const EncoderModel<float>& model, const std::vector<int>& tokens,
                             const PositionAnnotation& ann) {
    Graph<float> g;
    auto out = model.forward(g, tokens, ann);
    return g.value(out);
}

PositionAnnotation annotation_for_tree(const DepTree& tree, const EncoderConfig& cfg) {
    PositionConfig pcfg{cfg.d_model, cfg.r_clip, cfg.fusion_mode, Rule1::ancestor_path};
    return annotate(tree, SubwordAlignment::identity(tree.n), pcfg);
}

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ffn = 48;
    cfg.vocab_size = 40;
    return cfg;
}

}  // namespace

SuiteResult permutation_equivariance(int n_pairs, std::uint64_t seed) {
    Timer timer;
    Rng rng(seed);

    EncoderConfig off = small_config();  // all flags off
    ParamStore<float> store_off;
    Rng init_off(seed ^ 0x77);
    EncoderModel<float> model_off(off, &store_off, init_off);

    EncoderConfig on = off;
    on.abs_seq_on = true;
    ParamStore<float> store_on;
    Rng init_on(seed ^ 0x77);
    EncoderModel<float> model_on(on, &store_on, init_on);

    double worst_equiv = 0;
    double weakest_break = 1e30;
    for (int p = 0; p < n_pairs; ++p) {
        const int len = rng.uniform_int(4, 12);
        DepTree tree = random_permuted_tree(rng, len);
        PositionAnnotation ann = annotation_for_tree(tree, off);
        std::vector<int> tokens(std::size_t(len), 0);
        for (int& t : tokens) t = rng.uniform_int(0, off.vocab_size - 1);

        // non-trivial permutation
        std::vector<int> perm(std::size_t(len), 0);
        for (int i = 0; i < len; ++i) perm[std::size_t(i)] = i;
        do {
            rng.shuffle(perm);
        } while ([&] {
            for (int i = 0; i < len; ++i)
                if (perm[std::size_t(i)] != i) return false;
            return true;
        }());

        std::vector<int> permuted(std::size_t(len), 0);
        for (int i = 0; i < len; ++i) permuted[std::size_t(perm[std::size_t(i)])] = tokens[std::size_t(i)];

        // flags off: permuting inputs must permute outputs
        Tensor<float> base = encoder_output(model_off, tokens, ann);
        Tensor<float> moved = encoder_output(model_off, permuted, ann);
        for (int i = 0; i < len; ++i)
            for (int jd = 0; jd < off.d_model; ++jd)
                worst_equiv = std::max(
                    worst_equiv,
                    double(std::abs(moved.at(perm[std::size_t(i)], jd) - base.at(i, jd))));

        // absolute sequential PE on: same pairs must break equivariance
        Tensor<float> base_on = encoder_output(model_on, tokens, ann);
        Tensor<float> moved_on = encoder_output(model_on, permuted, ann);
        double break_gap = 0;
        for (int i = 0; i < len; ++i)
            for (int jd = 0; jd < off.d_model; ++jd)
                break_gap = std::max(
                    break_gap,
                    double(std::abs(moved_on.at(perm[std::size_t(i)], jd) - base_on.at(i, jd))));
        weakest_break = std::min(weakest_break, break_gap);
    }

    const bool ok = worst_equiv <= 1e-6 && weakest_break > 1e-3;
    std::ostringstream detail;
    detail << "max equivariance gap " << worst_equiv << " (limit 1e-6), weakest break "
           << weakest_break << " (must exceed 1e-3)";
    return finish("permutation-equivariance", ok, detail.str(), timer);
}

SuiteResult zero_table_reduction(int n_inputs, std::uint64_t seed) {
    Timer timer;
    Rng rng(seed);

    // rel flags on (with zeroed tables) against the matching flags-off config
    const std::array<std::pair<int, int>, 2> row_pairs = {{{9, 5}, {3, 1}}};
    for (auto [row_on, row_off] : row_pairs) {
        EncoderConfig on = small_config();
        on.apply_row(row_on);
        EncoderConfig off = small_config();
        off.apply_row(row_off);

        ParamStore<float> store_on, store_off;
        Rng init_a(seed ^ 0x1234), init_b(seed ^ 0x1234);
        EncoderModel<float> model_on(on, &store_on, init_a);
        EncoderModel<float> model_off(off, &store_off, init_b);
        for (auto& [name, t] : store_on.entries())
            if (name.find(".relk.") != std::string::npos || name.find(".relv.") != std::string::npos)
                t.fill(0.0f);

        for (int c = 0; c < n_inputs / 2; ++c) {
            const int len = rng.uniform_int(3, 12);
            DepTree tree = random_permuted_tree(rng, len);
            PositionAnnotation ann = annotation_for_tree(tree, on);
            std::vector<int> tokens(std::size_t(len), 0);
            for (int& t : tokens) t = rng.uniform_int(0, on.vocab_size - 1);

            Tensor<float> a = encoder_output(model_on, tokens, ann);
            Tensor<float> b = encoder_output(model_off, tokens, ann);
            if (a.data.size() != b.data.size() ||
                std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) != 0)
                return finish("zero-table-reduction", false,
                              "outputs differ for rows " + std::to_string(row_on) + " vs " +
                                  std::to_string(row_off),
                              timer);
        }
    }
    return finish("zero-table-reduction", true,
                  std::to_string(n_inputs) + " inputs bit-identical across row pairs 9/5 and 3/1",
                  timer);
}

SuiteResult grad_check_rows(std::uint64_t seed, double eps) {
    Timer timer;
    double worst = 0;
    std::ostringstream detail;
    for (int row = 1; row <= 9; ++row) {
        EncoderConfig cfg = small_config();
        cfg.apply_row(row);
        GradCheckReport r = grad_check_detail(cfg, seed + std::uint64_t(row), eps);
        worst = std::max(worst, r.max_rel_error);
        detail << "row" << row << "=" << r.max_rel_error << (row < 9 ? " " : "");
    }
    const bool ok = worst < 1e-4;
    return finish("grad-check", ok, "max rel err " + std::to_string(worst) + " [" + detail.str() + "]",
                  timer);
}

SuiteResult checkpoint_roundtrip(std::uint64_t seed) {
    Timer timer;
    EncoderConfig cfg = small_config();
    cfg.apply_row(9);

    TaskModel<float> model(cfg, TaskKind::depth, seed);
    auto train_set = gen_depth_task(24, 10, cfg.vocab_size, seed + 1);
    auto test_set = gen_depth_task(16, 10, cfg.vocab_size, seed + 2);
    TrainSettings ts;
    ts.epochs = 2;
    ts.batch_size = 8;
    ts.seed = seed;
    RunReport before = train(model, train_set, test_set, ts);

    const std::string path = "treepos_selftest_ckpt.bin";
    save_task_model(path, model);
    auto loaded = load_task_model(path);
    std::remove(path.c_str());

    for (const TaskSample& s : test_set) {
        PositionAnnotation ann = model.annotation_for(s);
        Graph<float> g1, g2;
        Tensor<float> a = g1.value(model.encoder().forward(g1, s.tokens, ann));
        Tensor<float> b = g2.value(loaded->encoder().forward(g2, s.tokens, ann));
        if (std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) != 0)
            return finish("checkpoint-roundtrip", false, "encoder outputs differ after reload",
                          timer);
    }
    const double acc_before = before.final_accuracy;
    const double acc_after = evaluate(*loaded, test_set).accuracy();
    const bool ok = acc_before == acc_after;
    std::ostringstream detail;
    detail << "accuracy " << acc_before << " == " << acc_after << ", outputs bit-identical";
    return finish("checkpoint-roundtrip", ok, detail.str(), timer);
}

SuiteResult ablation_direction(const AblationScale& scale) {
    Timer timer;
    std::ostringstream detail;

    AblationSettings dist;
    dist.task = TaskKind::distance;
    dist.train_count = scale.distance_train;
    dist.test_count = scale.distance_test;
    dist.max_len = scale.distance_max_len;
    dist.data_seed = scale.seed;
    dist.train.epochs = scale.distance_epochs;
    dist.train.seed = scale.seed;
    std::vector<RunReport> dr = run_ablation({4, 9}, dist);
    const double acc4 = dr[0].final_accuracy, acc9 = dr[1].final_accuracy;
    detail << "distance: row4 " << acc4 << " vs row9 " << acc9;
    bool ok = acc9 > acc4;
    bool time_ok = dr[0].wallclock_seconds < 600 && dr[1].wallclock_seconds < 600;

    AblationSettings dep;
    dep.task = TaskKind::depth;
    dep.train_count = scale.depth_train;
    dep.test_count = scale.depth_test;
    dep.max_len = scale.depth_max_len;
    dep.data_seed = scale.seed + 7;
    dep.train.epochs = scale.depth_epochs;
    dep.train.seed = scale.seed + 7;
    std::vector<RunReport> pr = run_ablation({1}, dep);
    const double gap = std::abs(pr[0].final_accuracy - pr[0].baseline_accuracy);
    detail << "; depth row1 " << pr[0].final_accuracy << " vs marginal "
           << pr[0].baseline_accuracy << " (gap " << gap << ", 3se "
           << 3 * pr[0].baseline_stderr << ")";
    ok = ok && gap <= 3 * pr[0].baseline_stderr;
    time_ok = time_ok && pr[0].wallclock_seconds < 600;

    if (!time_ok) detail << "; a row exceeded the 10-minute budget";
    return finish("ablation-direction", ok && time_ok, detail.str(), timer);
}

std::vector<SuiteResult> run_core_suites() {
    return {oracle_equivalence(), antisymmetry(), permutation_equivariance(), grad_check_rows()};
}

}  // namespace selftest
}  // namespace treepos
