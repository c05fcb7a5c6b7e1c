// treepos command line: annotate CoNLL-U treebanks with sequential and
// structural positions, train/evaluate the synthetic tasks, run the ablation
// grid, and run the self-test suites.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "treepos/harness.hpp"
#include "treepos/selftest.hpp"

namespace fs = std::filesystem;
using namespace treepos;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitEmptyInput = 2;
constexpr int kExitUsage = 64;

bool single_thread_forced() {
    const char* v = std::getenv("TREEPOS_SINGLE_THREAD");
    return v != nullptr && std::string(v) != "0" && std::string(v) != "";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw std::runtime_error("failed writing " + path);
}

struct AnnotateOptions {
    std::string input;
    std::string output;
    PositionConfig pos;
};

int cmd_annotate(const AnnotateOptions& opt) {
    std::string text;
    try {
        text = read_file(opt.input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }

    const std::vector<std::string> blocks = split_sentence_blocks(text);
    std::vector<std::string> lines(blocks.size());
    std::vector<std::string> errors(blocks.size());

    auto process = [&](std::size_t idx) {
        try {
            DepTree tree = parse_conllu_sentence(blocks[idx]);
            PositionAnnotation ann =
                annotate(tree, SubwordAlignment::identity(tree.n), opt.pos);
            lines[idx] = annotation_to_json(ann, tree.form).dump();
        } catch (const std::exception& e) {
            errors[idx] = e.what();
        }
    };

    // sentences are independent; output order stays the input order
    const unsigned hw = std::thread::hardware_concurrency();
    if (single_thread_forced() || hw <= 1 || blocks.size() < 16) {
        for (std::size_t i = 0; i < blocks.size(); ++i) process(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const unsigned n_workers = std::min<unsigned>(hw, 8);
        for (unsigned w = 0; w < n_workers; ++w)
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < blocks.size(); i = next.fetch_add(1))
                    process(i);
            });
        for (auto& t : workers) t.join();
    }

    std::size_t written = 0, skipped = 0;
    try {
        std::ofstream out(opt.output, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + opt.output + " for writing");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (!errors[i].empty()) {
                std::cerr << "warning: skipping sentence " << (i + 1) << ": " << errors[i] << "\n";
                ++skipped;
                continue;
            }
            out << lines[i] << '\n';
            ++written;
        }
        if (!out) throw std::runtime_error("failed writing " + opt.output);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }

    std::cerr << "annotated " << written << " sentence(s), skipped " << skipped << "\n";
    return written == 0 ? kExitEmptyInput : kExitOk;
}

struct TrainOptions {
    std::string task = "depth";
    int row = 9;
    std::uint64_t seed = 1;
    std::string checkpoint_out;
    std::string report_out;
    std::string dataset_out;
    EncoderConfig enc;
    std::string fusion = "nonlinear";
    std::string rule1 = "ancestor";
    int train_samples = 4000;
    int test_samples = 1000;
    int max_len = 24;
    int threshold = 2;
    TrainSettings train;
    std::string optimizer = "adam";
};

int cmd_train(const TrainOptions& opt) {
    try {
        EncoderConfig cfg = opt.enc;
        cfg.fusion_mode = fusion_mode_from_string(opt.fusion);
        cfg.apply_row(opt.row);
        cfg.check();
        const TaskKind task = task_from_string(opt.task);
        const Rule1 rule1 = rule1_from_string(opt.rule1);

        std::vector<TaskSample> train_set, test_set;
        if (task == TaskKind::depth) {
            train_set = gen_depth_task(opt.train_samples, opt.max_len, cfg.vocab_size, opt.seed);
            test_set = gen_depth_task(opt.test_samples, opt.max_len, cfg.vocab_size, opt.seed + 1);
        } else {
            train_set = gen_distance_task(opt.train_samples, opt.max_len, cfg.vocab_size,
                                          opt.threshold, opt.seed);
            test_set = gen_distance_task(opt.test_samples, opt.max_len, cfg.vocab_size,
                                         opt.threshold, opt.seed + 1);
        }
        if (!opt.dataset_out.empty()) write_file(opt.dataset_out, dataset_to_jsonl(train_set));

        TrainSettings ts = opt.train;
        ts.seed = opt.seed;
        ts.optimizer = opt.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;

        TaskModel<float> model(cfg, task, opt.seed, rule1);
        RunReport report = train(model, train_set, test_set, ts);
        report.config_row = opt.row;

        if (!opt.checkpoint_out.empty()) save_task_model(opt.checkpoint_out, model);
        if (!opt.report_out.empty()) write_file(opt.report_out, report.to_json().dump(2) + "\n");

        std::cout << "row " << opt.row << " (" << report.flags << ") " << opt.task
                  << ": final accuracy " << report.final_accuracy << " (baseline "
                  << report.baseline_accuracy << ") in " << report.wallclock_seconds << "s\n";
        return kExitOk;
    } catch (const TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

struct AblationOptions {
    std::string rows = "all";
    std::uint64_t seed = 1;
    std::string out_dir = "ablation";
    std::string task = "distance";
    std::string fusion = "nonlinear";
    std::string rule1 = "ancestor";
    EncoderConfig enc;
    int train_samples = 4000;
    int test_samples = 1000;
    int max_len = 24;
    int threshold = 2;
    TrainSettings train;
};

std::vector<int> parse_rows(const std::string& arg) {
    if (arg == "all") return {1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<int> rows;
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        int row = std::stoi(item);
        if (row < 1 || row > 9) throw CLI::ValidationError("--rows", "row ids must be 1..9");
        rows.push_back(row);
    }
    if (rows.empty()) throw CLI::ValidationError("--rows", "no rows given");
    return rows;
}

int cmd_ablation(const AblationOptions& opt) {
    try {
        const std::vector<int> rows = parse_rows(opt.rows);
        AblationSettings settings;
        settings.task = task_from_string(opt.task);
        settings.train_count = opt.train_samples;
        settings.test_count = opt.test_samples;
        settings.max_len = opt.max_len;
        settings.threshold = opt.threshold;
        settings.data_seed = opt.seed;
        settings.base = opt.enc;
        settings.base.fusion_mode = fusion_mode_from_string(opt.fusion);
        settings.rule1 = rule1_from_string(opt.rule1);
        settings.train = opt.train;
        settings.train.seed = opt.seed;

        fs::create_directories(opt.out_dir);
        std::vector<RunReport> reports = run_ablation(rows, settings);
        for (const RunReport& r : reports) {
            write_file((fs::path(opt.out_dir) / ("report-row" + std::to_string(r.config_row) + ".json")).string(),
                       r.to_json().dump(2) + "\n");
            std::cout << "row " << r.config_row << " (" << r.flags << "): accuracy "
                      << r.final_accuracy << " in " << r.wallclock_seconds << "s\n";
        }
        write_file((fs::path(opt.out_dir) / "comparison.csv").string(), ablation_csv(reports));
        return kExitOk;
    } catch (const CLI::ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_selftest() {
    try {
        const std::vector<selftest::SuiteResult> results = selftest::run_core_suites();
        bool all_ok = true;
        for (const auto& r : results) {
            std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " — " << r.detail << " ("
                      << r.seconds << "s)\n";
            all_ok = all_ok && r.passed;
        }
        return all_ok ? kExitOk : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

void add_encoder_flags(CLI::App* cmd, EncoderConfig& enc) {
    cmd->add_option("--d-model", enc.d_model, "model width");
    cmd->add_option("--n-heads", enc.n_heads, "attention heads");
    cmd->add_option("--n-layers", enc.n_layers, "encoder layers");
    cmd->add_option("--d-ffn", enc.d_ffn, "feed-forward width");
    cmd->add_option("--r-clip", enc.r_clip, "relative clipping distance");
    cmd->add_option("--vocab-size", enc.vocab_size, "vocabulary size");
}

void add_train_flags(CLI::App* cmd, TrainSettings& train) {
    cmd->add_option("--epochs", train.epochs, "training epochs");
    cmd->add_option("--batch-size", train.batch_size, "mini-batch size");
    cmd->add_option("--lr", train.lr, "learning rate");
    cmd->add_option("--clip-norm", train.clip_norm, "global gradient-norm clip");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structural + sequential position encodings for self-attention"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key-value config file (flags override it)");
    app.allow_config_extras(CLI::config_extras_mode::error);

    AnnotateOptions an;
    std::string an_rule1 = "ancestor";
    auto* annotate_cmd = app.add_subcommand("annotate", "annotate a CoNLL-U treebank as JSON lines");
    annotate_cmd->add_option("--input", an.input, "CoNLL-U input file")->required();
    annotate_cmd->add_option("--output", an.output, "JSON-lines output file")->required();
    annotate_cmd->add_option("--r-clip", an.pos.r_clip, "relative clipping distance")
        ->check(CLI::PositiveNumber);
    annotate_cmd->add_option("--rule1", an_rule1, "rule-1 interpretation")
        ->check(CLI::IsMember({"ancestor", "edge"}));

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "train one configuration on a synthetic task");
    train_cmd->add_option("--task", tr.task, "depth or distance")
        ->check(CLI::IsMember({"depth", "distance"}));
    train_cmd->add_option("--row", tr.row, "ablation row 1..9")->check(CLI::Range(1, 9));
    train_cmd->add_option("--seed", tr.seed, "random seed");
    train_cmd->add_option("--checkpoint", tr.checkpoint_out, "checkpoint output path");
    train_cmd->add_option("--report", tr.report_out, "report JSON output path");
    train_cmd->add_option("--dataset-out", tr.dataset_out, "also dump the train set as JSON lines");
    train_cmd->add_option("--fusion", tr.fusion, "absolute fusion mode")
        ->check(CLI::IsMember({"nonlinear", "addition"}));
    train_cmd->add_option("--rule1", tr.rule1, "rule-1 interpretation")
        ->check(CLI::IsMember({"ancestor", "edge"}));
    train_cmd->add_option("--train-samples", tr.train_samples, "training sample count");
    train_cmd->add_option("--test-samples", tr.test_samples, "held-out sample count");
    train_cmd->add_option("--max-len", tr.max_len, "maximum sentence length");
    train_cmd->add_option("--threshold", tr.threshold, "distance-task threshold");
    train_cmd->add_option("--optimizer", tr.optimizer, "adam or sgd")
        ->check(CLI::IsMember({"adam", "sgd"}));
    add_encoder_flags(train_cmd, tr.enc);
    add_train_flags(train_cmd, tr.train);

    AblationOptions ab;
    auto* ablation_cmd = app.add_subcommand("ablation", "train several rows on identical data");
    ablation_cmd->add_option("--rows", ab.rows, "comma-separated row ids or 'all'");
    ablation_cmd->add_option("--seed", ab.seed, "random seed");
    ablation_cmd->add_option("--out-dir", ab.out_dir, "output directory")->required();
    ablation_cmd->add_option("--task", ab.task, "depth or distance")
        ->check(CLI::IsMember({"depth", "distance"}));
    ablation_cmd->add_option("--fusion", ab.fusion, "absolute fusion mode")
        ->check(CLI::IsMember({"nonlinear", "addition"}));
    ablation_cmd->add_option("--rule1", ab.rule1, "rule-1 interpretation")
        ->check(CLI::IsMember({"ancestor", "edge"}));
    ablation_cmd->add_option("--train-samples", ab.train_samples, "training sample count");
    ablation_cmd->add_option("--test-samples", ab.test_samples, "held-out sample count");
    ablation_cmd->add_option("--max-len", ab.max_len, "maximum sentence length");
    ablation_cmd->add_option("--threshold", ab.threshold, "distance-task threshold");
    add_encoder_flags(ablation_cmd, ab.enc);
    add_train_flags(ablation_cmd, ab.train);

    auto* selftest_cmd = app.add_subcommand("selftest", "run the verification suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (annotate_cmd->parsed()) {
            an.pos.rule1 = rule1_from_string(an_rule1);
            return cmd_annotate(an);
        }
        if (train_cmd->parsed()) return cmd_train(tr);
        if (ablation_cmd->parsed()) return cmd_ablation(ab);
        if (selftest_cmd->parsed()) return cmd_selftest();
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
