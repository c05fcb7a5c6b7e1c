#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "treepos/harness.hpp"
#include "treepos/reference.hpp"
#include "treepos/treegen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace treepos;

namespace {

const std::string kCli = TREEPOS_CLI_PATH;
const fs::path kData = TREEPOS_DATA_DIR;

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path dir = fs::path("cli_scratch");
    fs::create_directories(dir);
    fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
    fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    std::string cmd = kCli + " " + args + " >" + out.string() + " 2>" + err.string();
    int rc = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::vector<json> jsonl_lines(const std::string& text) {
    std::vector<json> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(json::parse(line));
    return lines;
}

}  // namespace

TEST_CASE("annotate: fixture file gives one JSON line and exit 0") {
    fs::create_directories("cli_scratch");
    CmdResult r = run_cli("annotate --input " + (kData / "fixture.conllu").string() +
                          " --output cli_scratch/fixture.jsonl");
    CHECK(r.exit_code == 0);
    CHECK(r.err.find("annotated 1 sentence(s), skipped 0") != std::string::npos);

    auto lines = jsonl_lines(slurp("cli_scratch/fixture.jsonl"));
    REQUIRE(lines.size() == 1);
    const json& j = lines[0];
    CHECK(j.at("tokens") == json({"Bush", "held", "a", "talk", "with", "Sharon"}));
    CHECK(j.at("abs_stru") == json({1, 0, 2, 1, 2, 1}));
    CHECK(j.at("abs_seq") == json({0, 1, 2, 3, 4, 5}));
    CHECK(j.at("r_clip") == 16);
    CHECK(j.at("rule1_interpretation") == "ancestor");
    // rel matrices at sub-word granularity, row-major, 6x6
    CHECK(j.at("rel_seq").size() == 36);
    CHECK(j.at("rel_stru").size() == 36);
    // talk (3) vs held (1): structural +1 where sequential is -2
    CHECK(j.at("rel_stru")[3 * 6 + 1] == 1);
    CHECK(j.at("rel_seq")[3 * 6 + 1] == -2);
}

TEST_CASE("annotate: verifier reproduces the relative matrices from tree + abs values") {
    CmdResult r = run_cli("annotate --input " + (kData / "fixture.conllu").string() +
                          " --output cli_scratch/verify.jsonl --r-clip 5 --rule1 edge");
    REQUIRE(r.exit_code == 0);
    auto lines = jsonl_lines(slurp("cli_scratch/verify.jsonl"));
    REQUIRE(lines.size() == 1);
    const json& j = lines[0];

    DepTree tree = parse_conllu(slurp(kData / "fixture.conllu")).at(0);
    const int len = tree.n;
    // independent recomputation from the parsed tree
    auto want_stru = reference::rel_structural_oracle(
        tree.parent, SubwordAlignment::identity(len).word_of_subword, false,
        /*literal_edge=*/true, /*r_clip=*/5);
    CHECK(j.at("rel_stru").get<std::vector<int>>() == want_stru);
    CHECK(j.at("abs_stru").get<std::vector<int>>() ==
          reference::abs_structural_oracle(tree.parent,
                                           SubwordAlignment::identity(len).word_of_subword, false));
    std::vector<int> want_seq;
    for (int i = 0; i < len; ++i)
        for (int jj = 0; jj < len; ++jj)
            want_seq.push_back(std::clamp(jj - i, -5, 5));
    CHECK(j.at("rel_seq").get<std::vector<int>>() == want_seq);
}

TEST_CASE("annotate: cyclic sentence among three is skipped with a warning") {
    CmdResult r = run_cli("annotate --input " + (kData / "messy.conllu").string() +
                          " --output cli_scratch/messy.jsonl");
    CHECK(r.exit_code == 0);
    CHECK(r.err.find("skipping sentence 2") != std::string::npos);
    CHECK(r.err.find("CycleDetected") != std::string::npos);
    CHECK(r.err.find("annotated 2 sentence(s), skipped 1") != std::string::npos);
    CHECK(jsonl_lines(slurp("cli_scratch/messy.jsonl")).size() == 2);
}

TEST_CASE("annotate: empty input exits 2") {
    std::ofstream("cli_scratch/empty.conllu").close();
    CmdResult r =
        run_cli("annotate --input cli_scratch/empty.conllu --output cli_scratch/empty.jsonl");
    CHECK(r.exit_code == 2);
}

TEST_CASE("annotate: unreadable input exits 1") {
    CmdResult r = run_cli("annotate --input cli_scratch/no_such_file.conllu --output x.jsonl");
    CHECK(r.exit_code == 1);
}

TEST_CASE("usage errors exit 64") {
    CHECK(run_cli("train --row 10 --out-dir x").exit_code == 64);
    CHECK(run_cli("train --task nonsense").exit_code == 64);
    CHECK(run_cli("frobnicate").exit_code == 64);
    CHECK(run_cli("ablation --rows 1").exit_code == 64);  // --out-dir required
    CHECK(run_cli("").exit_code == 64);                   // subcommand required
}

TEST_CASE("train: row 2 depth run clears 0.95 and writes artifacts") {
    CmdResult r = run_cli(
        "train --task depth --row 2 --seed 5 --train-samples 1000 --test-samples 300"
        " --max-len 14 --epochs 3 --checkpoint cli_scratch/row2.ckpt"
        " --report cli_scratch/row2.json --dataset-out cli_scratch/row2.jsonl");
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp("cli_scratch/row2.json"));
    CHECK(report.at("config_row") == 2);
    CHECK(report.at("flags") == "0010");
    CHECK(report.at("final_accuracy").get<double>() > 0.95);

    // checkpoint reload reproduces the reported accuracy
    auto model = load_task_model("cli_scratch/row2.ckpt");
    auto test_set = gen_depth_task(300, 14, model->config().vocab_size, 6);
    CHECK(evaluate(*model, test_set).accuracy() ==
          doctest::Approx(report.at("final_accuracy").get<double>()).epsilon(1e-12));

    // dumped dataset parses back
    auto dumped = dataset_from_jsonl(slurp("cli_scratch/row2.jsonl"));
    CHECK(int(dumped.size()) == 1000);
}

TEST_CASE("ablation: all nine rows give nine reports plus one CSV") {
    CmdResult r = run_cli(
        "ablation --rows all --task depth --seed 2 --train-samples 60 --test-samples 30"
        " --max-len 9 --epochs 1 --out-dir cli_scratch/ab_all");
    REQUIRE(r.exit_code == 0);
    int reports = 0;
    for (int row = 1; row <= 9; ++row)
        reports += fs::exists("cli_scratch/ab_all/report-row" + std::to_string(row) + ".json");
    CHECK(reports == 9);
    std::istringstream in(slurp("cli_scratch/ab_all/comparison.csv"));
    std::string line;
    int lines = 0, expect_row = 0;
    while (std::getline(in, line)) {
        if (lines > 0) CHECK(line.rfind(std::to_string(expect_row) + ",", 0) == 0);
        ++lines;
        ++expect_row;
    }
    CHECK(lines == 10);  // header + nine rows, ordered by row id
}

TEST_CASE("ablation: three rows give three reports plus a CSV, reproducibly") {
    const std::string common =
        "ablation --rows 4,1,9 --task depth --seed 3 --train-samples 120 --test-samples 60"
        " --max-len 10 --epochs 1";
    CmdResult r1 = run_cli(common + " --out-dir cli_scratch/ab1");
    REQUIRE(r1.exit_code == 0);
    for (int row : {1, 4, 9})
        CHECK(fs::exists("cli_scratch/ab1/report-row" + std::to_string(row) + ".json"));

    std::string csv = slurp("cli_scratch/ab1/comparison.csv");
    std::istringstream in(csv);
    std::string header, line1, line4, line9;
    std::getline(in, header);
    std::getline(in, line1);
    std::getline(in, line4);
    std::getline(in, line9);
    CHECK(header == "row,abs_seq,rel_seq,abs_stru,rel_stru,final_accuracy,wallclock_seconds");
    CHECK(line1.rfind("1,0,0,0,0,", 0) == 0);  // ordered by row id
    CHECK(line4.rfind("4,1,0,0,0,", 0) == 0);
    CHECK(line9.rfind("9,1,1,1,1,", 0) == 0);

    CmdResult r2 = run_cli(common + " --out-dir cli_scratch/ab2");
    REQUIRE(r2.exit_code == 0);
    // deterministic apart from the wall-clock column
    auto strip_wallclock = [](const std::string& text) {
        std::istringstream ss(text);
        std::string out, line;
        while (std::getline(ss, line)) {
            auto last = line.rfind(',');
            out += line.substr(0, last);
            out += '\n';
        }
        return out;
    };
    CHECK(strip_wallclock(csv) == strip_wallclock(slurp("cli_scratch/ab2/comparison.csv")));
}

TEST_CASE("config file values are overridden by explicit flags") {
    {
        std::ofstream cfg("cli_scratch/train.cfg");
        cfg << "train.max-len=9\n";
        cfg << "train.epochs=1\n";
        cfg << "train.train-samples=40\n";
        cfg << "train.test-samples=20\n";
        cfg << "train.row=1\n";
    }
    CmdResult r = run_cli("--config cli_scratch/train.cfg train --task depth --row 2 --seed 9"
                          " --report cli_scratch/cfg_report.json");
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp("cli_scratch/cfg_report.json"));
    CHECK(report.at("config_row") == 2);          // flag wins over config file
    CHECK(report.at("train_count") == 40);        // config file applies
}

TEST_CASE("single-thread env var still annotates in input order") {
    CmdResult r = run_cli("annotate --input " + (kData / "messy.conllu").string() +
                          " --output cli_scratch/messy_st.jsonl");
    setenv("TREEPOS_SINGLE_THREAD", "1", 1);
    CmdResult r2 = run_cli("annotate --input " + (kData / "messy.conllu").string() +
                           " --output cli_scratch/messy_st2.jsonl");
    unsetenv("TREEPOS_SINGLE_THREAD");
    CHECK(r.exit_code == 0);
    CHECK(r2.exit_code == 0);
    CHECK(slurp("cli_scratch/messy_st.jsonl") == slurp("cli_scratch/messy_st2.jsonl"));
}

TEST_CASE("train: distance task on row 1 reports chance-level accuracy") {
    CmdResult r = run_cli(
        "train --task distance --row 1 --seed 4 --train-samples 150 --test-samples 60"
        " --max-len 12 --epochs 1 --report cli_scratch/row1_dist.json");
    CHECK(r.exit_code == 0);
    json report = json::parse(slurp("cli_scratch/row1_dist.json"));
    // labels are balanced by construction, so chance sits at one half
    CHECK(report.at("baseline_accuracy").get<double>() == doctest::Approx(0.5));
    CHECK(report.at("final_accuracy").get<double>() > 0.35);
    CHECK(report.at("final_accuracy").get<double>() < 0.65);
}

TEST_CASE("selftest command passes on a clean build") {
    CmdResult r = run_cli("selftest");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("[PASS] oracle-equivalence") != std::string::npos);
    CHECK(r.out.find("[PASS] antisymmetry") != std::string::npos);
    CHECK(r.out.find("[PASS] permutation-equivariance") != std::string::npos);
    CHECK(r.out.find("[PASS] grad-check") != std::string::npos);
    CHECK(r.out.find("[FAIL]") == std::string::npos);
}

TEST_CASE("annotate: parallel and single-threaded runs agree on a larger corpus") {
    // enough sentences to engage the worker pool
    Rng rng(77);
    std::string corpus;
    for (int s = 0; s < 48; ++s) corpus += to_conllu(random_permuted_tree(rng, rng.uniform_int(2, 12)));
    {
        std::ofstream out("cli_scratch/big.conllu", std::ios::binary);
        out << corpus;
    }
    CmdResult par = run_cli("annotate --input cli_scratch/big.conllu --output cli_scratch/big_par.jsonl");
    setenv("TREEPOS_SINGLE_THREAD", "1", 1);
    CmdResult seq = run_cli("annotate --input cli_scratch/big.conllu --output cli_scratch/big_seq.jsonl");
    unsetenv("TREEPOS_SINGLE_THREAD");
    CHECK(par.exit_code == 0);
    CHECK(seq.exit_code == 0);
    CHECK(jsonl_lines(slurp("cli_scratch/big_par.jsonl")).size() == 48);
    CHECK(slurp("cli_scratch/big_par.jsonl") == slurp("cli_scratch/big_seq.jsonl"));
}
