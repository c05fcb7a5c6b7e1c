#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "treepos/checkpoint.hpp"
#include "treepos/encoder.hpp"
#include "treepos/treegen.hpp"

#include "json.hpp"

namespace treepos {

enum class TaskKind { depth, distance };

std::string to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

// depth labels saturate here, giving kDepthClasses classes
inline constexpr int kDepthLabelCap = 7;
inline constexpr int kDepthClasses = kDepthLabelCap + 1;

struct PairTarget {
    int i = 0;
    int j = 0;
    int label = 0;
};

// One synthetic-task input: uniform-random token ids over a random tree, with
// supervision targets re-derivable from the tree.
struct TaskSample {
    std::vector<int> tokens;
    DepTree tree;
    std::vector<int> depth_labels;     // depth task
    std::vector<PairTarget> pairs;     // distance task
    int threshold = 0;                 // distance task

    nlohmann::json to_json() const;
    static TaskSample from_json(const nlohmann::json& j);
};

std::string dataset_to_jsonl(const std::vector<TaskSample>& samples);
std::vector<TaskSample> dataset_from_jsonl(const std::string& text);

// Tokens carry no depth information; target = per-token tree depth capped at
// kDepthLabelCap.
std::vector<TaskSample> gen_depth_task(int count, int max_len, int vocab_size,
                                       std::uint64_t seed);

// Query pairs labeled [tree_distance <= threshold], sampled with equal counts
// per (sequence-near?, label) cell so sequence distance is decorrelated from
// the label; trees that cannot fill all four cells are resampled.
std::vector<TaskSample> gen_distance_task(int count, int max_len, int vocab_size, int threshold,
                                          std::uint64_t seed);

// Pearson correlation between |i - j| and the pair label across the dataset.
double seq_label_correlation(const std::vector<TaskSample>& samples);

class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

// Encoder plus a task head sharing one parameter store: a per-token linear
// softmax head for the depth task, a per-pair bilinear head for the distance
// task. Heads are zero-initialized.
template <typename T>
class TaskModel {
public:
    // the encoder holds a pointer into store_, so the model must stay put
    TaskModel(const TaskModel&) = delete;
    TaskModel& operator=(const TaskModel&) = delete;

    TaskModel(const EncoderConfig& cfg, TaskKind task, std::uint64_t seed, Rule1 rule1 = Rule1::ancestor_path)
        : cfg_(cfg), task_(task), rule1_(rule1), rng_(seed), encoder_(cfg, &store_, rng_) {
        n_classes_ = task == TaskKind::depth ? kDepthClasses : 2;
        if (task == TaskKind::depth) {
            store_.create("head.weight", {n_classes_, cfg.d_model});
            store_.create("head.bias", {n_classes_});
        } else {
            store_.create("head.bilinear", {n_classes_, cfg.d_model, cfg.d_model});
            store_.create("head.bias", {n_classes_});
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    TaskKind task() const { return task_; }
    Rule1 rule1() const { return rule1_; }
    int n_classes() const { return n_classes_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    const EncoderModel<T>& encoder() const { return encoder_; }

    PositionAnnotation annotation_for(const TaskSample& s) const {
        PositionConfig pcfg{cfg_.d_model, cfg_.r_clip, cfg_.fusion_mode, rule1_};
        return annotate(s.tree, SubwordAlignment::identity(s.tree.n), pcfg);
    }

    // builds the forward graph for one sample; returns {loss, logits}
    std::pair<typename Graph<T>::NodeId, typename Graph<T>::NodeId> sample_graph(
        Graph<T>& g, const TaskSample& s, const PositionAnnotation& ann) const {
        auto h = encoder_.forward(g, s.tokens, ann);
        if (task_ == TaskKind::depth) {
            auto logits = g.add_row_broadcast(g.matmul_nt(h, g.param(&store_.at("head.weight"))),
                                              g.param(&store_.at("head.bias")));
            return {g.cross_entropy_mean(logits, s.depth_labels), logits};
        }
        std::vector<std::pair<int, int>> idx;
        std::vector<int> labels;
        idx.reserve(s.pairs.size());
        for (const PairTarget& p : s.pairs) {
            idx.emplace_back(p.i, p.j);
            labels.push_back(p.label);
        }
        auto logits = g.bilinear_pair(h, g.param(&store_.at("head.bilinear")),
                                      g.param(&store_.at("head.bias")), std::move(idx));
        return {g.cross_entropy_mean(logits, labels), logits};
    }

    // argmax predictions (per token or per pair)
    std::vector<int> predict(const TaskSample& s, const PositionAnnotation& ann) const {
        Graph<T> g;
        auto [loss, logits] = sample_graph(g, s, ann);
        (void)loss;
        const Tensor<T>& L = g.value(logits);
        std::vector<int> out(std::size_t(L.dim(0)));
        for (int i = 0; i < L.dim(0); ++i) {
            int best = 0;
            for (int c = 1; c < L.dim(1); ++c)
                if (L.at(i, c) > L.at(i, best)) best = c;
            out[std::size_t(i)] = best;
        }
        return out;
    }

    std::vector<int> targets_of(const TaskSample& s) const {
        if (task_ == TaskKind::depth) return s.depth_labels;
        std::vector<int> labels;
        labels.reserve(s.pairs.size());
        for (const PairTarget& p : s.pairs) labels.push_back(p.label);
        return labels;
    }

private:
    EncoderConfig cfg_;
    TaskKind task_;
    Rule1 rule1_;
    int n_classes_ = 2;
    mutable ParamStore<T> store_;
    Rng rng_;
    EncoderModel<T> encoder_;
};

enum class OptimizerKind { adam, sgd };

struct TrainSettings {
    int epochs = 5;
    int batch_size = 16;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double clip_norm = 1.0;
    std::uint64_t seed = 1;
};

struct RunReport {
    int config_row = 0;
    std::string task;
    std::string flags;  // abs_seq, rel_seq, abs_stru, rel_stru as 0/1
    std::vector<double> epoch_loss;
    std::vector<double> epoch_accuracy;
    double final_accuracy = 0;
    double baseline_accuracy = 0;    // label-marginal predictor on held-out data
    double baseline_stderr = 0;
    int train_count = 0;
    int test_count = 0;
    double wallclock_seconds = 0;

    nlohmann::json to_json() const;
    static RunReport from_json(const nlohmann::json& j);
};

struct EvalResult {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total == 0 ? 0.0 : double(correct) / double(total); }
};

EvalResult evaluate(const TaskModel<float>& model, const std::vector<TaskSample>& samples);

// accuracy of always predicting the most frequent train label, measured on
// the held-out set, with its binomial standard error
std::pair<double, double> label_marginal_baseline(TaskKind task,
                                                  const std::vector<TaskSample>& train,
                                                  const std::vector<TaskSample>& test);

// Mini-batch training: gradients accumulate per batch, are mean-scaled,
// clipped to clip_norm (global L2), then stepped. Deterministic given seeds;
// throws TrainError on a non-finite loss.
RunReport train(TaskModel<float>& model, const std::vector<TaskSample>& train_set,
                const std::vector<TaskSample>& test_set, const TrainSettings& settings);

struct AblationSettings {
    TaskKind task = TaskKind::distance;
    int train_count = 4000;
    int test_count = 1000;
    int max_len = 24;
    int threshold = 2;
    std::uint64_t data_seed = 1;
    EncoderConfig base;       // flags overwritten per row; vocab_size also feeds generation
    Rule1 rule1 = Rule1::ancestor_path;
    TrainSettings train;
};

// Trains each requested row on identical data and seeds.
std::vector<RunReport> run_ablation(std::vector<int> rows, const AblationSettings& settings);

// one CSV line per report: row, flags, final accuracy, wall-clock
std::string ablation_csv(const std::vector<RunReport>& reports);

// checkpoint helpers for task models
void save_task_model(const std::string& path, const TaskModel<float>& model);
std::unique_ptr<TaskModel<float>> load_task_model(const std::string& path);

}  // namespace treepos
