#include "treepos/harness.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace treepos {

std::string to_string(TaskKind t) { return t == TaskKind::depth ? "depth" : "distance"; }

TaskKind task_from_string(const std::string& s) {
    if (s == "depth") return TaskKind::depth;
    if (s == "distance") return TaskKind::distance;
    throw std::invalid_argument("unknown task '" + s + "'");
}

nlohmann::json TaskSample::to_json() const {
    nlohmann::json j;
    j["tokens"] = tokens;
    j["parent"] = tree.parent;
    j["deprel"] = tree.deprel;
    if (!depth_labels.empty()) {
        j["task"] = "depth";
        j["labels"] = depth_labels;
    } else {
        j["task"] = "distance";
        j["threshold"] = threshold;
        nlohmann::json ps = nlohmann::json::array();
        for (const PairTarget& p : pairs) ps.push_back({p.i, p.j, p.label});
        j["pairs"] = ps;
    }
    return j;
}

TaskSample TaskSample::from_json(const nlohmann::json& j) {
    TaskSample s;
    s.tokens = j.at("tokens").get<std::vector<int>>();
    s.tree = make_tree(j.at("parent").get<std::vector<int>>(),
                       j.value("deprel", std::vector<std::string>{}));
    if (j.at("task") == "depth") {
        s.depth_labels = j.at("labels").get<std::vector<int>>();
    } else {
        s.threshold = j.at("threshold").get<int>();
        for (const auto& p : j.at("pairs"))
            s.pairs.push_back({p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>()});
    }
    return s;
}

std::string dataset_to_jsonl(const std::vector<TaskSample>& samples) {
    std::string out;
    for (const TaskSample& s : samples) {
        out += s.to_json().dump();
        out += '\n';
    }
    return out;
}

std::vector<TaskSample> dataset_from_jsonl(const std::string& text) {
    std::vector<TaskSample> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(TaskSample::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

std::vector<TaskSample> gen_depth_task(int count, int max_len, int vocab_size,
                                       std::uint64_t seed) {
    if (max_len < 2) throw std::invalid_argument("gen_depth_task: max_len must be >= 2");
    Rng rng(seed);
    std::vector<TaskSample> out;
    out.reserve(std::size_t(count));
    for (int c = 0; c < count; ++c) {
        const int len = rng.uniform_int(std::min(4, max_len), max_len);
        TaskSample s;
        s.tree = random_permuted_tree(rng, len);
        s.tokens.resize(std::size_t(len));
        for (int& t : s.tokens) t = rng.uniform_int(0, vocab_size - 1);
        s.depth_labels.resize(std::size_t(len));
        for (int i = 0; i < len; ++i)
            s.depth_labels[std::size_t(i)] = std::min(s.tree.depth[std::size_t(i)], kDepthLabelCap);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

// all-pairs tree distances via the depth/parent walk (small n)
std::vector<int> all_pairs_distance(const DepTree& tree) {
    const int n = tree.n;
    std::vector<int> d(std::size_t(n) * std::size_t(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            int v = tree_distance(tree, i, j);
            d[std::size_t(i) * std::size_t(n) + std::size_t(j)] = v;
            d[std::size_t(j) * std::size_t(n) + std::size_t(i)] = v;
        }
    return d;
}

}  // namespace

std::vector<TaskSample> gen_distance_task(int count, int max_len, int vocab_size, int threshold,
                                          std::uint64_t seed) {
    if (threshold < 1) throw std::invalid_argument("gen_distance_task: threshold must be >= 1");
    if (max_len < 8) throw std::invalid_argument("gen_distance_task: max_len must be >= 8");
    constexpr int kPairsPerCell = 2;
    constexpr int kSeqNearCut = 3;  // |i-j| <= cut counts as near in sequence

    Rng rng(seed);
    std::vector<TaskSample> out;
    out.reserve(std::size_t(count));
    int degenerate = 0;
    while (int(out.size()) < count) {
        const int len = rng.uniform_int(8, max_len);
        DepTree tree = random_permuted_tree(rng, len);
        std::vector<int> dist = all_pairs_distance(tree);

        // cells indexed by (seq_near, label)
        std::array<std::vector<std::pair<int, int>>, 4> cells;
        for (int i = 0; i < len; ++i)
            for (int j = i + 1; j < len; ++j) {
                const bool seq_near = (j - i) <= kSeqNearCut;
                const bool tree_near = dist[std::size_t(i) * std::size_t(len) + std::size_t(j)] <= threshold;
                cells[std::size_t((seq_near ? 2 : 0) + (tree_near ? 1 : 0))].emplace_back(i, j);
            }
        bool ok = true;
        for (const auto& cell : cells) ok = ok && int(cell.size()) >= kPairsPerCell;
        if (!ok) {
            // DegenerateTree: cannot stratify; resample
            if (++degenerate > 10000 * (count + 1))
                throw TrainError("DegenerateTree: stratified sampling keeps failing");
            continue;
        }

        TaskSample s;
        s.tree = std::move(tree);
        s.threshold = threshold;
        s.tokens.resize(std::size_t(len));
        for (int& t : s.tokens) t = rng.uniform_int(0, vocab_size - 1);
        for (auto& cell : cells) {
            rng.shuffle(cell);
            for (int p = 0; p < kPairsPerCell; ++p) {
                auto [i, j] = cell[std::size_t(p)];
                if (rng.bernoulli(0.5)) std::swap(i, j);
                const bool tree_near =
                    dist[std::size_t(i) * std::size_t(len) + std::size_t(j)] <= threshold;
                s.pairs.push_back({i, j, tree_near ? 1 : 0});
            }
        }
        out.push_back(std::move(s));
    }

    const double corr = seq_label_correlation(out);
    if (std::abs(corr) >= 0.2)
        throw TrainError("distance task generation failed decorrelation: corr = " +
                         std::to_string(corr));
    return out;
}

double seq_label_correlation(const std::vector<TaskSample>& samples) {
    double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (const TaskSample& s : samples)
        for (const PairTarget& p : s.pairs) {
            const double x = std::abs(p.i - p.j);
            const double y = p.label;
            n += 1;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    if (n < 2) return 0;
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    if (vx <= 0 || vy <= 0) return 0;
    return cov / std::sqrt(vx * vy);
}

EvalResult evaluate(const TaskModel<float>& model, const std::vector<TaskSample>& samples) {
    EvalResult r;
    for (const TaskSample& s : samples) {
        PositionAnnotation ann = model.annotation_for(s);
        std::vector<int> pred = model.predict(s, ann);
        std::vector<int> gold = model.targets_of(s);
        for (std::size_t k = 0; k < gold.size(); ++k) {
            r.total += 1;
            if (pred[k] == gold[k]) r.correct += 1;
        }
    }
    return r;
}

std::pair<double, double> label_marginal_baseline(TaskKind task,
                                                  const std::vector<TaskSample>& train,
                                                  const std::vector<TaskSample>& test) {
    const int classes = task == TaskKind::depth ? kDepthClasses : 2;
    std::vector<long> counts(std::size_t(classes), 0);
    auto labels_of = [&](const TaskSample& s) {
        std::vector<int> out;
        if (task == TaskKind::depth) {
            out = s.depth_labels;
        } else {
            for (const PairTarget& p : s.pairs) out.push_back(p.label);
        }
        return out;
    };
    for (const TaskSample& s : train)
        for (int l : labels_of(s)) counts[std::size_t(l)] += 1;
    int best = 0;
    for (int c = 1; c < classes; ++c)
        if (counts[std::size_t(c)] > counts[std::size_t(best)]) best = c;

    long correct = 0, total = 0;
    for (const TaskSample& s : test)
        for (int l : labels_of(s)) {
            total += 1;
            if (l == best) correct += 1;
        }
    const double acc = total == 0 ? 0.0 : double(correct) / double(total);
    const double se = total == 0 ? 0.0 : std::sqrt(acc * (1.0 - acc) / double(total));
    return {acc, se};
}

namespace {

class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

    void step(ParamStore<float>& params) {
        ++t_;
        if (kind_ == OptimizerKind::sgd) {
            for (auto& [name, p] : params.entries())
                for (std::size_t i = 0; i < p.data.size(); ++i)
                    p.data[i] -= float(lr_) * p.grad[i];
            return;
        }
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, t_);
        const double bc2 = 1.0 - std::pow(b2, t_);
        for (auto& [name, p] : params.entries()) {
            auto& [m, v] = state_[name];
            if (m.size() != p.data.size()) {
                m.assign(p.data.size(), 0.0);
                v.assign(p.data.size(), 0.0);
            }
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                const double g = p.grad[i];
                m[i] = b1 * m[i] + (1 - b1) * g;
                v[i] = b2 * v[i] + (1 - b2) * g * g;
                p.data[i] -= float(lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps));
            }
        }
    }

private:
    OptimizerKind kind_;
    double lr_;
    int t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

void scale_and_clip_grads(ParamStore<float>& params, double scale, double clip_norm) {
    for (auto& [name, p] : params.entries())
        for (float& g : p.grad) g = float(g * scale);
    if (clip_norm > 0) {
        const double norm = params.grad_norm();
        if (norm > clip_norm) {
            const double shrink = clip_norm / norm;
            for (auto& [name, p] : params.entries())
                for (float& g : p.grad) g = float(g * shrink);
        }
    }
}

}  // namespace

RunReport train(TaskModel<float>& model, const std::vector<TaskSample>& train_set,
                const std::vector<TaskSample>& test_set, const TrainSettings& settings) {
    if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<PositionAnnotation> train_ann;
    train_ann.reserve(train_set.size());
    for (const TaskSample& s : train_set) train_ann.push_back(model.annotation_for(s));

    RunReport report;
    report.task = to_string(model.task());
    report.flags = model.config().flags_string();
    report.train_count = int(train_set.size());
    report.test_count = int(test_set.size());

    Optimizer opt(settings.optimizer, settings.lr);
    Rng order_rng(settings.seed ^ 0x5deece66dull);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    int step = 0;
    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0;
        long loss_n = 0, correct = 0, total = 0;
        std::size_t at = 0;
        while (at < order.size()) {
            const std::size_t batch_end = std::min(at + std::size_t(settings.batch_size), order.size());
            const int batch_n = int(batch_end - at);
            model.params().zero_grads();
            for (; at < batch_end; ++at) {
                const TaskSample& s = train_set[order[at]];
                Graph<float> g;
                auto [loss, logits] = model.sample_graph(g, s, train_ann[order[at]]);
                const float lv = g.value(loss).data[0];
                if (!std::isfinite(lv))
                    throw TrainError("NonFiniteLoss: loss=" + std::to_string(lv) + " at step " +
                                     std::to_string(step) + ", epoch " + std::to_string(epoch) +
                                     ", sample " + std::to_string(order[at]));
                g.backward(loss);
                loss_sum += lv;
                loss_n += 1;
                const Tensor<float>& L = g.value(logits);
                const std::vector<int> gold = model.targets_of(s);
                for (int r = 0; r < L.dim(0); ++r) {
                    int best = 0;
                    for (int c = 1; c < L.dim(1); ++c)
                        if (L.at(r, c) > L.at(r, best)) best = c;
                    total += 1;
                    if (best == gold[std::size_t(r)]) correct += 1;
                }
            }
            scale_and_clip_grads(model.params(), 1.0 / batch_n, settings.clip_norm);
            opt.step(model.params());
            ++step;
        }
        report.epoch_loss.push_back(loss_sum / double(loss_n));
        report.epoch_accuracy.push_back(total == 0 ? 0.0 : double(correct) / double(total));
    }

    report.final_accuracy = evaluate(model, test_set).accuracy();
    auto [bacc, bse] = label_marginal_baseline(model.task(), train_set, test_set);
    report.baseline_accuracy = bacc;
    report.baseline_stderr = bse;
    report.wallclock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

nlohmann::json RunReport::to_json() const {
    return {{"config_row", config_row},
            {"task", task},
            {"flags", flags},
            {"epoch_loss", epoch_loss},
            {"epoch_accuracy", epoch_accuracy},
            {"final_accuracy", final_accuracy},
            {"baseline_accuracy", baseline_accuracy},
            {"baseline_stderr", baseline_stderr},
            {"train_count", train_count},
            {"test_count", test_count},
            {"wallclock_seconds", wallclock_seconds}};
}

RunReport RunReport::from_json(const nlohmann::json& j) {
    RunReport r;
    r.config_row = j.at("config_row").get<int>();
    r.task = j.at("task").get<std::string>();
    r.flags = j.at("flags").get<std::string>();
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    r.epoch_accuracy = j.at("epoch_accuracy").get<std::vector<double>>();
    r.final_accuracy = j.at("final_accuracy").get<double>();
    r.baseline_accuracy = j.at("baseline_accuracy").get<double>();
    r.baseline_stderr = j.at("baseline_stderr").get<double>();
    r.train_count = j.at("train_count").get<int>();
    r.test_count = j.at("test_count").get<int>();
    r.wallclock_seconds = j.at("wallclock_seconds").get<double>();
    return r;
}

std::vector<RunReport> run_ablation(std::vector<int> rows, const AblationSettings& settings) {
    std::sort(rows.begin(), rows.end());
    const int vocab = settings.base.vocab_size;
    std::vector<TaskSample> train_set, test_set;
    if (settings.task == TaskKind::depth) {
        train_set = gen_depth_task(settings.train_count, settings.max_len, vocab,
                                   settings.data_seed);
        test_set = gen_depth_task(settings.test_count, settings.max_len, vocab,
                                  settings.data_seed + 1);
    } else {
        train_set = gen_distance_task(settings.train_count, settings.max_len, vocab,
                                      settings.threshold, settings.data_seed);
        test_set = gen_distance_task(settings.test_count, settings.max_len, vocab,
                                     settings.threshold, settings.data_seed + 1);
    }

    std::vector<RunReport> reports;
    for (int row : rows) {
        EncoderConfig cfg = settings.base;
        cfg.apply_row(row);
        TaskModel<float> model(cfg, settings.task, settings.train.seed, settings.rule1);
        RunReport r = train(model, train_set, test_set, settings.train);
        r.config_row = row;
        reports.push_back(std::move(r));
    }
    return reports;
}

std::string ablation_csv(const std::vector<RunReport>& reports) {
    std::ostringstream out;
    out << "row,abs_seq,rel_seq,abs_stru,rel_stru,final_accuracy,wallclock_seconds\n";
    for (const RunReport& r : reports) {
        out << r.config_row;
        for (char f : r.flags) out << ',' << f;
        out << ',' << r.final_accuracy << ',' << r.wallclock_seconds << '\n';
    }
    return out.str();
}

void save_task_model(const std::string& path, const TaskModel<float>& model) {
    nlohmann::json cfg;
    cfg["encoder"] = model.config().to_json();
    cfg["task"] = to_string(model.task());
    cfg["rule1"] = to_string(model.rule1());
    save_checkpoint(path, cfg, model.params());
}

std::unique_ptr<TaskModel<float>> load_task_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    EncoderConfig cfg = EncoderConfig::from_json(ck.config.at("encoder"));
    TaskKind task = task_from_string(ck.config.at("task").get<std::string>());
    Rule1 rule1 = rule1_from_string(ck.config.at("rule1").get<std::string>());
    auto model = std::make_unique<TaskModel<float>>(cfg, task, /*seed=*/0, rule1);
    load_into(model->params(), ck);
    return model;
}

}  // namespace treepos
