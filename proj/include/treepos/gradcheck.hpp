#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "treepos/encoder.hpp"
#include "treepos/treegen.hpp"

namespace treepos {

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst_param;
    std::size_t checked = 0;
};

// Compares analytic gradients against central differences in double
// precision. The loss is a fixed random weighted sum of the encoder outputs,
// which touches every parameter the configuration activates; at least
// min(sample_per_group, group size) entries of every parameter are probed.
inline GradCheckReport grad_check_detail(const EncoderConfig& cfg, std::uint64_t seed, double eps,
                                         int sample_per_group = 50) {
    if (!(eps > 0))
        throw std::invalid_argument("PrecisionLoss: epsilon must be positive");

    Rng rng(seed);
    ParamStore<double> store;
    EncoderModel<double> model(cfg, &store, rng);

    const int len = 7;
    DepTree tree = random_permuted_tree(rng, len);
    PositionConfig pcfg{cfg.d_model, cfg.r_clip, cfg.fusion_mode, Rule1::ancestor_path};
    PositionAnnotation ann = annotate(tree, SubwordAlignment::identity(len), pcfg);
    std::vector<int> tokens(std::size_t(len), 0);
    for (int& t : tokens) t = rng.uniform_int(0, cfg.vocab_size - 1);

    Tensor<double> coeff({len, cfg.d_model});
    for (double& c : coeff.data) c = rng.uniform(-1.0, 1.0);

    auto loss_value = [&]() {
        Graph<double> g;
        auto out = model.forward(g, tokens, ann);
        return g.value(g.weighted_sum(out, coeff)).data[0];
    };

    store.zero_grads();
    {
        Graph<double> g;
        auto out = model.forward(g, tokens, ann);
        g.backward(g.weighted_sum(out, coeff));
    }

    GradCheckReport report;
    for (auto& [name, t] : store.entries()) {
        const std::size_t n = t.numel();
        std::vector<std::size_t> picks;
        if (n <= std::size_t(sample_per_group)) {
            picks.resize(n);
            for (std::size_t i = 0; i < n; ++i) picks[i] = i;
        } else {
            for (int s = 0; s < sample_per_group; ++s)
                picks.push_back(std::size_t(rng.next_u64() % n));
        }
        for (std::size_t idx : picks) {
            const double orig = t.data[idx];
            auto central = [&](double step) {
                t.data[idx] = orig + step;
                const double up = loss_value();
                t.data[idx] = orig - step;
                const double down = loss_value();
                t.data[idx] = orig;
                return (up - down) / (2 * step);
            };
            // Richardson-extrapolated central differences: the base step is
            // eps, a second quotient at eps/2 cancels the O(eps^2) truncation
            // term so the reference resolves gradients well below eps^2
            const double numeric = (4.0 * central(eps / 2) - central(eps)) / 3.0;
            const double analytic = t.grad[idx];
            const double denom = std::max(std::abs(numeric), std::abs(analytic));
            const double rel = denom > 1e-8 ? std::abs(numeric - analytic) / denom
                                            : std::abs(numeric - analytic);
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name + "[" + std::to_string(idx) + "]";
            }
        }
    }
    return report;
}

// Deterministic given the seed; returns the maximum relative error across all
// sampled parameters.
inline double grad_check(const EncoderConfig& cfg, std::uint64_t seed, double eps) {
    return grad_check_detail(cfg, seed, eps).max_rel_error;
}

}  // namespace treepos
