#include "strategies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace gradal::strat {

StrategyKind parse_strategy(const std::string& name) {
    if (name == "expected-gradnorm") return StrategyKind::ExpectedGradnorm;
    if (name == "entropy-gradnorm") return StrategyKind::EntropyGradnorm;
    if (name == "random") return StrategyKind::Random;
    if (name == "max-entropy") return StrategyKind::MaxEntropy;
    if (name == "margin") return StrategyKind::Margin;
    if (name == "least-confidence") return StrategyKind::LeastConfidence;
    if (name == "kcenter-greedy") return StrategyKind::KCenterGreedy;
    fail(Status::ConfigError, "strategy: unknown kind '" + name + "'");
}

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::ExpectedGradnorm: return "expected-gradnorm";
        case StrategyKind::EntropyGradnorm: return "entropy-gradnorm";
        case StrategyKind::Random: return "random";
        case StrategyKind::MaxEntropy: return "max-entropy";
        case StrategyKind::Margin: return "margin";
        case StrategyKind::LeastConfidence: return "least-confidence";
        case StrategyKind::KCenterGreedy: return "kcenter-greedy";
    }
    return "?";
}

bool is_gradnorm(StrategyKind kind) {
    return kind == StrategyKind::ExpectedGradnorm || kind == StrategyKind::EntropyGradnorm;
}

double score_expected_gradnorm(const models::TaskModel& model, std::span<const double> x,
                               bool last_layer_only) {
    auto g = models::loss_gradient(model, x, models::LossKind::Expected, -1, last_layer_only);
    return stats::l2_norm(g);
}

double score_entropy_gradnorm(const models::TaskModel& model, std::span<const double> x,
                              bool last_layer_only) {
    auto g = models::loss_gradient(model, x, models::LossKind::Entropy, -1, last_layer_only);
    return stats::l2_norm(g);
}

double score_baseline(StrategyKind kind, const models::TaskModel& model, std::span<const double> x,
                      uint64_t seed, int sample_index) {
    switch (kind) {
        case StrategyKind::Random:
            return unit_double(mix_seed({seed, 0x72616e64ULL, static_cast<uint64_t>(sample_index)}));
        case StrategyKind::MaxEntropy:
            return models::entropy_loss(model, x);
        case StrategyKind::Margin: {
            auto p = models::predict_posterior(model, x);
            std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<double>());
            return -(p[0] - p[1]);
        }
        case StrategyKind::LeastConfidence: {
            auto p = models::predict_posterior(model, x);
            return 1.0 - *std::max_element(p.begin(), p.end());
        }
        default:
            fail(Status::InvalidArgument, "score_baseline: unknown kind '" + to_string(kind) + "'");
    }
}

std::vector<SelectionScore> score_pool(StrategyKind kind, const models::TaskModel& model,
                                       const data::Dataset& ds, std::span<const int> candidates,
                                       uint64_t seed, bool last_layer_only) {
    std::vector<SelectionScore> scores(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        int idx = candidates[i];
        auto x = ds.sample(static_cast<size_t>(idx));
        double s = 0.0;
        switch (kind) {
            case StrategyKind::ExpectedGradnorm: s = score_expected_gradnorm(model, x, last_layer_only); break;
            case StrategyKind::EntropyGradnorm: s = score_entropy_gradnorm(model, x, last_layer_only); break;
            case StrategyKind::KCenterGreedy:
                fail(Status::InvalidArgument, "score_pool: kcenter-greedy selects iteratively, not per-sample");
            default: s = score_baseline(kind, model, x, seed, idx); break;
        }
        scores[i] = {idx, s};
    }
    return scores;
}

std::vector<int> select_top_k(std::span<const SelectionScore> scores, int k) {
    if (k < 1) fail(Status::InvalidArgument, "select_top_k: k must be at least 1");
    if (static_cast<size_t>(k) > scores.size())
        fail(Status::InvalidArgument, "select_top_k: k=" + std::to_string(k) + " exceeds " +
                                          std::to_string(scores.size()) + " candidates");
    std::vector<SelectionScore> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), [](const SelectionScore& a, const SelectionScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    std::vector<int> out(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<size_t>(i)] = sorted[static_cast<size_t>(i)].index;
    return out;
}

std::vector<int> kcenter_greedy(const data::Dataset& ds, std::span<const int> candidates,
                                std::span<const int> labeled, int k,
                                std::vector<double>* pick_dist) {
    if (k < 1 || static_cast<size_t>(k) > candidates.size())
        fail(Status::InvalidArgument, "kcenter_greedy: invalid k=" + std::to_string(k) + " for " +
                                          std::to_string(candidates.size()) + " candidates");
    size_t d = ds.feature_dim();
    auto sq_dist = [&](int a, int b) {
        auto xa = ds.sample(static_cast<size_t>(a));
        auto xb = ds.sample(static_cast<size_t>(b));
        double acc = 0.0;
        for (size_t i = 0; i < d; ++i) {
            double c = xa[i] - xb[i];
            acc += c * c;
        }
        return acc;
    };

    std::vector<double> min_dist(candidates.size(), std::numeric_limits<double>::infinity());
    if (labeled.empty()) {
        // no centers yet: seed with the first candidate by index order
        std::fill(min_dist.begin(), min_dist.end(), 0.0);
        min_dist[0] = std::numeric_limits<double>::infinity();
    } else {
        for (size_t i = 0; i < candidates.size(); ++i)
            for (int c : labeled) min_dist[i] = std::min(min_dist[i], sq_dist(candidates[i], c));
    }

    std::vector<int> picks;
    std::vector<bool> taken(candidates.size(), false);
    for (int round = 0; round < k; ++round) {
        size_t best = 0;
        double best_d = -1.0;
        for (size_t i = 0; i < candidates.size(); ++i) {
            if (taken[i]) continue;
            // ties: ascending candidate position
            if (min_dist[i] > best_d) {
                best_d = min_dist[i];
                best = i;
            }
        }
        taken[best] = true;
        picks.push_back(candidates[best]);
        if (pick_dist) pick_dist->push_back(std::isinf(best_d) ? 0.0 : std::sqrt(best_d));
        for (size_t i = 0; i < candidates.size(); ++i) {
            if (taken[i]) continue;
            min_dist[i] = std::min(min_dist[i], sq_dist(candidates[i], candidates[best]));
        }
    }
    return picks;
}

std::vector<int> select(StrategyKind kind, const models::TaskModel& model, const data::Dataset& ds,
                        std::span<const int> candidates, std::span<const int> labeled, int k,
                        uint64_t seed, bool last_layer_only) {
    if (kind == StrategyKind::KCenterGreedy) return kcenter_greedy(ds, candidates, labeled, k);
    auto scores = score_pool(kind, model, ds, candidates, seed, last_layer_only);
    return select_top_k(scores, k);
}

}  // namespace gradal::strat
