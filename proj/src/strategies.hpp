#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "models.hpp"

namespace gradal::strat {

enum class StrategyKind {
    ExpectedGradnorm,
    EntropyGradnorm,
    Random,
    MaxEntropy,
    Margin,
    LeastConfidence,
    KCenterGreedy,
};

StrategyKind parse_strategy(const std::string& name);  // ConfigError on unknown name
std::string to_string(StrategyKind kind);
bool is_gradnorm(StrategyKind kind);

struct SelectionScore {
    int index = 0;
    double score = 0.0;
};

// L2 parameter-gradient norm of the detached-weight expected loss at x.
// Model parameters are left untouched.
double score_expected_gradnorm(const models::TaskModel& model, std::span<const double> x,
                               bool last_layer_only = false);
// L2 parameter-gradient norm of the entropy loss at x.
double score_entropy_gradnorm(const models::TaskModel& model, std::span<const double> x,
                              bool last_layer_only = false);
// random / max-entropy / margin / least-confidence (kcenter has no standalone
// per-sample score; see kcenter_greedy).
double score_baseline(StrategyKind kind, const models::TaskModel& model, std::span<const double> x,
                      uint64_t seed, int sample_index);

// Per-sample scores for every candidate, in candidate order. Random scores
// depend only on (seed, candidate index), so the result is independent of
// evaluation order.
std::vector<SelectionScore> score_pool(StrategyKind kind, const models::TaskModel& model,
                                       const data::Dataset& ds, std::span<const int> candidates,
                                       uint64_t seed, bool last_layer_only = false);

// Indices of the k highest scores, descending by score, ties broken by
// ascending sample index.
std::vector<int> select_top_k(std::span<const SelectionScore> scores, int k);

// Farthest-first traversal over candidates with the labeled set as initial
// centers (Euclidean distance in input space). pick_dist, when given,
// receives each pick's distance to its nearest center at selection time.
std::vector<int> kcenter_greedy(const data::Dataset& ds, std::span<const int> candidates,
                                std::span<const int> labeled, int k,
                                std::vector<double>* pick_dist = nullptr);

// Unified selection entry point used by the AL engine.
std::vector<int> select(StrategyKind kind, const models::TaskModel& model, const data::Dataset& ds,
                        std::span<const int> candidates, std::span<const int> labeled, int k,
                        uint64_t seed, bool last_layer_only = false);

}  // namespace gradal::strat
