#include "engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace gradal::engine {

namespace {

// seed stream tags
constexpr uint64_t kInitPool = 0x11;
constexpr uint64_t kModelInit = 0x12;
constexpr uint64_t kTrainShuffle = 0x13;
constexpr uint64_t kSubset = 0x14;
constexpr uint64_t kScore = 0x15;

models::LossKind scheme_loss(strat::StrategyKind kind) {
    if (kind == strat::StrategyKind::ExpectedGradnorm) return models::LossKind::Expected;
    return models::LossKind::Entropy;
}

}  // namespace

int LabelOracle::peek(int i) const {
    if (probe_depth_ <= 0)
        fail(Status::RuntimeError, "label oracle: peek outside a probe scope (label leak)");
    ++peeks_;
    return (*labels_)[static_cast<size_t>(i)];
}

void PoolState::annotate(std::span<const int> picks) {
    for (int p : picks) {
        auto it = std::lower_bound(unlabeled.begin(), unlabeled.end(), p);
        if (it == unlabeled.end() || *it != p)
            fail(Status::RuntimeError, "pool: selected index " + std::to_string(p) + " is not unlabeled");
        unlabeled.erase(it);
        labeled.insert(std::lower_bound(labeled.begin(), labeled.end(), p), p);
    }
}

void PoolState::check_invariants(size_t train_size) const {
    if (labeled.size() + unlabeled.size() != train_size)
        fail(Status::RuntimeError, "pool: L and U do not partition the training indices");
    std::vector<int> merged;
    merged.reserve(train_size);
    std::merge(labeled.begin(), labeled.end(), unlabeled.begin(), unlabeled.end(),
               std::back_inserter(merged));
    for (size_t i = 0; i < merged.size(); ++i)
        if (merged[i] != static_cast<int>(i))
            fail(Status::RuntimeError, "pool: L and U overlap or miss an index");
}

void ALConfig::validate(size_t train_size) const {
    if (cycles < 1) fail(Status::ConfigError, "al config: cycles must be at least 1");
    if (budget < 1) fail(Status::ConfigError, "al config: budget must be at least 1");
    if (initial_fraction <= 0.0 || initial_fraction >= 1.0)
        fail(Status::ConfigError, "al config: initial_fraction must be in (0,1)");
    if (subset_multiplier < 1) fail(Status::ConfigError, "al config: subset_multiplier must be at least 1");
    train.validate();
    auto initial = static_cast<size_t>(std::lround(initial_fraction * static_cast<double>(train_size)));
    if (initial < 1) fail(Status::ConfigError, "al config: initial labeled pool is empty");
    if (static_cast<size_t>(budget) * static_cast<size_t>(cycles) + initial > train_size)
        fail(Status::ConfigError,
             "al config: budget exhaustion: " + std::to_string(budget) + "x" + std::to_string(cycles) +
                 " + " + std::to_string(initial) + " initial exceeds " + std::to_string(train_size) +
                 " training samples");
}

int intersection_size(std::span<const int> a, std::span<const int> b) {
    std::vector<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    std::vector<int> out;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(out));
    return static_cast<int>(out.size());
}

std::vector<int> true_gradnorm_top_k(const models::TaskModel& model, const data::Dataset& ds,
                                     const LabelOracle& oracle, std::span<const int> candidates,
                                     int k) {
    std::vector<strat::SelectionScore> scores(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        int idx = candidates[i];
        int label = oracle.peek(idx);
        auto g = models::loss_gradient(model, ds.sample(static_cast<size_t>(idx)),
                                       models::LossKind::CrossEntropy, label);
        scores[i] = {idx, stats::l2_norm(g)};
    }
    return strat::select_top_k(scores, k);
}

std::vector<int> exact_influence_top_k(const models::TaskModel& model_next, const data::Dataset& ds,
                                       const LabelOracle& oracle, std::span<const int> candidates,
                                       std::span<const int> labeled_next, const data::Dataset& eval_ds,
                                       int k, double damping, int cap) {
    auto ctx = influence::build_hessian(model_next, ds, labeled_next, models::LossKind::CrossEntropy,
                                        damping, cap);
    auto agg = influence::build_test_aggregate(ctx, model_next, eval_ds, models::LossKind::CrossEntropy);
    std::vector<strat::SelectionScore> scores(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        int idx = candidates[i];
        int label = oracle.peek(idx);
        auto g = models::loss_gradient(model_next, ds.sample(static_cast<size_t>(idx)),
                                       models::LossKind::CrossEntropy, label);
        scores[i] = {idx, influence::total_influence(ctx, g, agg)};
    }
    return strat::select_top_k(scores, k);
}

int gradnorm_overlap_probe(const models::TaskModel& model, const data::Dataset& ds,
                           const LabelOracle& oracle, std::span<const int> candidates,
                           std::span<const int> labeled, strat::StrategyKind strategy, int k,
                           uint64_t seed) {
    auto picks = strat::select(strategy, model, ds, candidates, labeled, k, seed);
    auto truth = true_gradnorm_top_k(model, ds, oracle, candidates, k);
    return intersection_size(truth, picks);
}

int selection_consistency_probe(const models::TaskModel& model_c, const models::TaskModel& model_next,
                                const data::Dataset& ds, const LabelOracle& oracle,
                                std::span<const int> candidates, std::span<const int> labeled_next,
                                const data::Dataset& eval_ds, strat::StrategyKind strategy, int k,
                                uint64_t seed, double damping, int cap) {
    if (!strat::is_gradnorm(strategy))
        fail(Status::Inapplicable, "consistency probe: requires a gradnorm strategy, got '" +
                                       strat::to_string(strategy) + "'");
    auto picks = strat::select(strategy, model_c, ds, candidates, {}, k, seed);
    auto exact = exact_influence_top_k(model_next, ds, oracle, candidates, labeled_next, eval_ds, k,
                                       damping, cap);
    return intersection_size(exact, picks);
}

std::vector<DecompositionRow> direction_magnitude_probe(
    const models::TaskModel& model, const data::Dataset& ds, const LabelOracle& oracle,
    std::span<const int> samples, std::span<const int> labeled, const data::Dataset& eval_ds,
    double damping, int cap) {
    auto ctx =
        influence::build_hessian(model, ds, labeled, models::LossKind::CrossEntropy, damping, cap);
    auto agg = influence::build_test_aggregate(ctx, model, eval_ds, models::LossKind::CrossEntropy);
    std::vector<DecompositionRow> rows;
    rows.reserve(samples.size());
    for (int idx : samples) {
        int label = oracle.peek(idx);
        auto g = models::loss_gradient(model, ds.sample(static_cast<size_t>(idx)),
                                       models::LossKind::CrossEntropy, label);
        auto d = influence::direction_magnitude(ctx, g, agg);
        rows.push_back({0, idx, d.magnitude, d.alignment, d.magnitude * d.alignment});
    }
    return rows;
}

RunResult run(const ALConfig& cfg, const data::Split& split, const ProbeToggles& probes) {
    const auto& ds = split.train;
    size_t n = ds.size();
    cfg.validate(n);
    if ((probes.bounds || probes.consistency) && !strat::is_gradnorm(cfg.strategy))
        fail(Status::Inapplicable, "probes: bounds/consistency require a gradnorm strategy, got '" +
                                       strat::to_string(cfg.strategy) + "'");
    if (probes.any_hessian()) {
        auto probe_model = models::TaskModel::make(cfg.model, 0);
        if (static_cast<int>(probe_model.param_count()) > probes.hessian_cap)
            fail(Status::Inapplicable,
                 "probes: model has " + std::to_string(probe_model.param_count()) +
                     " parameters, above the Hessian cap " + std::to_string(probes.hessian_cap));
    }

    RunResult result;
    LabelOracle oracle(&ds.labels);
    PoolState pool;
    auto initial = static_cast<int>(std::lround(cfg.initial_fraction * static_cast<double>(n)));
    {
        Rng rng(mix_seed({cfg.seed, kInitPool}));
        pool.labeled = rng.sample_without_replacement(static_cast<int>(n), initial);
        for (int i : pool.labeled) oracle.annotate(i);
        std::vector<bool> is_labeled(n, false);
        for (int i : pool.labeled) is_labeled[static_cast<size_t>(i)] = true;
        for (size_t i = 0; i < n; ++i)
            if (!is_labeled[i]) pool.unlabeled.push_back(static_cast<int>(i));
    }
    pool.check_invariants(n);

    models::TaskModel model;
    std::optional<models::TaskModel> prev_model;
    std::vector<int> prev_selection;
    std::vector<double> prev_sel_gradnorm;
    std::vector<int> prev_subset;
    models::LossKind a2_kind = scheme_loss(cfg.strategy);

    auto scheme_gradnorm = [&](const models::TaskModel& m, int idx) {
        auto g = models::loss_gradient(m, ds.sample(static_cast<size_t>(idx)), a2_kind, -1,
                                       cfg.last_layer_only);
        return stats::l2_norm(g);
    };

    for (int cycle = 0; cycle < cfg.cycles; ++cycle) {
        if (cfg.retrain_from_scratch || cycle == 0)
            model = models::TaskModel::make(cfg.model, mix_seed({cfg.seed, kModelInit}));
        auto tc = cfg.train;
        tc.seed = mix_seed({cfg.seed, kTrainShuffle, static_cast<uint64_t>(cycle)});
        models::train(model, ds, pool.labeled, tc);

        CycleReport report;
        report.cycle = cycle;
        report.labeled_count = static_cast<int>(pool.labeled.size());
        auto train_eval = models::evaluate(model, ds, pool.labeled);
        auto test_eval = models::evaluate(model, split.eval);
        report.train_acc = train_eval.accuracy;
        report.train_loss = train_eval.mean_loss;
        report.test_acc = test_eval.accuracy;
        report.test_loss = test_eval.mean_loss;
        report.gap = report.train_acc - report.test_acc;
        result.per_class_acc.push_back(models::per_class_accuracy(model, split.eval));

        // reduced-gradient-norm check for the previous cycle's batch
        if (!prev_selection.empty()) {
            report.a2_total = static_cast<int>(prev_selection.size());
            for (size_t i = 0; i < prev_selection.size(); ++i)
                if (scheme_gradnorm(model, prev_selection[i]) <= prev_sel_gradnorm[i])
                    ++report.a2_reduced;
        }

        // retrospective probes for the selection made in the previous cycle
        if (!prev_selection.empty() && (probes.consistency || probes.bounds || probes.decomposition)) {
            if (probes.consistency) {
                LabelOracle::ProbeScope scope(oracle);
                auto exact = exact_influence_top_k(model, ds, oracle, prev_subset, pool.labeled,
                                                   split.eval, cfg.budget, probes.damping,
                                                   probes.hessian_cap);
                int overlap = intersection_size(exact, prev_selection);
                result.consistency_rows.push_back(
                    {cycle - 1, overlap, cfg.budget,
                     static_cast<double>(overlap) / static_cast<double>(cfg.budget)});
            }
            if (probes.bounds) {
                models::LossKind kind = scheme_loss(cfg.strategy);
                auto ctx = influence::build_hessian(model, ds, pool.labeled, kind, probes.damping,
                                                    probes.hessian_cap);
                auto agg = influence::build_test_aggregate(ctx, model, split.eval, kind);
                for (int idx : prev_subset) {
                    auto x = ds.sample(static_cast<size_t>(idx));
                    auto g_next = models::loss_gradient(model, x, kind);
                    auto g_cur = models::loss_gradient(*prev_model, x, kind);
                    result.bounds_rows.push_back(
                        {cycle - 1, idx, influence::bound_terms(ctx, g_next, g_cur, agg)});
                }
            }
            if (probes.decomposition) {
                LabelOracle::ProbeScope scope(oracle);
                auto rows = direction_magnitude_probe(model, ds, oracle, prev_selection, pool.labeled,
                                                      split.eval, probes.damping, probes.hessian_cap);
                for (auto& r : rows) {
                    r.cycle = cycle - 1;
                    result.decomposition_rows.push_back(r);
                }
            }
        }

        if (cycle < cfg.cycles - 1) {
            // R_U: fresh random subset of the unlabeled pool
            size_t subset_size = std::min(pool.unlabeled.size(),
                                          static_cast<size_t>(cfg.subset_multiplier) *
                                              static_cast<size_t>(cfg.budget));
            Rng rng(mix_seed({cfg.seed, kSubset, static_cast<uint64_t>(cycle)}));
            auto positions = rng.sample_without_replacement(static_cast<int>(pool.unlabeled.size()),
                                                            static_cast<int>(subset_size));
            std::vector<int> subset(positions.size());
            for (size_t i = 0; i < positions.size(); ++i)
                subset[i] = pool.unlabeled[static_cast<size_t>(positions[i])];

            uint64_t score_seed = mix_seed({cfg.seed, kScore, static_cast<uint64_t>(cycle)});
            size_t peeks_before = oracle.peek_count();
            std::vector<int> selection;
            std::vector<double> selection_scores;
            if (cfg.strategy == strat::StrategyKind::KCenterGreedy) {
                selection = strat::kcenter_greedy(ds, subset, pool.labeled, cfg.budget,
                                                  &selection_scores);
            } else {
                auto scores = strat::score_pool(cfg.strategy, model, ds, subset, score_seed,
                                                cfg.last_layer_only);
                selection = strat::select_top_k(scores, cfg.budget);
                selection_scores.reserve(selection.size());
                for (int idx : selection) {
                    auto it = std::lower_bound(subset.begin(), subset.end(), idx);
                    selection_scores.push_back(scores[static_cast<size_t>(it - subset.begin())].score);
                }
            }
            if (oracle.peek_count() != peeks_before)
                fail(Status::RuntimeError, "label leak: strategy scoring touched the oracle");

            if (probes.overlap) {
                LabelOracle::ProbeScope scope(oracle);
                auto truth = true_gradnorm_top_k(model, ds, oracle, subset, cfg.budget);
                result.overlap_rows.push_back({cycle, intersection_size(truth, selection), cfg.budget,
                                               static_cast<int>(subset.size())});
            }

            // gradient norms of the chosen batch under the selecting model,
            // needed for next cycle's reduced-norm check
            prev_sel_gradnorm.clear();
            bool scores_are_gradnorms = strat::is_gradnorm(cfg.strategy);
            for (size_t i = 0; i < selection.size(); ++i)
                prev_sel_gradnorm.push_back(scores_are_gradnorms ? selection_scores[i]
                                                                 : scheme_gradnorm(model, selection[i]));
            prev_selection = selection;
            prev_subset = subset;
            if (probes.bounds) prev_model = model.clone();

            size_t labeled_before = pool.labeled.size();
            for (int idx : selection) oracle.annotate(idx);
            pool.annotate(selection);
            pool.check_invariants(n);
            if (pool.labeled.size() != labeled_before + static_cast<size_t>(cfg.budget))
                fail(Status::RuntimeError, "pool: labeled pool did not grow by exactly K");

            report.selected = std::move(selection);
            report.selected_scores = std::move(selection_scores);
        }

        result.cycles.push_back(std::move(report));
    }

    result.final_model = std::move(model);
    result.final_labeled = pool.labeled;
    result.oracle_annotations = oracle.annotate_count();
    result.oracle_peeks = oracle.peek_count();
    return result;
}

TransferResult transfer_train(const models::ModelSpec& target, const ALConfig& cfg,
                              const data::Split& split) {
    auto r = run(cfg, split);
    auto model = models::TaskModel::make(target, mix_seed({cfg.seed, kModelInit}));
    auto tc = cfg.train;
    tc.seed = mix_seed({cfg.seed, kTrainShuffle, static_cast<uint64_t>(cfg.cycles - 1)});
    models::train(model, split.train, r.final_labeled, tc);
    TransferResult out;
    out.selector_final_acc = r.cycles.back().test_acc;
    out.target_acc = models::evaluate(model, split.eval).accuracy;
    return out;
}

}  // namespace gradal::engine
