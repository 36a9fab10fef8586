#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "datasets.hpp"
#include "influence.hpp"
#include "models.hpp"
#include "strategies.hpp"

namespace gradal::engine {

// Ground-truth labels behind an access policy: annotate() reveals a label
// permanently (the annotation budget), peek() is allowed only inside a
// ProbeScope and never alters the pools. Both are counted, which lets the
// engine assert that strategy scoring touched no label.
class LabelOracle {
  public:
    explicit LabelOracle(const std::vector<int>* labels) : labels_(labels) {}

    int annotate(int i) {
        ++annotations_;
        return (*labels_)[static_cast<size_t>(i)];
    }

    int peek(int i) const;  // errors outside a ProbeScope

    size_t annotate_count() const { return annotations_; }
    size_t peek_count() const { return peeks_; }

    class ProbeScope {
      public:
        explicit ProbeScope(LabelOracle& oracle) : oracle_(oracle) { ++oracle_.probe_depth_; }
        ~ProbeScope() { --oracle_.probe_depth_; }
        ProbeScope(const ProbeScope&) = delete;
        ProbeScope& operator=(const ProbeScope&) = delete;

      private:
        LabelOracle& oracle_;
    };

  private:
    const std::vector<int>* labels_;
    size_t annotations_ = 0;
    mutable size_t peeks_ = 0;
    int probe_depth_ = 0;
};

// Disjoint labeled/unlabeled partition of the training indices.
struct PoolState {
    std::vector<int> labeled;    // ascending
    std::vector<int> unlabeled;  // ascending

    void annotate(std::span<const int> picks);  // moves picks from U to L
    void check_invariants(size_t train_size) const;
};

struct ALConfig {
    int cycles = 7;
    int budget = 200;  // K per cycle
    double initial_fraction = 0.10;
    int subset_multiplier = 10;  // |R_U| = min(multiplier*K, |U|)
    strat::StrategyKind strategy = strat::StrategyKind::Random;
    models::ModelSpec model;
    models::TrainConfig train;
    uint64_t seed = 0;
    bool retrain_from_scratch = true;
    bool last_layer_only = false;  // fast gradnorm mode; not the reference behavior

    void validate(size_t train_size) const;
};

struct ProbeToggles {
    bool overlap = false;
    bool consistency = false;
    bool bounds = false;
    bool decomposition = false;
    double damping = influence::kDefaultDamping;
    int hessian_cap = influence::kDefaultHessianCap;

    bool any_hessian() const { return consistency || bounds || decomposition; }
};

struct CycleReport {
    int cycle = 0;
    int labeled_count = 0;  // |L| during this cycle's training
    std::vector<int> selected;  // batch chosen at the end of this cycle; empty at the final cycle
    std::vector<double> selected_scores;
    double train_acc = 0.0, train_loss = 0.0;
    double test_acc = 0.0, test_loss = 0.0;
    double gap = 0.0;  // train_acc - test_acc
    // reduced-gradient-norm check for the batch selected in the previous
    // cycle, evaluated against this cycle's model (0/0 on cycle 0)
    int a2_reduced = 0;
    int a2_total = 0;
};

struct OverlapRow {
    int cycle = 0;
    int overlap = 0;
    int k = 0;
    int subset_size = 0;
};

struct ConsistencyRow {
    int cycle = 0;  // the selecting cycle
    int overlap = 0;
    int k = 0;
    double fraction = 0.0;
};

struct BoundsRow {
    int cycle = 0;  // the selecting cycle
    int sample_id = 0;
    influence::BoundTerms terms;
};

struct DecompositionRow {
    int cycle = 0;
    int sample_id = 0;
    double magnitude = 0.0;
    double alignment = 0.0;
    double product = 0.0;
};

struct RunResult {
    std::vector<CycleReport> cycles;
    models::TaskModel final_model;
    std::vector<int> final_labeled;
    std::vector<std::vector<double>> per_class_acc;  // eval split, one row per cycle
    std::vector<OverlapRow> overlap_rows;
    std::vector<ConsistencyRow> consistency_rows;
    std::vector<BoundsRow> bounds_rows;
    std::vector<DecompositionRow> decomposition_rows;
    size_t oracle_annotations = 0;
    size_t oracle_peeks = 0;
};

// One full active-learning run: cycle 0 labels a seeded-random initial
// fraction; every cycle trains (from scratch by default) and evaluates; every
// cycle but the last samples R_U, scores it, selects the top K, reveals their
// labels and grows the labeled pool. Byte-identical reports for identical
// (config, seed).
RunResult run(const ALConfig& cfg, const data::Split& split, const ProbeToggles& probes = {});

struct TransferResult {
    double selector_final_acc = 0.0;
    double target_acc = 0.0;
};

// Runs AL with cfg's model as the selector, then trains `target` from scratch
// on the final labeled pool (same training streams as the final cycle).
TransferResult transfer_train(const models::ModelSpec& target, const ALConfig& cfg,
                              const data::Split& split);

// ---- probe primitives (labels revealed via oracle ProbeScope only) ----------

// Top-k candidate set by supervised-loss gradient norm under `model`.
std::vector<int> true_gradnorm_top_k(const models::TaskModel& model, const data::Dataset& ds,
                                     const LabelOracle& oracle, std::span<const int> candidates,
                                     int k);

// Top-k candidate set by exact total influence (supervised loss, labels
// temporarily observed) under the next-cycle model.
std::vector<int> exact_influence_top_k(const models::TaskModel& model_next, const data::Dataset& ds,
                                       const LabelOracle& oracle, std::span<const int> candidates,
                                       std::span<const int> labeled_next, const data::Dataset& eval_ds,
                                       int k, double damping, int cap);

int intersection_size(std::span<const int> a, std::span<const int> b);

// Spec-level probe entry points composed from the primitives above.
int gradnorm_overlap_probe(const models::TaskModel& model, const data::Dataset& ds,
                           const LabelOracle& oracle, std::span<const int> candidates,
                           std::span<const int> labeled, strat::StrategyKind strategy, int k,
                           uint64_t seed);

int selection_consistency_probe(const models::TaskModel& model_c, const models::TaskModel& model_next,
                                const data::Dataset& ds, const LabelOracle& oracle,
                                std::span<const int> candidates, std::span<const int> labeled_next,
                                const data::Dataset& eval_ds, strat::StrategyKind strategy, int k,
                                uint64_t seed, double damping, int cap);

std::vector<DecompositionRow> direction_magnitude_probe(
    const models::TaskModel& model, const data::Dataset& ds, const LabelOracle& oracle,
    std::span<const int> samples, std::span<const int> labeled, const data::Dataset& eval_ds,
    double damping, int cap);

}  // namespace gradal::engine
