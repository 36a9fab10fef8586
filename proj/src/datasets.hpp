#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gradal::data {

// Dense feature matrix plus integer labels. Features are stored row-major,
// one sample per row of length prod(feature_shape).
struct Dataset {
    std::vector<int> feature_shape;  // per-sample shape, e.g. {2} or {1,28,28}
    int classes = 0;
    std::vector<double> features;
    std::vector<int> labels;

    struct Normalization {
        bool applied = false;
        std::vector<double> mean;
        std::vector<double> scale;
    };
    Normalization norm;

    size_t size() const { return labels.size(); }
    size_t feature_dim() const;
    std::span<const double> sample(size_t i) const;
    std::vector<int> class_counts() const;
    uint64_t fingerprint() const;
};

// Class means on a seeded circle (dim 2) or seeded random orthonormal
// directions (dim > 2), scaled by `separation`; unit-variance clusters.
Dataset gen_gaussian_mixture(int classes, int per_class, int dim, double separation, uint64_t seed);

// Subsamples class k to round(ratios[k] * count_k); classes beyond the
// profile keep ratio 1. Sample order is preserved.
Dataset gen_imbalanced(const Dataset& base, std::span<const double> ratios, uint64_t seed);

// IDX (MNIST-layout) reader: big-endian magic 0x803 images / 0x801 labels;
// pixels scaled to [0,1].
Dataset read_idx(const std::string& images_path, const std::string& labels_path);

// Rectangular numeric CSV with a header row. The label column may hold
// arbitrary strings; labels map to dense [0,N) by first appearance.
Dataset read_csv(const std::string& path, const std::string& label_column);

// Z-scores each feature dimension in place and records mean/scale.
// Dimensions with zero variance get scale 1.
void normalize(Dataset& ds);

struct Split {
    Dataset train;
    Dataset eval;
};

// Stratified split; deterministic in (seed, ds.fingerprint()).
Split stratified_split(const Dataset& ds, double eval_fraction, uint64_t seed);

// Versioned binary cache, bit-exact round trip.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

Dataset subset(const Dataset& ds, std::span<const int> indices);

}  // namespace gradal::data
