#include "datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "errors.hpp"
#include "hashing.hpp"
#include "rng.hpp"

namespace gradal::data {

namespace {

constexpr char kCacheMagic[8] = {'G', 'D', 'D', 'S', 'E', 'T', '0', '1'};
constexpr uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) fail(Status::IoError, "dataset cache truncated: " + path);
}

uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(Status::IoError, "idx file truncated: " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

size_t Dataset::feature_dim() const {
    size_t n = 1;
    for (int d : feature_shape) n *= static_cast<size_t>(d);
    return n;
}

std::span<const double> Dataset::sample(size_t i) const {
    size_t d = feature_dim();
    return {features.data() + i * d, d};
}

std::vector<int> Dataset::class_counts() const {
    std::vector<int> counts(static_cast<size_t>(classes), 0);
    for (int y : labels) counts[static_cast<size_t>(y)]++;
    return counts;
}

uint64_t Dataset::fingerprint() const {
    uint64_t h = fnv1a64_pod_span(std::span<const int>(feature_shape));
    h = fnv1a64_pod_span(std::span<const double>(features), h);
    h = fnv1a64_pod_span(std::span<const int>(labels), h);
    int32_t c = classes;
    h = fnv1a64({reinterpret_cast<const unsigned char*>(&c), sizeof(c)}, h);
    return h;
}

Dataset gen_gaussian_mixture(int classes, int per_class, int dim, double separation, uint64_t seed) {
    if (classes < 2) fail(Status::InvalidArgument, "gen_gaussian_mixture: need at least 2 classes");
    if (per_class <= 0) fail(Status::InvalidArgument, "gen_gaussian_mixture: per-class count must be positive");
    if (dim <= 0) fail(Status::InvalidArgument, "gen_gaussian_mixture: dimension must be positive");
    if (separation <= 0.0) fail(Status::InvalidArgument, "gen_gaussian_mixture: separation must be positive");

    Rng rng(mix_seed({seed, 0x6d69785fULL}));
    std::vector<std::vector<double>> means(static_cast<size_t>(classes), std::vector<double>(static_cast<size_t>(dim), 0.0));
    if (dim == 2) {
        double phase = rng.uniform() * 6.283185307179586;
        for (int k = 0; k < classes; ++k) {
            double a = phase + 6.283185307179586 * k / classes;
            means[static_cast<size_t>(k)][0] = separation * std::cos(a);
            means[static_cast<size_t>(k)][1] = separation * std::sin(a);
        }
    } else {
        // Seeded random unit directions, orthogonalized while the dimension
        // allows it (Gram-Schmidt); extra classes get plain unit vectors.
        std::vector<std::vector<double>> dirs;
        for (int k = 0; k < classes; ++k) {
            std::vector<double> v(static_cast<size_t>(dim));
            double n = 0.0;
            do {
                for (auto& x : v) x = rng.normal();
                if (static_cast<int>(dirs.size()) < dim) {
                    for (const auto& b : dirs) {
                        double d = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
                        for (size_t i = 0; i < v.size(); ++i) v[i] -= d * b[i];
                    }
                }
                n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
            } while (n <= 1e-8);
            for (auto& x : v) x /= n;
            dirs.push_back(v);
            for (int i = 0; i < dim; ++i)
                means[static_cast<size_t>(k)][static_cast<size_t>(i)] = separation * v[static_cast<size_t>(i)];
        }
    }

    Dataset ds;
    ds.feature_shape = {dim};
    ds.classes = classes;
    ds.features.reserve(static_cast<size_t>(classes) * per_class * dim);
    ds.labels.reserve(static_cast<size_t>(classes) * per_class);
    for (int k = 0; k < classes; ++k)
        for (int s = 0; s < per_class; ++s) {
            for (int i = 0; i < dim; ++i)
                ds.features.push_back(means[static_cast<size_t>(k)][static_cast<size_t>(i)] + rng.normal());
            ds.labels.push_back(k);
        }
    return ds;
}

Dataset gen_imbalanced(const Dataset& base, std::span<const double> ratios, uint64_t seed) {
    if (static_cast<int>(ratios.size()) > base.classes)
        fail(Status::InvalidArgument, "gen_imbalanced: profile of length " + std::to_string(ratios.size()) +
                                          " exceeds class count " + std::to_string(base.classes));
    for (double r : ratios)
        if (r <= 0.0) fail(Status::InvalidArgument, "gen_imbalanced: ratios must be positive");

    auto counts = base.class_counts();
    std::vector<int> keep_count(static_cast<size_t>(base.classes));
    for (int k = 0; k < base.classes; ++k) {
        double r = k < static_cast<int>(ratios.size()) ? ratios[static_cast<size_t>(k)] : 1.0;
        keep_count[static_cast<size_t>(k)] =
            std::min(counts[static_cast<size_t>(k)],
                     std::max(1, static_cast<int>(std::lround(r * counts[static_cast<size_t>(k)]))));
    }

    std::vector<int> kept;
    Rng rng(mix_seed({seed, 0x696d62ULL}));
    for (int k = 0; k < base.classes; ++k) {
        std::vector<int> members;
        for (size_t i = 0; i < base.size(); ++i)
            if (base.labels[i] == k) members.push_back(static_cast<int>(i));
        rng.shuffle(std::span<int>(members));
        members.resize(static_cast<size_t>(keep_count[static_cast<size_t>(k)]));
        kept.insert(kept.end(), members.begin(), members.end());
    }
    std::sort(kept.begin(), kept.end());
    return subset(base, kept);
}

Dataset subset(const Dataset& ds, std::span<const int> indices) {
    Dataset out;
    out.feature_shape = ds.feature_shape;
    out.classes = ds.classes;
    out.norm = ds.norm;
    size_t d = ds.feature_dim();
    out.features.reserve(indices.size() * d);
    out.labels.reserve(indices.size());
    for (int i : indices) {
        auto row = ds.sample(static_cast<size_t>(i));
        out.features.insert(out.features.end(), row.begin(), row.end());
        out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
    }
    return out;
}

Dataset read_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) fail(Status::IoError, "cannot open idx image file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) fail(Status::IoError, "cannot open idx label file: " + labels_path);

    uint32_t img_magic = read_be_u32(img, images_path);
    if (img_magic != 0x00000803u)
        fail(Status::IoError, "bad idx image magic in " + images_path + " (got 0x" + hex64(img_magic).substr(8) + ", want 0x00000803)");
    uint32_t n_images = read_be_u32(img, images_path);
    uint32_t rows = read_be_u32(img, images_path);
    uint32_t cols = read_be_u32(img, images_path);

    uint32_t lab_magic = read_be_u32(lab, labels_path);
    if (lab_magic != 0x00000801u)
        fail(Status::IoError, "bad idx label magic in " + labels_path + " (got 0x" + hex64(lab_magic).substr(8) + ", want 0x00000801)");
    uint32_t n_labels = read_be_u32(lab, labels_path);
    if (n_images != n_labels)
        fail(Status::IoError, "idx count mismatch: " + std::to_string(n_images) + " images vs " +
                                  std::to_string(n_labels) + " labels");

    size_t pixels = static_cast<size_t>(n_images) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (static_cast<size_t>(img.gcount()) != pixels)
        fail(Status::IoError, "idx image file truncated: " + images_path);
    std::vector<unsigned char> raw_labels(n_labels);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n_labels));
    if (static_cast<size_t>(lab.gcount()) != n_labels)
        fail(Status::IoError, "idx label file truncated: " + labels_path);

    Dataset ds;
    ds.feature_shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
    ds.features.resize(pixels);
    for (size_t i = 0; i < pixels; ++i) ds.features[i] = raw[i] / 255.0;
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.classes = max_label + 1;
    return ds;
}

Dataset read_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) fail(Status::IoError, "cannot open csv file: " + path);
    std::string line;
    if (!std::getline(in, line)) fail(Status::IoError, "csv file is empty: " + path);

    auto split_row = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur.push_back(ch);
            }
        }
        cells.push_back(cur);
        return cells;
    };

    auto header = split_row(line);
    int label_idx = -1;
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = static_cast<int>(i);
    if (label_idx < 0) fail(Status::IoError, "csv: unknown label column '" + label_column + "' in " + path);

    Dataset ds;
    size_t width = header.size();
    std::map<std::string, int> label_map;
    std::vector<std::string> raw_labels;
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        auto cells = split_row(line);
        if (cells.size() != width)
            fail(Status::IoError, "csv: ragged row " + std::to_string(row_no) + " in " + path +
                                      " (" + std::to_string(cells.size()) + " cells, header has " +
                                      std::to_string(width) + ")");
        for (size_t i = 0; i < cells.size(); ++i) {
            if (static_cast<int>(i) == label_idx) {
                raw_labels.push_back(cells[i]);
                continue;
            }
            double v = 0.0;
            auto [p, ec] = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
            if (ec != std::errc{} || p != cells[i].data() + cells[i].size())
                fail(Status::IoError, "csv: non-numeric cell '" + cells[i] + "' at row " +
                                          std::to_string(row_no) + ", column '" + header[i] + "' in " + path);
            ds.features.push_back(v);
        }
    }
    ds.feature_shape = {static_cast<int>(width - 1)};
    // labels map to dense ids by first appearance
    for (const auto& s : raw_labels) {
        auto it = label_map.find(s);
        if (it == label_map.end()) it = label_map.emplace(s, static_cast<int>(label_map.size())).first;
        ds.labels.push_back(it->second);
    }
    ds.classes = static_cast<int>(label_map.size());
    return ds;
}

void normalize(Dataset& ds) {
    size_t d = ds.feature_dim();
    size_t n = ds.size();
    if (n == 0) fail(Status::InvalidArgument, "normalize: empty dataset");
    ds.norm.mean.assign(d, 0.0);
    ds.norm.scale.assign(d, 1.0);
    for (size_t i = 0; i < n; ++i) {
        auto row = ds.sample(i);
        for (size_t j = 0; j < d; ++j) ds.norm.mean[j] += row[j];
    }
    for (size_t j = 0; j < d; ++j) ds.norm.mean[j] /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        auto row = ds.sample(i);
        for (size_t j = 0; j < d; ++j) {
            double c = row[j] - ds.norm.mean[j];
            var[j] += c * c;
        }
    }
    for (size_t j = 0; j < d; ++j) {
        double sd = std::sqrt(var[j] / static_cast<double>(n));
        ds.norm.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) {
            double& x = ds.features[i * d + j];
            x = (x - ds.norm.mean[j]) / ds.norm.scale[j];
        }
    ds.norm.applied = true;
}

Split stratified_split(const Dataset& ds, double eval_fraction, uint64_t seed) {
    if (eval_fraction < 0.0 || eval_fraction >= 1.0)
        fail(Status::InvalidArgument, "stratified_split: eval fraction must be in [0,1)");
    Rng rng(mix_seed({seed, ds.fingerprint(), 0x73706c6974ULL}));
    std::vector<int> train_idx, eval_idx;
    for (int k = 0; k < ds.classes; ++k) {
        std::vector<int> members;
        for (size_t i = 0; i < ds.size(); ++i)
            if (ds.labels[i] == k) members.push_back(static_cast<int>(i));
        rng.shuffle(std::span<int>(members));
        auto n_eval = static_cast<size_t>(std::lround(eval_fraction * static_cast<double>(members.size())));
        if (n_eval >= members.size() && !members.empty()) n_eval = members.size() - 1;  // keep every class in train
        for (size_t i = 0; i < members.size(); ++i)
            (i < n_eval ? eval_idx : train_idx).push_back(members[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(eval_idx.begin(), eval_idx.end());
    return {subset(ds, train_idx), subset(ds, eval_idx)};
}

void write_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Status::IoError, "cannot write dataset cache: " + path);
    out.write(kCacheMagic, sizeof(kCacheMagic));
    write_pod(out, kCacheVersion);
    write_pod(out, static_cast<uint32_t>(ds.feature_shape.size()));
    for (int d : ds.feature_shape) write_pod(out, static_cast<int32_t>(d));
    write_pod(out, static_cast<int32_t>(ds.classes));
    write_pod(out, static_cast<uint64_t>(ds.size()));
    write_pod(out, static_cast<uint8_t>(ds.norm.applied ? 1 : 0));
    if (ds.norm.applied) {
        out.write(reinterpret_cast<const char*>(ds.norm.mean.data()),
                  static_cast<std::streamsize>(ds.norm.mean.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(ds.norm.scale.data()),
                  static_cast<std::streamsize>(ds.norm.scale.size() * sizeof(double)));
    }
    out.write(reinterpret_cast<const char*>(ds.features.data()),
              static_cast<std::streamsize>(ds.features.size() * sizeof(double)));
    for (int y : ds.labels) write_pod(out, static_cast<int32_t>(y));
    if (!out) fail(Status::IoError, "dataset cache write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Status::IoError, "cannot open dataset cache: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCacheMagic, 8) != 0)
        fail(Status::IoError, "bad dataset cache magic: " + path);
    uint32_t version = 0;
    read_pod(in, version, path);
    if (version != kCacheVersion)
        fail(Status::IoError, "unsupported dataset cache version " + std::to_string(version) + ": " + path);
    Dataset ds;
    uint32_t ndim = 0;
    read_pod(in, ndim, path);
    for (uint32_t i = 0; i < ndim; ++i) {
        int32_t d = 0;
        read_pod(in, d, path);
        ds.feature_shape.push_back(d);
    }
    int32_t classes = 0;
    read_pod(in, classes, path);
    ds.classes = classes;
    uint64_t n = 0;
    read_pod(in, n, path);
    uint8_t has_norm = 0;
    read_pod(in, has_norm, path);
    size_t d = ds.feature_dim();
    if (has_norm) {
        ds.norm.applied = true;
        ds.norm.mean.resize(d);
        ds.norm.scale.resize(d);
        in.read(reinterpret_cast<char*>(ds.norm.mean.data()), static_cast<std::streamsize>(d * sizeof(double)));
        in.read(reinterpret_cast<char*>(ds.norm.scale.data()), static_cast<std::streamsize>(d * sizeof(double)));
        if (!in) fail(Status::IoError, "dataset cache truncated: " + path);
    }
    ds.features.resize(n * d);
    in.read(reinterpret_cast<char*>(ds.features.data()),
            static_cast<std::streamsize>(ds.features.size() * sizeof(double)));
    if (!in) fail(Status::IoError, "dataset cache truncated: " + path);
    ds.labels.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        int32_t y = 0;
        read_pod(in, y, path);
        ds.labels[i] = y;
    }
    return ds;
}

}  // namespace gradal::data
