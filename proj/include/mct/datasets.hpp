#pragma once

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mct/common.hpp"
#include "mct/rng.hpp"
#include "mct/tensor.hpp"

namespace mct {

struct LabeledDataset {
    Tensor features;              // [num_examples, feature_dim]
    std::vector<int64_t> labels;  // class ids in [0, num_classes)
    int num_classes = 0;
    std::string split = "train";

    int64_t size() const { return features.rows(); }
    int64_t feature_dim() const { return features.cols(); }

    void validate() const {
        if (num_classes < 2) throw ValueError("dataset: num_classes must be >= 2");
        if (static_cast<int64_t>(labels.size()) != features.rows())
            throw ValueError(strfmt("dataset: %zu labels for %lld examples", labels.size(),
                                    (long long)features.rows()));
        for (int64_t y : labels)
            if (y < 0 || y >= num_classes)
                throw ValueError(strfmt("dataset: label %lld outside [0, %d)", (long long)y, num_classes));
        features.check_finite("dataset features");
    }

    // Gather a batch by row indices.
    std::pair<Tensor, std::vector<int64_t>> batch(const std::vector<int64_t>& idx) const {
        Tensor x = Tensor::zeros({static_cast<int64_t>(idx.size()), feature_dim()});
        std::vector<int64_t> y(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            for (int64_t j = 0; j < feature_dim(); ++j) x.at(static_cast<int64_t>(i), j) = features.at(idx[i], j);
            y[i] = labels[static_cast<size_t>(idx[i])];
        }
        return {std::move(x), std::move(y)};
    }

    std::vector<int64_t> indices_of_class(int64_t cls) const {
        std::vector<int64_t> out;
        for (int64_t i = 0; i < size(); ++i)
            if (labels[static_cast<size_t>(i)] == cls) out.push_back(i);
        return out;
    }
};

// Seeded Gaussian-blob classification data. Class means lie on the unit
// sphere; samples are isotropic with the given per-coordinate spread.
// Examples are laid out class-major: index = class * per_class + i.
inline LabeledDataset gen_blobs(int num_classes, int per_class, int feature_dim, double spread,
                                uint64_t seed, std::string split = "train") {
    if (num_classes < 2 || per_class < 1 || feature_dim < 1)
        throw ValueError("gen_blobs: counts must be positive, num_classes >= 2");
    if (spread <= 0.0) throw ValueError("gen_blobs: spread must be positive");

    Rng rng(derive_seed(seed, "blobs"));
    std::vector<std::vector<double>> means(static_cast<size_t>(num_classes));
    for (auto& m : means) {
        m.resize(static_cast<size_t>(feature_dim));
        for (double& v : m) v = rng.normal();
        double norm = l2_norm(m);
        for (double& v : m) v /= norm;
    }

    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.split = std::move(split);
    ds.features = Tensor::zeros({static_cast<int64_t>(num_classes) * per_class, feature_dim});
    ds.labels.resize(static_cast<size_t>(num_classes) * static_cast<size_t>(per_class));
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            const int64_t row = static_cast<int64_t>(c) * per_class + i;
            for (int64_t j = 0; j < feature_dim; ++j)
                ds.features.at(row, j) = means[static_cast<size_t>(c)][static_cast<size_t>(j)] + spread * rng.normal();
            ds.labels[static_cast<size_t>(row)] = c;
        }
    }
    return ds;
}

// Train/val pair drawn from the same class means: per class, the first
// per_class_train samples go to train, the next per_class_val to val.
inline std::pair<LabeledDataset, LabeledDataset> gen_blobs_split(int num_classes, int per_class_train,
                                                                 int per_class_val, int feature_dim,
                                                                 double spread, uint64_t seed) {
    const int per_total = per_class_train + per_class_val;
    LabeledDataset all = gen_blobs(num_classes, per_total, feature_dim, spread, seed);

    std::vector<int64_t> train_idx, val_idx;
    for (int c = 0; c < num_classes; ++c) {
        const int64_t base = static_cast<int64_t>(c) * per_total;
        for (int i = 0; i < per_class_train; ++i) train_idx.push_back(base + i);
        for (int i = per_class_train; i < per_total; ++i) val_idx.push_back(base + i);
    }
    auto carve = [&](const std::vector<int64_t>& idx, const char* tag) {
        auto [x, y] = all.batch(idx);
        LabeledDataset out;
        out.features = std::move(x);
        out.labels = std::move(y);
        out.num_classes = num_classes;
        out.split = tag;
        return out;
    };
    return {carve(train_idx, "train"), carve(val_idx, "val")};
}

namespace detail {

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError(strfmt("cannot open %s", path.c_str()));
    std::fseek(f, 0, SEEK_END);
    long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(n));
    size_t got = n > 0 ? std::fread(buf.data(), 1, buf.size(), f) : 0;
    std::fclose(f);
    if (got != buf.size()) throw FormatError(strfmt("short read on %s", path.c_str()));
    return buf;
}

inline uint32_t be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
    if (off + 4 > b.size())
        throw FormatError(strfmt("%s: truncated header, expected %zu bytes, file has %zu", path.c_str(),
                                 off + 4, b.size()));
    return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
           uint32_t(b[off + 3]);
}

}  // namespace detail

// IDX image/label pair loader (big-endian headers, image magic 0x00000803,
// label magic 0x00000801). Images flatten to one row per example with pixels
// scaled to [0,1]; the optional flag standardizes each feature column.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               bool standardize = false, std::string split = "train") {
    auto img = detail::read_file_bytes(images_path);
    auto lbl = detail::read_file_bytes(labels_path);

    const uint32_t img_magic = detail::be32(img, 0, images_path);
    if (img_magic != 0x00000803u)
        throw FormatError(strfmt("%s: bad magic 0x%08x, want 0x00000803", images_path.c_str(), img_magic));
    const uint32_t lbl_magic = detail::be32(lbl, 0, labels_path);
    if (lbl_magic != 0x00000801u)
        throw FormatError(strfmt("%s: bad magic 0x%08x, want 0x00000801", labels_path.c_str(), lbl_magic));

    const uint32_t n = detail::be32(img, 4, images_path);
    const uint32_t rows = detail::be32(img, 8, images_path);
    const uint32_t cols = detail::be32(img, 12, images_path);
    const uint32_t n_lbl = detail::be32(lbl, 4, labels_path);
    if (n != n_lbl)
        throw FormatError(strfmt("image/label count mismatch: %u images vs %u labels", n, n_lbl));

    const size_t want_img = 16 + static_cast<size_t>(n) * rows * cols;
    if (img.size() != want_img)
        throw FormatError(strfmt("%s: expected %zu bytes, file has %zu", images_path.c_str(), want_img, img.size()));
    const size_t want_lbl = 8 + static_cast<size_t>(n);
    if (lbl.size() != want_lbl)
        throw FormatError(strfmt("%s: expected %zu bytes, file has %zu", labels_path.c_str(), want_lbl, lbl.size()));

    const int64_t dim = static_cast<int64_t>(rows) * cols;
    LabeledDataset ds;
    ds.split = std::move(split);
    ds.features = Tensor::zeros({static_cast<int64_t>(n), dim});
    ds.labels.resize(n);
    int64_t max_label = 0;
    for (uint32_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < dim; ++j)
            ds.features.at(i, j) = static_cast<double>(img[16 + static_cast<size_t>(i) * dim + j]) / 255.0;
        ds.labels[i] = lbl[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = static_cast<int>(std::max<int64_t>(max_label + 1, 2));

    if (standardize) {
        for (int64_t j = 0; j < dim; ++j) {
            double mean = 0.0;
            for (uint32_t i = 0; i < n; ++i) mean += ds.features.at(i, j);
            mean /= n;
            double var = 0.0;
            for (uint32_t i = 0; i < n; ++i) {
                const double d = ds.features.at(i, j) - mean;
                var += d * d;
            }
            const double sd = std::sqrt(var / n);
            const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
            for (uint32_t i = 0; i < n; ++i) ds.features.at(i, j) = (ds.features.at(i, j) - mean) * scale;
        }
    }
    return ds;
}

// Seeded permutation split into disjoint, exhaustive train/val parts.
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double train_fraction,
                                                       uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ValueError("split: train_fraction must be in (0, 1)");
    Rng rng(derive_seed(seed, "split"));
    std::vector<int64_t> perm = rng.permutation(ds.size());
    const int64_t n_train = std::llround(static_cast<double>(ds.size()) * train_fraction);

    auto take = [&](int64_t lo, int64_t hi, const char* tag) {
        std::vector<int64_t> idx(perm.begin() + lo, perm.begin() + hi);
        auto [x, y] = ds.batch(idx);
        LabeledDataset out;
        out.features = std::move(x);
        out.labels = std::move(y);
        out.num_classes = ds.num_classes;
        out.split = tag;
        return out;
    };
    return {take(0, n_train, "train"), take(n_train, ds.size(), "val")};
}

}  // namespace mct
