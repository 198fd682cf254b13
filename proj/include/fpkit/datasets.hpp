#pragma once

#include <optional>

#include "fpkit/common.hpp"

namespace fpkit {

enum class DatasetKind { two_moons, gaussian_blobs, ring_ood };

inline const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::two_moons: return "two_moons";
        case DatasetKind::gaussian_blobs: return "gaussian_blobs";
        case DatasetKind::ring_ood: return "ring_ood";
    }
    return "?";
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
    for (DatasetKind k : {DatasetKind::two_moons, DatasetKind::gaussian_blobs, DatasetKind::ring_ood}) {
        if (s == dataset_kind_name(k)) return k;
    }
    throw InvalidParam("unknown dataset '" + s + "'");
}

/// 2-D synthetic classification data with a matched test split. Label noise
/// is applied to the training labels only, so test metrics read against
/// clean labels. An optional outlier pool feeds outlier-exposure training.
struct Dataset {
    Matrix x_train;
    std::vector<int> y_train;
    Matrix x_test;
    std::vector<int> y_test;
    int num_classes = 2;
    std::optional<Matrix> outliers;
};

namespace detail {

inline void flip_labels(std::vector<int>& labels, int num_classes, double rate, Rng& rng) {
    if (rate <= 0.0) return;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> offset(1, num_classes - 1);
    for (int& y : labels) {
        if (coin(rng) < rate) y = (y + offset(rng)) % num_classes;
    }
}

inline void fill_two_moons(Matrix& x, std::vector<int>& y, std::size_t n, double noise, Rng& rng) {
    std::uniform_real_distribution<double> angle(0.0, M_PI);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int moon = static_cast<int>(i % 2);
        const double t = angle(rng);
        double px, py;
        if (moon == 0) {
            px = std::cos(t);
            py = std::sin(t);
        } else {
            px = 1.0 - std::cos(t);
            py = 0.5 - std::sin(t);
        }
        x(i, 0) = px + noise * jitter(rng);
        x(i, 1) = py + noise * jitter(rng);
        y[i] = moon;
    }
}

inline void fill_blobs(Matrix& x, std::vector<int>& y, std::size_t n, double noise, Rng& rng) {
    // Three centroids on a radius-2 circle.
    constexpr int kBlobs = 3;
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int blob = static_cast<int>(i % kBlobs);
        const double theta = M_PI / 2.0 + 2.0 * M_PI * blob / kBlobs;
        x(i, 0) = 2.0 * std::cos(theta) + noise * jitter(rng);
        x(i, 1) = 2.0 * std::sin(theta) + noise * jitter(rng);
        y[i] = blob;
    }
}

inline void fill_ring(Matrix& x, std::vector<int>& y, std::size_t n, double noise, Rng& rng) {
    // Points on a radius-6 ring, far outside every class centroid.
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double theta = angle(rng);
        const double r = 6.0 + noise * jitter(rng);
        x(i, 0) = r * std::cos(theta);
        x(i, 1) = r * std::sin(theta);
        y[i] = 0;
    }
}

}  // namespace detail

/// Deterministic generator: a fixed (kind, n, noise, label_noise, seed)
/// always produces the identical dataset.
inline Dataset make_dataset(DatasetKind kind, std::size_t n, double noise, double label_noise,
                            std::uint64_t seed) {
    if (noise < 0.0) throw InvalidParam("make_dataset: noise must be >= 0");
    if (label_noise < 0.0 || label_noise >= 1.0)
        throw InvalidParam("make_dataset: label_noise must be in [0, 1)");
    Rng rng(seed);
    Dataset ds;
    ds.x_train = Matrix(n, 2);
    ds.y_train.assign(n, 0);
    ds.x_test = Matrix(n, 2);
    ds.y_test.assign(n, 0);
    switch (kind) {
        case DatasetKind::two_moons:
            ds.num_classes = 2;
            detail::fill_two_moons(ds.x_train, ds.y_train, n, noise, rng);
            detail::fill_two_moons(ds.x_test, ds.y_test, n, noise, rng);
            break;
        case DatasetKind::gaussian_blobs:
            ds.num_classes = 3;
            detail::fill_blobs(ds.x_train, ds.y_train, n, noise, rng);
            detail::fill_blobs(ds.x_test, ds.y_test, n, noise, rng);
            break;
        case DatasetKind::ring_ood:
            ds.num_classes = 2;  // labels are placeholders; the points are the payload
            detail::fill_ring(ds.x_train, ds.y_train, n, noise, rng);
            detail::fill_ring(ds.x_test, ds.y_test, n, noise, rng);
            break;
    }
    detail::flip_labels(ds.y_train, ds.num_classes, label_noise, rng);
    return ds;
}

}  // namespace fpkit
