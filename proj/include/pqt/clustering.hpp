#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pqt/image.hpp"
#include "pqt/quality.hpp"

namespace pqt {

using FeatureVector = std::vector<double>;

enum class FeatureMode { pixel, quality };

// Maps samples into the clustering feature space: flattened luminance
// pixels, or the 36-dim quality features standardized by corpus
// mean/stdev. The quality mode must be fit on the dataset first.
class FeatureExtractor {
public:
    static FeatureExtractor fit(const Dataset& dataset, FeatureMode mode, int threads = 0);

    FeatureVector extract(const Sample& sample) const;
    std::vector<FeatureVector> extract_all(const Dataset& dataset, int threads = 0) const;
    FeatureMode mode() const { return mode_; }

private:
    FeatureMode mode_ = FeatureMode::pixel;
    std::vector<double> mean_, stdev_; // quality mode standardization
};

struct KMeansModel {
    int k = 0;
    size_t dim = 0;
    std::vector<double> centroids;  // k x dim, row-major
    std::vector<int> centroid_class; // class id per centroid; -1 until labeled
    double inertia = 0.0;
    std::vector<double> inertia_trace; // per-Lloyd-iteration inertia (non-increasing)

    const double* centroid(int i) const { return centroids.data() + static_cast<size_t>(i) * dim; }
};

// k-means++ seeding with a seeded RNG, then Lloyd iterations until the
// max centroid shift drops below tol or max_iter is reached. An emptied
// cluster is re-seeded to the point farthest from its assigned centroid.
KMeansModel kmeans_fit(const std::vector<FeatureVector>& points, int k, uint64_t seed,
                       int max_iter = 300, double tol = 1e-6);

std::vector<int> kmeans_assign(const KMeansModel& model, const std::vector<FeatureVector>& points);

// Greedy distinct assignment of classes to centroids by maximum vote:
// repeatedly take the largest cell of the cluster-by-class vote matrix
// among unassigned rows/columns. Requires k == C.
void label_centroids(KMeansModel& model, const std::vector<FeatureVector>& points,
                     const std::vector<int>& clean_labels, int num_classes);

std::vector<std::vector<long>> vote_matrix(const std::vector<int>& assignment,
                                           const std::vector<int>& clean_labels, int k,
                                           int num_classes);
std::vector<int> greedy_distinct_assignment(const std::vector<std::vector<long>>& votes);

// Classes of the m nearest centroids, nearest first; distance ties break
// toward the lower centroid index. Labels are distinct because centroid
// classes are distinct.
std::vector<int> generate_labels(const FeatureVector& x, const KMeansModel& model, int m);

void write_kmeans_csv(const KMeansModel& model, const std::string& path);

} // namespace pqt
