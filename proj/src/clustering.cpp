#include "pqt/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pqt/csv.hpp"
#include "pqt/parallel.hpp"
#include "pqt/rng.hpp"

namespace pqt {

FeatureExtractor FeatureExtractor::fit(const Dataset& dataset, FeatureMode mode, int threads) {
    FeatureExtractor fe;
    fe.mode_ = mode;
    if (mode == FeatureMode::quality) {
        std::vector<QualityFeatures> feats(dataset.size());
        const int t = threads > 0 ? threads : default_thread_count();
        parallel_chunks(dataset.size(), 64, t, [&](size_t b, size_t e, size_t) {
            for (size_t i = b; i < e; ++i)
                feats[i] = brisque_features(to_luminance(dataset.samples[i].image));
        });
        fe.mean_.assign(36, 0.0);
        fe.stdev_.assign(36, 0.0);
        for (const auto& f : feats)
            for (int i = 0; i < 36; ++i) fe.mean_[i] += f[i];
        for (auto& v : fe.mean_) v /= static_cast<double>(feats.size());
        for (const auto& f : feats)
            for (int i = 0; i < 36; ++i) {
                const double d = f[i] - fe.mean_[i];
                fe.stdev_[i] += d * d;
            }
        for (auto& v : fe.stdev_) {
            v = std::sqrt(v / static_cast<double>(feats.size()));
            if (v < 1e-12) v = 1.0; // constant dimension: leave centered only
        }
    }
    return fe;
}

FeatureVector FeatureExtractor::extract(const Sample& sample) const {
    if (mode_ == FeatureMode::pixel) {
        const GrayPlane lum = to_luminance(sample.image);
        return lum.values;
    }
    if (mean_.empty())
        throw ConfigError("feature extractor: quality mode requires fitting on a corpus first");
    const QualityFeatures f = brisque_features(to_luminance(sample.image));
    FeatureVector out(36);
    for (int i = 0; i < 36; ++i) out[i] = (f[i] - mean_[i]) / stdev_[i];
    return out;
}

std::vector<FeatureVector> FeatureExtractor::extract_all(const Dataset& dataset,
                                                         int threads) const {
    std::vector<FeatureVector> out(dataset.size());
    const int t = threads > 0 ? threads : default_thread_count();
    parallel_chunks(dataset.size(), 64, t, [&](size_t b, size_t e, size_t) {
        for (size_t i = b; i < e; ++i) out[i] = extract(dataset.samples[i]);
    });
    return out;
}

namespace {

double dist2(const double* a, const double* b, size_t dim) {
    double d = 0.0;
    for (size_t i = 0; i < dim; ++i) {
        const double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

} // namespace

KMeansModel kmeans_fit(const std::vector<FeatureVector>& points, int k, uint64_t seed,
                       int max_iter, double tol) {
    const size_t n = points.size();
    if (k < 2) throw ValidationError("kmeans: k must be >= 2");
    if (n < static_cast<size_t>(k))
        throw ValidationError("kmeans: need at least k points (" + std::to_string(n) + " < " +
                              std::to_string(k) + ")");
    const size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw ValidationError("kmeans: inconsistent point dimensions");

    KMeansModel model;
    model.k = k;
    model.dim = dim;
    model.centroids.assign(static_cast<size_t>(k) * dim, 0.0);
    model.centroid_class.assign(k, -1);

    // k-means++ seeding
    Rng rng(seed);
    std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());
    {
        const size_t first = rng.uniform_int(n);
        std::copy(points[first].begin(), points[first].end(), model.centroids.begin());
        for (int c = 1; c < k; ++c) {
            const double* prev = model.centroid(c - 1);
            double total = 0.0;
            for (size_t i = 0; i < n; ++i) {
                best_d2[i] = std::min(best_d2[i], dist2(points[i].data(), prev, dim));
                total += best_d2[i];
            }
            size_t pick = 0;
            if (total > 0.0) {
                const double target = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (size_t i = 0; i < n; ++i) {
                    acc += best_d2[i];
                    if (acc >= target) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.uniform_int(n); // all points already covered exactly
            }
            std::copy(points[pick].begin(), points[pick].end(),
                      model.centroids.begin() + static_cast<size_t>(c) * dim);
        }
    }

    std::vector<int> assign(n, 0);
    std::vector<double> pdist(n, 0.0);
    std::vector<double> sums(static_cast<size_t>(k) * dim);
    std::vector<size_t> counts(k);
    std::vector<double> new_centroids(model.centroids.size());

    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        double inertia = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bc = 0;
            for (int c = 0; c < k; ++c) {
                const double d = dist2(points[i].data(), model.centroid(c), dim);
                if (d < best) {
                    best = d;
                    bc = c;
                }
            }
            assign[i] = bc;
            pdist[i] = best;
            inertia += best;
        }
        if (inertia > prev_inertia + 1e-9 * (1.0 + prev_inertia))
            throw Error("kmeans: inertia increased across Lloyd iterations");
        model.inertia_trace.push_back(inertia);
        prev_inertia = inertia;
        model.inertia = inertia;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), size_t{0});
        for (size_t i = 0; i < n; ++i) {
            double* s = sums.data() + static_cast<size_t>(assign[i]) * dim;
            const double* p = points[i].data();
            for (size_t j = 0; j < dim; ++j) s[j] += p[j];
            ++counts[assign[i]];
        }
        for (int c = 0; c < k; ++c) {
            double* nc = new_centroids.data() + static_cast<size_t>(c) * dim;
            if (counts[c] > 0) {
                const double* s = sums.data() + static_cast<size_t>(c) * dim;
                for (size_t j = 0; j < dim; ++j) nc[j] = s[j] / static_cast<double>(counts[c]);
            } else {
                // Re-seed the emptied cluster to the globally worst-served point.
                size_t far_idx = 0;
                for (size_t i = 1; i < n; ++i)
                    if (pdist[i] > pdist[far_idx]) far_idx = i;
                std::copy(points[far_idx].begin(), points[far_idx].end(), nc);
                pdist[far_idx] = 0.0; // two empties should not pick the same point
            }
        }

        double max_shift2 = 0.0;
        for (int c = 0; c < k; ++c)
            max_shift2 = std::max(
                max_shift2, dist2(model.centroid(c), new_centroids.data() + size_t(c) * dim, dim));
        model.centroids.swap(new_centroids);
        if (std::sqrt(max_shift2) < tol) break;
    }
    // Inertia against the final centroids (converged or iteration-capped).
    double inertia_final = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c)
            best = std::min(best, dist2(points[i].data(), model.centroid(c), dim));
        inertia_final += best;
    }
    if (inertia_final > prev_inertia + 1e-9 * (1.0 + prev_inertia))
        throw Error("kmeans: inertia increased at final assignment");
    model.inertia_trace.push_back(inertia_final);
    model.inertia = inertia_final;
    return model;
}

std::vector<int> kmeans_assign(const KMeansModel& model,
                               const std::vector<FeatureVector>& points) {
    std::vector<int> out(points.size(), 0);
    for (size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != model.dim)
            throw ValidationError("kmeans: point dimension does not match model");
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < model.k; ++c) {
            const double d = dist2(points[i].data(), model.centroid(c), model.dim);
            if (d < best) {
                best = d;
                out[i] = c;
            }
        }
    }
    return out;
}

std::vector<std::vector<long>> vote_matrix(const std::vector<int>& assignment,
                                           const std::vector<int>& clean_labels, int k,
                                           int num_classes) {
    if (assignment.size() != clean_labels.size())
        throw ValidationError("vote_matrix: assignment/label size mismatch");
    std::vector<std::vector<long>> votes(k, std::vector<long>(num_classes, 0));
    for (size_t i = 0; i < assignment.size(); ++i) {
        const int a = assignment[i], c = clean_labels[i];
        if (a < 0 || a >= k || c < 0 || c >= num_classes)
            throw ValidationError("vote_matrix: out-of-range assignment or label");
        ++votes[a][c];
    }
    return votes;
}

std::vector<int> greedy_distinct_assignment(const std::vector<std::vector<long>>& votes) {
    const int k = static_cast<int>(votes.size());
    const int c = k > 0 ? static_cast<int>(votes[0].size()) : 0;
    if (k != c) throw ConfigError("greedy assignment: vote matrix must be square (k == C)");
    std::vector<int> result(k, -1);
    std::vector<bool> row_done(k, false), col_done(c, false);
    for (int step = 0; step < k; ++step) {
        long best = -1;
        int br = -1, bc = -1;
        for (int r = 0; r < k; ++r) {
            if (row_done[r]) continue;
            for (int cc = 0; cc < c; ++cc) {
                if (col_done[cc]) continue;
                if (votes[r][cc] > best) { // ties: lower centroid, then lower class
                    best = votes[r][cc];
                    br = r;
                    bc = cc;
                }
            }
        }
        result[br] = bc;
        row_done[br] = true;
        col_done[bc] = true;
    }
    return result;
}

void label_centroids(KMeansModel& model, const std::vector<FeatureVector>& points,
                     const std::vector<int>& clean_labels, int num_classes) {
    if (model.k != num_classes)
        throw ConfigError("label_centroids: requires k == C (" + std::to_string(model.k) +
                          " != " + std::to_string(num_classes) + ")");
    const auto assignment = kmeans_assign(model, points);
    const auto votes = vote_matrix(assignment, clean_labels, model.k, num_classes);
    model.centroid_class = greedy_distinct_assignment(votes);
}

std::vector<int> generate_labels(const FeatureVector& x, const KMeansModel& model, int m) {
    if (m < 1 || m > model.k)
        throw ValidationError("generate_labels: m must be in [1, k]");
    if (x.size() != model.dim)
        throw ValidationError("generate_labels: feature dimension mismatch");
    for (int c : model.centroid_class)
        if (c < 0) throw ConfigError("generate_labels: centroids are not labeled");

    std::vector<std::pair<double, int>> order(model.k);
    for (int c = 0; c < model.k; ++c)
        order[c] = {dist2(x.data(), model.centroid(c), model.dim), c};
    std::sort(order.begin(), order.end()); // pair ordering = distance, then index

    std::vector<int> labels(m);
    for (int i = 0; i < m; ++i) labels[i] = model.centroid_class[order[i].second];
    return labels;
}

void write_kmeans_csv(const KMeansModel& model, const std::string& path) {
    CsvWriter w(path);
    std::vector<std::string> header{"centroid", "class"};
    for (size_t i = 1; i <= model.dim; ++i) header.push_back("c" + std::to_string(i));
    w.row(header);
    for (int c = 0; c < model.k; ++c) {
        std::vector<std::string> row{std::to_string(c), std::to_string(model.centroid_class[c])};
        const double* cent = model.centroid(c);
        for (size_t j = 0; j < model.dim; ++j) row.push_back(format_double(cent[j]));
        w.row(row);
    }
}

} // namespace pqt
