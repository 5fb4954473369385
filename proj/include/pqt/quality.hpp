#pragma once

#include <array>
#include <string>
#include <vector>

#include "pqt/image.hpp"

namespace pqt {

// 36 natural-scene-statistics features. Per scale s in {1,2}:
// [ggd_alpha, ggd_sigma2, then per orientation (H, V, D1, D2):
//  (aggd_nu, aggd_eta, aggd_sigma_l2, aggd_sigma_r2)] -- 18 per scale.
struct QualityFeatures {
    std::array<double, 36> values{};

    double& operator[](size_t i) { return values[i]; }
    double operator[](size_t i) const { return values[i]; }
};

// Corpus statistics backing the ranking score: a Mahalanobis-style
// distance to the corpus feature distribution.
struct ReferenceModel {
    std::vector<double> mean;       // 36
    std::vector<double> covariance; // 36x36 row-major, symmetric
    double ridge = 1e-6;
};

// ITU-style luminance weights, output scaled to [0,1].
GrayPlane to_luminance(const RgbImage& image);

// Mean-subtracted contrast-normalized coefficients: Gaussian-weighted
// 7x7 local mean and standard deviation (sigma_w = 7/6, weights
// normalized to unit sum, mirror-reflected borders), stabilizer 1/255.
// A constant plane maps to an exactly zero plane.
GrayPlane mscn(const GrayPlane& plane);

struct ProductPlanes {
    GrayPlane h, v, d1, d2;
};

// Neighboring-coefficient products along the four orientations; planes
// shrink by one along each shifted axis, no padding.
ProductPlanes pairwise_products(const GrayPlane& plane);

struct GgdFit {
    double alpha = 0.0;
    double sigma2 = 0.0;
    bool clamped = false;
};

struct AggdFit {
    double nu = 0.0;
    double eta = 0.0;
    double sigma_l2 = 0.0;
    double sigma_r2 = 0.0;
    bool clamped = false;
};

// Moment-matching generalized-Gaussian fit; shape solved on [0.2, 10] by
// grid bracketing + bisection.
GgdFit fit_ggd(const std::vector<double>& samples);
AggdFit fit_aggd(const std::vector<double>& samples);

// 2x2 block-mean downsample (floor dims).
GrayPlane downsample2x2(const GrayPlane& plane);

QualityFeatures brisque_features(const GrayPlane& plane);

ReferenceModel fit_reference_model(const std::vector<QualityFeatures>& corpus,
                                   double ridge = 1e-6);

// sqrt((f-mu)^T (Sigma + ridge I)^-1 (f-mu)); larger = statistically more
// atypical = higher annotator-uncertainty rank.
double quality_score(const QualityFeatures& f, const ReferenceModel& ref);

struct ScoredSample {
    int id = 0;
    double score = 0.0;
    QualityFeatures features;
    bool degenerate = false; // constant image; scored as max finite score + 1
};

ReferenceModel fit_reference_from_dataset(const Dataset& dataset, double ridge = 1e-6,
                                          int threads = 0);
std::vector<ScoredSample> score_dataset(const Dataset& dataset, const ReferenceModel& ref,
                                        int threads = 0);

// Ids sorted most-atypical first; ties broken by ascending id.
std::vector<int> rank_by_quality(const std::vector<ScoredSample>& scored);
std::vector<int> rank_by_quality(const Dataset& dataset, const ReferenceModel& ref,
                                 int threads = 0);

void write_scores_csv(const std::vector<ScoredSample>& scored, const std::string& path);
std::vector<ScoredSample> read_scores_csv(const std::string& path);

} // namespace pqt
