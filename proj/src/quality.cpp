#include "pqt/quality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "pqt/csv.hpp"
#include "pqt/parallel.hpp"

namespace pqt {

namespace {

constexpr double kStabilizer = 1.0 / 255.0;
constexpr double kShapeLo = 0.2;
constexpr double kShapeHi = 10.0;
constexpr int kFitMinSamples = 100;

// Gaussian 7x7 window, sigma = 7/6, normalized to unit sum.
const std::array<double, 49>& mscn_window() {
    static const std::array<double, 49> w = [] {
        std::array<double, 49> g{};
        const double s2 = (7.0 / 6.0) * (7.0 / 6.0);
        double sum = 0.0;
        for (int dy = -3; dy <= 3; ++dy)
            for (int dx = -3; dx <= 3; ++dx) {
                const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * s2));
                g[(dy + 3) * 7 + (dx + 3)] = v;
                sum += v;
            }
        for (auto& v : g) v /= sum;
        return g;
    }();
    return w;
}

// Mirror reflection with the edge pixel included (…2,1,0|0,1,2…).
inline int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// rho_ggd(a) = G(1/a)G(3/a)/G(2/a)^2, strictly decreasing on [0.2, 10].
double rho_ggd(double a) {
    return std::exp(std::lgamma(1.0 / a) + std::lgamma(3.0 / a) - 2.0 * std::lgamma(2.0 / a));
}

// rho_aggd(v) = G(2/v)^2 / (G(1/v)G(3/v)) = 1/rho_ggd(v), strictly increasing.
double rho_aggd(double v) { return 1.0 / rho_ggd(v); }

// Solves rho(x) = target on [0.2, 10] for a strictly monotone rho by
// coarse grid bracketing followed by bisection. Returns {x, clamped}.
struct ShapeSolution {
    double x;
    bool clamped;
};

ShapeSolution solve_shape(double target, bool increasing) {
    const auto rho = increasing ? rho_aggd : rho_ggd;
    const double lo_val = rho(kShapeLo), hi_val = rho(kShapeHi);
    const double at_lo = increasing ? lo_val : hi_val;  // smallest rho value
    const double at_hi = increasing ? hi_val : lo_val;  // largest rho value
    if (target <= at_lo) return {increasing ? kShapeLo : kShapeHi, true};
    if (target >= at_hi) return {increasing ? kShapeHi : kShapeLo, true};

    constexpr int kGrid = 64;
    double a = kShapeLo, b = kShapeHi;
    double prev = kShapeLo;
    for (int i = 1; i <= kGrid; ++i) {
        const double x = kShapeLo + (kShapeHi - kShapeLo) * i / kGrid;
        const double lo_r = rho(prev), hi_r = rho(x);
        const bool inside = increasing ? (lo_r <= target && target <= hi_r)
                                       : (hi_r <= target && target <= lo_r);
        if (inside) {
            a = prev;
            b = x;
            break;
        }
        prev = x;
    }
    // Bisect well below the contract tolerance so rho(x) tracks the target.
    while (b - a > 1e-6) {
        const double mid = 0.5 * (a + b);
        const bool go_right = increasing ? rho(mid) < target : rho(mid) > target;
        if (go_right)
            a = mid;
        else
            b = mid;
    }
    return {0.5 * (a + b), false};
}

} // namespace

GrayPlane to_luminance(const RgbImage& image) {
    if (!image.valid()) throw ValidationError("to_luminance: invalid image buffer");
    GrayPlane out(image.height, image.width);
    const size_t plane = image.plane_size();
    for (size_t i = 0; i < plane; ++i) {
        const double v =
            (0.299 * image.data[i] + 0.587 * image.data[i + plane] +
             0.114 * image.data[i + 2 * plane]) /
            255.0;
        out.values[i] = std::min(1.0, std::max(0.0, v));
    }
    return out;
}

GrayPlane mscn(const GrayPlane& plane) {
    const int h = plane.height, w = plane.width;
    if (h < 7 || w < 7) throw ValidationError("mscn: plane must be at least 7x7");
    const auto& win = mscn_window();
    GrayPlane out(h, w);

    // Differences against the center pixel keep a constant plane exactly
    // zero regardless of the floating-point weight sum.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double center = plane.at(y, x);
            double md = 0.0, md2 = 0.0;
            int k = 0;
            for (int dy = -3; dy <= 3; ++dy) {
                const int yy = reflect(y + dy, h);
                for (int dx = -3; dx <= 3; ++dx, ++k) {
                    const int xx = reflect(x + dx, w);
                    const double d = plane.at(yy, xx) - center;
                    md += win[k] * d;
                    md2 += win[k] * d * d;
                }
            }
            const double var = std::max(0.0, md2 - md * md);
            out.at(y, x) = -md / (std::sqrt(var) + kStabilizer);
        }
    }
    return out;
}

ProductPlanes pairwise_products(const GrayPlane& plane) {
    const int h = plane.height, w = plane.width;
    if (h < 2 || w < 2) throw ValidationError("pairwise_products: plane must be at least 2x2");
    ProductPlanes p;
    p.h = GrayPlane(h, w - 1);
    p.v = GrayPlane(h - 1, w);
    p.d1 = GrayPlane(h - 1, w - 1);
    p.d2 = GrayPlane(h - 1, w - 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) p.h.at(y, x) = plane.at(y, x) * plane.at(y, x + 1);
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) p.v.at(y, x) = plane.at(y, x) * plane.at(y + 1, x);
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x + 1 < w; ++x) p.d1.at(y, x) = plane.at(y, x) * plane.at(y + 1, x + 1);
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 1; x < w; ++x) p.d2.at(y, x - 1) = plane.at(y, x) * plane.at(y + 1, x - 1);
    return p;
}

GgdFit fit_ggd(const std::vector<double>& samples) {
    if (samples.size() < kFitMinSamples)
        throw InsufficientDataError("fit_ggd: need at least " + std::to_string(kFitMinSamples) +
                                    " samples, got " + std::to_string(samples.size()));
    double m1 = 0.0, m2 = 0.0;
    for (double x : samples) {
        m1 += std::abs(x);
        m2 += x * x;
    }
    m1 /= samples.size();
    m2 /= samples.size();
    if (m2 == 0.0) throw DegenerateInputError("fit_ggd: all samples are zero");

    const double target = m2 / (m1 * m1);
    const auto sol = solve_shape(target, /*increasing=*/false);
    return {sol.x, m2, sol.clamped};
}

AggdFit fit_aggd(const std::vector<double>& samples) {
    if (samples.size() < kFitMinSamples)
        throw InsufficientDataError("fit_aggd: need at least " + std::to_string(kFitMinSamples) +
                                    " samples, got " + std::to_string(samples.size()));
    double sum_l = 0.0, sum_r = 0.0, m1 = 0.0, m2 = 0.0;
    size_t n_l = 0, n_r = 0;
    bool has_pos = false;
    for (double x : samples) {
        m1 += std::abs(x);
        m2 += x * x;
        if (x < 0.0) {
            sum_l += x * x;
            ++n_l;
        } else {
            sum_r += x * x;
            ++n_r;
            if (x > 0.0) has_pos = true;
        }
    }
    if (n_l == 0 || !has_pos)
        throw DegenerateInputError(
            "fit_aggd: one-sided data (need at least one negative and one positive sample)");
    m1 /= samples.size();
    m2 /= samples.size();
    const double sigma_l2 = sum_l / n_l;
    const double sigma_r2 = sum_r / n_r;
    const double sigma_l = std::sqrt(sigma_l2), sigma_r = std::sqrt(sigma_r2);

    const double gamma = sigma_l / sigma_r;
    const double r = (m1 * m1) / m2;
    const double target = r * (gamma * gamma * gamma + 1.0) * (gamma + 1.0) /
                          ((gamma * gamma + 1.0) * (gamma * gamma + 1.0));
    const auto sol = solve_shape(target, /*increasing=*/true);
    const double nu = sol.x;

    const double g1 = std::lgamma(1.0 / nu), g2 = std::lgamma(2.0 / nu),
                 g3 = std::lgamma(3.0 / nu);
    const double eta = (sigma_r - sigma_l) * std::exp(g2 - g1) * std::sqrt(std::exp(g1 - g3));
    return {nu, eta, sigma_l2, sigma_r2, sol.clamped};
}

GrayPlane downsample2x2(const GrayPlane& plane) {
    const int oh = plane.height / 2, ow = plane.width / 2;
    GrayPlane out(oh, ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out.at(y, x) = 0.25 * (plane.at(2 * y, 2 * x) + plane.at(2 * y, 2 * x + 1) +
                                   plane.at(2 * y + 1, 2 * x) + plane.at(2 * y + 1, 2 * x + 1));
    return out;
}

QualityFeatures brisque_features(const GrayPlane& plane) {
    if (plane.height < 16 || plane.width < 16)
        throw ValidationError("brisque_features: plane must be at least 16x16");
    QualityFeatures f;
    size_t idx = 0;
    GrayPlane current = plane;
    for (int scale = 1; scale <= 2; ++scale) {
        if (scale == 2) current = downsample2x2(current);
        const GrayPlane norm = mscn(current);
        const std::string at_scale = "brisque_features: scale " + std::to_string(scale);
        try {
            const GgdFit g = fit_ggd(norm.values);
            f[idx++] = g.alpha;
            f[idx++] = g.sigma2;
        } catch (const DegenerateInputError& e) {
            throw DegenerateInputError(at_scale + " mscn: " + e.what());
        } catch (const InsufficientDataError& e) {
            throw InsufficientDataError(at_scale + " mscn: " + e.what());
        }
        const ProductPlanes prod = pairwise_products(norm);
        const GrayPlane* planes[4] = {&prod.h, &prod.v, &prod.d1, &prod.d2};
        const char* names[4] = {"H", "V", "D1", "D2"};
        for (int o = 0; o < 4; ++o) {
            try {
                const AggdFit a = fit_aggd(planes[o]->values);
                f[idx++] = a.nu;
                f[idx++] = a.eta;
                f[idx++] = a.sigma_l2;
                f[idx++] = a.sigma_r2;
            } catch (const DegenerateInputError& e) {
                throw DegenerateInputError(at_scale + " orientation " + names[o] + ": " +
                                           e.what());
            } catch (const InsufficientDataError& e) {
                throw InsufficientDataError(at_scale + " orientation " + names[o] + ": " +
                                            e.what());
            }
        }
    }
    return f;
}

ReferenceModel fit_reference_model(const std::vector<QualityFeatures>& corpus, double ridge) {
    constexpr int D = 36;
    if (corpus.size() < 2)
        throw InsufficientDataError("fit_reference_model: need at least 2 corpus vectors");
    ReferenceModel m;
    m.ridge = ridge;
    m.mean.assign(D, 0.0);
    m.covariance.assign(D * D, 0.0);
    for (const auto& f : corpus)
        for (int i = 0; i < D; ++i) m.mean[i] += f[i];
    for (auto& v : m.mean) v /= static_cast<double>(corpus.size());
    for (const auto& f : corpus) {
        double d[D];
        for (int i = 0; i < D; ++i) d[i] = f[i] - m.mean[i];
        for (int i = 0; i < D; ++i)
            for (int j = i; j < D; ++j) m.covariance[i * D + j] += d[i] * d[j];
    }
    const double inv = 1.0 / static_cast<double>(corpus.size() - 1);
    for (int i = 0; i < D; ++i)
        for (int j = i; j < D; ++j) {
            const double v = m.covariance[i * D + j] * inv;
            m.covariance[i * D + j] = v;
            m.covariance[j * D + i] = v; // exact symmetrization
        }
    return m;
}

namespace {

struct SolvedReference {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd mean;
    Eigen::MatrixXd a;

    explicit SolvedReference(const ReferenceModel& ref) {
        constexpr int D = 36;
        if (ref.mean.size() != D || ref.covariance.size() != D * D)
            throw ValidationError("quality_score: reference model has wrong dimensions");
        mean = Eigen::Map<const Eigen::VectorXd>(ref.mean.data(), D);
        a = Eigen::Map<const Eigen::Matrix<double, D, D, Eigen::RowMajor>>(ref.covariance.data());
        a.diagonal().array() += ref.ridge;
        llt.compute(a);
        if (llt.info() != Eigen::Success)
            throw ValidationError(
                "quality_score: covariance + ridge*I is not positive definite; increase ridge");
    }

    double score(const QualityFeatures& f) const {
        constexpr int D = 36;
        Eigen::VectorXd diff(D);
        for (int i = 0; i < D; ++i) {
            if (!std::isfinite(f[i]))
                throw ValidationError("quality_score: non-finite feature value");
            diff[i] = f[i] - mean[i];
        }
        const Eigen::VectorXd x = llt.solve(diff);
        const double resid = (a * x - diff).cwiseAbs().maxCoeff();
        if (!std::isfinite(resid) || resid > 1e-6 * std::max(1.0, diff.cwiseAbs().maxCoeff()))
            throw ValidationError(
                "quality_score: linear solve failed (near-singular covariance); increase ridge");
        const double quad = diff.dot(x);
        if (quad < 0.0) {
            if (quad < -1e-9) throw ValidationError("quality_score: negative quadratic form");
            return 0.0;
        }
        return std::sqrt(quad);
    }
};

} // namespace

double quality_score(const QualityFeatures& f, const ReferenceModel& ref) {
    return SolvedReference(ref).score(f);
}

ReferenceModel fit_reference_from_dataset(const Dataset& dataset, double ridge, int threads) {
    std::vector<QualityFeatures> feats(dataset.size());
    std::vector<uint8_t> ok(dataset.size(), 0);
    const int t = threads > 0 ? threads : default_thread_count();
    parallel_chunks(dataset.size(), 64, t, [&](size_t b, size_t e, size_t) {
        for (size_t i = b; i < e; ++i) {
            try {
                feats[i] = brisque_features(to_luminance(dataset.samples[i].image));
                ok[i] = 1;
            } catch (const DegenerateInputError&) {
                ok[i] = 0;
            }
        }
    });
    std::vector<QualityFeatures> corpus;
    corpus.reserve(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i)
        if (ok[i]) corpus.push_back(feats[i]);
    if (corpus.size() < 2)
        throw InsufficientDataError("fit_reference_from_dataset: fewer than 2 scoreable images");
    return fit_reference_model(corpus, ridge);
}

std::vector<ScoredSample> score_dataset(const Dataset& dataset, const ReferenceModel& ref,
                                        int threads) {
    SolvedReference solved(ref);
    std::vector<ScoredSample> out(dataset.size());
    const int t = threads > 0 ? threads : default_thread_count();
    parallel_chunks(dataset.size(), 64, t, [&](size_t b, size_t e, size_t) {
        for (size_t i = b; i < e; ++i) {
            ScoredSample& s = out[i];
            s.id = dataset.samples[i].id;
            try {
                s.features = brisque_features(to_luminance(dataset.samples[i].image));
                s.score = solved.score(s.features);
            } catch (const DegenerateInputError&) {
                s.degenerate = true;
            }
        }
    });
    // Degenerate (constant) images are maximally uninformative: rank them
    // ahead of everything else.
    double max_score = 0.0;
    for (const auto& s : out)
        if (!s.degenerate) max_score = std::max(max_score, s.score);
    for (auto& s : out)
        if (s.degenerate) s.score = max_score + 1.0;
    return out;
}

std::vector<int> rank_by_quality(const std::vector<ScoredSample>& scored) {
    std::vector<int> ids(scored.size());
    std::vector<double> score_by_id(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) {
        const int id = scored[i].id;
        if (id < 0 || id >= static_cast<int>(scored.size()))
            throw ValidationError("rank_by_quality: non-contiguous sample ids");
        ids[i] = id;
        score_by_id[id] = scored[i].score;
    }
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (score_by_id[a] != score_by_id[b]) return score_by_id[a] > score_by_id[b];
        return a < b;
    });
    return ids;
}

std::vector<int> rank_by_quality(const Dataset& dataset, const ReferenceModel& ref, int threads) {
    return rank_by_quality(score_dataset(dataset, ref, threads));
}

void write_scores_csv(const std::vector<ScoredSample>& scored, const std::string& path) {
    CsvWriter w(path);
    std::vector<std::string> header{"id", "score"};
    for (int i = 1; i <= 36; ++i) header.push_back("f" + std::to_string(i));
    w.row(header);
    for (const auto& s : scored) {
        std::vector<std::string> row{std::to_string(s.id), format_double(s.score)};
        for (int i = 0; i < 36; ++i)
            row.push_back(s.degenerate ? "0" : format_double(s.features[i]));
        w.row(row);
    }
}

std::vector<ScoredSample> read_scores_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    const int id_col = t.column("id");
    const int score_col = t.column("score");
    std::vector<ScoredSample> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        ScoredSample s;
        s.id = static_cast<int>(parse_long(row[id_col]));
        s.score = parse_double(row[score_col]);
        for (int i = 0; i < 36; ++i) {
            const size_t col = static_cast<size_t>(score_col) + 1 + i;
            if (col < row.size()) s.features[i] = parse_double(row[col]);
        }
        out.push_back(s);
    }
    return out;
}

} // namespace pqt
