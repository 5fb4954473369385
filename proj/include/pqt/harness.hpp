#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pqt/config.hpp"
#include "pqt/model.hpp"
#include "pqt/pool.hpp"
#include "pqt/quality.hpp"
#include "pqt/shifts.hpp"

namespace pqt {

struct SpecResult {
    std::string spec;
    double entropy = 0.0;
    double accuracy = 0.0;
};

struct SeedRun {
    uint64_t seed = 0;
    double entropy = 0.0;  // unweighted mean over the suite's shift specs
    double accuracy = 0.0;
    std::vector<SpecResult> per_spec;
};

struct ReportCell {
    SuiteKind suite = SuiteKind::rotation;
    Condition condition = Condition::clean;
    Head head = Head::vanilla;
    bool ok = false;
    std::string error;
    std::vector<SeedRun> runs;
    double entropy_mean = 0.0, entropy_std = 0.0;
    double accuracy_mean = 0.0, accuracy_std = 0.0;
};

struct FooterCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct EvalReport {
    std::string digest;
    std::vector<uint64_t> seeds;
    std::vector<std::pair<Condition, double>> disagreement;
    std::vector<ReportCell> cells;
    std::vector<FooterCheck> checks;

    const ReportCell* find(SuiteKind suite, Condition condition, Head head) const;
};

// Exact-count synthetic label noise: round(frac*N) samples get a uniformly
// chosen wrong label. Stand-in annotator sets draw `annotators` labels per
// sample, each wrong with probability flip.
LabelFile make_noisy_labels(const Dataset& dataset, double frac, uint64_t seed);
LabelFile make_multi_labels(const Dataset& dataset, int annotators, double flip, uint64_t seed);

struct HeadEval {
    double entropy = 0.0;
    double accuracy = 0.0;
};

// Mean predictive entropy (bits) and argmax accuracy of one head over an
// image set. mc_passes and seed only affect the mc_dropout head.
HeadEval evaluate_model(const ConvNet& net, Head head, const std::vector<Sample>& images,
                        int mc_passes, uint64_t seed, int threads = 0);

Dataset load_train_dataset(const ExperimentConfig& cfg);
Dataset load_test_dataset(const ExperimentConfig& cfg);

// Prepares shared state once (datasets, label files, quality ranking,
// k-means labeler, per-condition multi-label datasets and their emitted
// CSVs) and trains/evaluates on demand with caching. Vanilla and
// mc_dropout share one trained softmax network per (condition, seed).
class Harness {
public:
    // `precomputed_scores` (e.g. parsed from a scores.csv emitted by an
    // earlier run) replaces the in-process quality scoring pass.
    explicit Harness(ExperimentConfig cfg,
                     std::optional<std::vector<ScoredSample>> precomputed_scores = std::nullopt);

    const ExperimentConfig& config() const { return cfg_; }
    const Dataset& train_set() const { return train_; }
    const Dataset& test_set() const { return test_; }
    const std::vector<ScoredSample>& scored() const { return scored_; }
    const std::vector<int>& ranking() const { return ranking_; }

    const MultiLabelDataset& condition(Condition c);
    double condition_disagreement(Condition c);

    enum class TrainedKind { softmax, duq };
    const ConvNet& model_for(Condition c, TrainedKind kind, uint64_t seed);

    // One (condition, head) across all configured suites and seeds.
    std::vector<ReportCell> run_condition(Condition condition, Head head);

    // The full grid; writes report.csv, breakdown.csv and report.md.
    EvalReport reproduce();

private:
    ExperimentConfig cfg_;
    Dataset train_, test_;
    std::optional<LabelFile> noisy_labels_, multi_labels_;
    Provenance noisy_prov_ = Provenance::human, multi_prov_ = Provenance::human;
    std::vector<ScoredSample> scored_;
    std::vector<int> ranking_;
    std::unique_ptr<FeatureExtractor> extractor_;
    std::optional<KMeansModel> kmeans_;
    std::vector<FeatureVector> train_features_;
    std::map<int, MultiLabelDataset> conditions_;
    std::map<int, std::string> condition_errors_;
    std::map<std::tuple<int, int, uint64_t>, std::unique_ptr<ConvNet>> model_cache_;

    void prepare_labels();
    void prepare_ranking();
    void ensure_labeler();
    Labeler labeler();
    void write_condition_outputs(Condition c, const MultiLabelDataset& mld);
    std::vector<ReportCell> evaluate_grid(const std::vector<Condition>& conditions,
                                          const std::vector<Head>& heads);
};

EvalReport run_condition(Condition condition, Head head, const ExperimentConfig& cfg);
EvalReport reproduce(const ExperimentConfig& cfg);

void write_report_csv(const EvalReport& report, const std::string& path);
void write_breakdown_csv(const EvalReport& report, const std::string& path);
void write_report_md(const EvalReport& report, const ExperimentConfig& cfg,
                     const std::string& path);

} // namespace pqt
