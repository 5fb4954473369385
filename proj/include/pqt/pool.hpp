#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pqt/dataset_io.hpp"
#include "pqt/image.hpp"
#include "pqt/quality.hpp"

namespace pqt {

enum class Provenance { clean, generated, human };
enum class Condition { clean, noisy_single, human_multi, pq_multi };

const char* to_string(Provenance p);
const char* to_string(Condition c);
Condition condition_from_string(const std::string& s);

struct PoolConfig {
    double pool_frac = 0.40;   // fraction of the ranking that enters the pool
    double multi_frac = 0.10;  // fraction that receives >= 2 labels
    double triple_frac = 0.05; // fraction that receives min(3, k_max) labels
    int k_max = 3;
    uint64_t seed = 0;

    void validate(int num_classes) const;
};

// Per-sample label lists plus how each list was produced. Indexed by the
// dense sample id of the underlying dataset.
struct MultiLabelDataset {
    const Dataset* dataset = nullptr;
    std::vector<std::vector<int>> labels;
    std::vector<Provenance> provenance;

    size_t size() const { return labels.size(); }
};

struct TrainPair {
    int sample_id = 0;
    int label = 0;
    int replication_index = 0;
};

using Labeler = std::function<std::vector<int>(const Sample&, int)>;

// Top round(pool_frac*N) of the ranking becomes the pool: the first
// round(triple_frac*N) get min(3, k_max) generated labels, the next
// round(multi_frac*N) - round(triple_frac*N) get 2, the rest of the pool
// gets 1. Non-pool samples keep their clean label.
MultiLabelDataset build_pool(const Dataset& dataset, const std::vector<int>& ranking,
                             const PoolConfig& cfg, const Labeler& labeler);

// One pair per (sample, label-list entry), ordered by (id, replication).
std::vector<TrainPair> replicate(const MultiLabelDataset& mld);

// Fraction of train pairs whose label differs from the clean label.
double disagreement_rate(const MultiLabelDataset& mld);

struct ConditionInputs {
    const LabelFile* noisy_labels = nullptr;
    const LabelFile* multi_labels = nullptr;
    // Tag applied to file-sourced labels; real annotator files are 'human',
    // synthesized stand-ins must stay 'generated'.
    Provenance file_provenance = Provenance::human;
    const std::vector<int>* ranking = nullptr;
    Labeler labeler;
};

MultiLabelDataset build_condition(Condition condition, const Dataset& dataset,
                                  const ConditionInputs& inputs, const PoolConfig& cfg);

struct CalibrationResult {
    PoolConfig config;
    double achieved_rate = 0.0;
};

// Steps pool_frac in 0.01 increments toward the target disagreement rate;
// stops inside +-band or at the closest reachable rate.
CalibrationResult calibrate_pool_frac(const Dataset& dataset, const std::vector<int>& ranking,
                                      PoolConfig cfg, const Labeler& labeler, double target_rate,
                                      double band = 0.01);

void write_pairs_csv(const MultiLabelDataset& mld, const std::string& path);
void write_pool_manifest(const std::vector<ScoredSample>& scored, const std::vector<int>& ranking,
                         const MultiLabelDataset& mld, const std::string& path);

} // namespace pqt
