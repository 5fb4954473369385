#include "pqt/pool.hpp"

#include <algorithm>
#include <cmath>

#include "pqt/csv.hpp"

namespace pqt {

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::clean: return "clean";
        case Provenance::generated: return "generated";
        case Provenance::human: return "human";
    }
    return "?";
}

const char* to_string(Condition c) {
    switch (c) {
        case Condition::clean: return "clean";
        case Condition::noisy_single: return "noisy_single";
        case Condition::human_multi: return "human_multi";
        case Condition::pq_multi: return "pq_multi";
    }
    return "?";
}

Condition condition_from_string(const std::string& s) {
    if (s == "clean") return Condition::clean;
    if (s == "noisy_single") return Condition::noisy_single;
    if (s == "human_multi") return Condition::human_multi;
    if (s == "pq_multi") return Condition::pq_multi;
    throw ConfigError("unknown condition '" + s + "'");
}

void PoolConfig::validate(int num_classes) const {
    if (!(pool_frac >= 0.0 && pool_frac <= 1.0))
        throw ValidationError("pool: pool_frac must be in [0,1]");
    if (!(multi_frac >= 0.0 && multi_frac <= pool_frac))
        throw ValidationError("pool: need 0 <= multi_frac <= pool_frac");
    if (!(triple_frac >= 0.0 && triple_frac <= multi_frac))
        throw ValidationError("pool: need 0 <= triple_frac <= multi_frac");
    if (k_max < 2 || k_max > num_classes)
        throw ValidationError("pool: need 2 <= k_max <= C");
}

namespace {

int clean_label_of(const Dataset& dataset, int id) {
    const auto& s = dataset.samples[id];
    if (!s.clean_label)
        throw ValidationError("pool: sample " + std::to_string(id) + " has no clean label");
    return *s.clean_label;
}

void check_ranking(const Dataset& dataset, const std::vector<int>& ranking) {
    if (ranking.size() != dataset.size())
        throw ValidationError("pool: ranking size does not match dataset");
    std::vector<uint8_t> seen(dataset.size(), 0);
    for (int id : ranking) {
        if (id < 0 || id >= static_cast<int>(dataset.size()) || seen[id])
            throw ValidationError("pool: ranking is not a permutation of dataset ids");
        seen[id] = 1;
    }
}

} // namespace

MultiLabelDataset build_pool(const Dataset& dataset, const std::vector<int>& ranking,
                             const PoolConfig& cfg, const Labeler& labeler) {
    cfg.validate(dataset.num_classes);
    check_ranking(dataset, ranking);
    if (!labeler) throw ValidationError("pool: no labeler supplied");

    const size_t n = dataset.size();
    const size_t n_pool = static_cast<size_t>(std::lround(cfg.pool_frac * n));
    size_t n_multi = static_cast<size_t>(std::lround(cfg.multi_frac * n));
    size_t n_triple = static_cast<size_t>(std::lround(cfg.triple_frac * n));
    n_multi = std::min(n_multi, n_pool);
    n_triple = std::min(n_triple, n_multi);

    MultiLabelDataset mld;
    mld.dataset = &dataset;
    mld.labels.resize(n);
    mld.provenance.assign(n, Provenance::clean);

    for (size_t i = 0; i < n; ++i) mld.labels[i] = {clean_label_of(dataset, static_cast<int>(i))};

    for (size_t r = 0; r < n_pool; ++r) {
        const int id = ranking[r];
        const int m = r < n_triple ? std::min(3, cfg.k_max) : (r < n_multi ? 2 : 1);
        std::vector<int> labels = labeler(dataset.samples[id], m);
        if (labels.size() != static_cast<size_t>(m))
            throw ValidationError("pool: labeler returned " + std::to_string(labels.size()) +
                                  " labels, expected " + std::to_string(m));
        for (int v : labels)
            if (v < 0 || v >= dataset.num_classes)
                throw ValidationError("pool: labeler produced out-of-range label");
        mld.labels[id] = std::move(labels);
        mld.provenance[id] = Provenance::generated;
    }
    return mld;
}

std::vector<TrainPair> replicate(const MultiLabelDataset& mld) {
    std::vector<TrainPair> pairs;
    size_t total = 0;
    for (const auto& l : mld.labels) total += l.size();
    pairs.reserve(total);
    for (size_t id = 0; id < mld.labels.size(); ++id) {
        const auto& list = mld.labels[id];
        for (size_t j = 0; j < list.size(); ++j)
            pairs.push_back({static_cast<int>(id), list[j], static_cast<int>(j)});
    }
    return pairs;
}

double disagreement_rate(const MultiLabelDataset& mld) {
    if (!mld.dataset) throw ValidationError("disagreement_rate: dataset reference missing");
    const auto pairs = replicate(mld);
    if (pairs.empty()) return 0.0;
    size_t wrong = 0;
    for (const auto& p : pairs)
        if (p.label != clean_label_of(*mld.dataset, p.sample_id)) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(pairs.size());
}

MultiLabelDataset build_condition(Condition condition, const Dataset& dataset,
                                  const ConditionInputs& inputs, const PoolConfig& cfg) {
    const size_t n = dataset.size();
    MultiLabelDataset mld;
    mld.dataset = &dataset;
    mld.labels.resize(n);
    mld.provenance.assign(n, Provenance::clean);

    switch (condition) {
        case Condition::clean: {
            for (size_t i = 0; i < n; ++i)
                mld.labels[i] = {clean_label_of(dataset, static_cast<int>(i))};
            return mld;
        }
        case Condition::noisy_single: {
            if (!inputs.noisy_labels)
                throw ConfigError("condition noisy_single requires a noisy label file");
            for (size_t i = 0; i < n; ++i) {
                const auto& list = inputs.noisy_labels->of(static_cast<int>(i));
                mld.labels[i] = {list.front()};
                mld.provenance[i] = inputs.file_provenance;
            }
            return mld;
        }
        case Condition::human_multi: {
            if (!inputs.multi_labels)
                throw ConfigError("condition human_multi requires a multi-label file");
            for (size_t i = 0; i < n; ++i) {
                const auto& list = inputs.multi_labels->of(static_cast<int>(i));
                if (list.size() > static_cast<size_t>(cfg.k_max))
                    throw ValidationError("condition human_multi: sample " + std::to_string(i) +
                                          " carries more than k_max labels");
                mld.labels[i] = list;
                mld.provenance[i] = inputs.file_provenance;
            }
            return mld;
        }
        case Condition::pq_multi: {
            if (!inputs.ranking || !inputs.labeler)
                throw ConfigError(
                    "condition pq_multi requires a quality ranking and a fitted labeler");
            return build_pool(dataset, *inputs.ranking, cfg, inputs.labeler);
        }
    }
    throw ConfigError("unknown condition");
}

CalibrationResult calibrate_pool_frac(const Dataset& dataset, const std::vector<int>& ranking,
                                      PoolConfig cfg, const Labeler& labeler, double target_rate,
                                      double band) {
    constexpr double kStep = 0.01;
    auto rate_at = [&](double frac) {
        PoolConfig c = cfg;
        c.pool_frac = frac;
        c.multi_frac = std::min(c.multi_frac, frac);
        c.triple_frac = std::min(c.triple_frac, c.multi_frac);
        return disagreement_rate(build_pool(dataset, ranking, c, labeler));
    };

    double frac = cfg.pool_frac;
    double rate = rate_at(frac);
    double best_frac = frac, best_gap = std::abs(rate - target_rate);
    // Disagreement grows with the pool, so walk toward the target and stop
    // when crossing it or hitting a bound.
    const int dir = rate < target_rate ? 1 : -1;
    while (std::abs(rate - target_rate) > band) {
        const double next = frac + dir * kStep;
        if (next < 0.0 || next > 1.0) break;
        frac = next;
        rate = rate_at(frac);
        if (std::abs(rate - target_rate) < best_gap) {
            best_gap = std::abs(rate - target_rate);
            best_frac = frac;
        }
        if ((dir > 0 && rate >= target_rate) || (dir < 0 && rate <= target_rate)) break;
    }

    CalibrationResult result;
    result.config = cfg;
    result.config.pool_frac = best_frac;
    result.config.multi_frac = std::min(cfg.multi_frac, best_frac);
    result.config.triple_frac = std::min(cfg.triple_frac, result.config.multi_frac);
    result.achieved_rate = rate_at(best_frac);
    return result;
}

void write_pairs_csv(const MultiLabelDataset& mld, const std::string& path) {
    CsvWriter w(path);
    w.row({"id", "label", "provenance"});
    for (const auto& p : replicate(mld))
        w.row({std::to_string(p.sample_id), std::to_string(p.label),
               to_string(mld.provenance[p.sample_id])});
}

void write_pool_manifest(const std::vector<ScoredSample>& scored, const std::vector<int>& ranking,
                         const MultiLabelDataset& mld, const std::string& path) {
    std::vector<double> score_by_id(scored.size(), 0.0);
    for (const auto& s : scored) score_by_id[s.id] = s.score;
    CsvWriter w(path);
    w.row({"id", "rank", "score", "num_labels"});
    for (size_t r = 0; r < ranking.size(); ++r) {
        const int id = ranking[r];
        w.row({std::to_string(id), std::to_string(r), format_double(score_by_id[id]),
               std::to_string(mld.labels[id].size())});
    }
}

} // namespace pqt
