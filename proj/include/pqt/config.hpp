#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pqt/clustering.hpp"
#include "pqt/errors.hpp"
#include "pqt/model.hpp"
#include "pqt/pool.hpp"
#include "pqt/shifts.hpp"

namespace pqt {

// Minimal TOML subset: [section] headers (dotted names allowed), string /
// integer / float / boolean scalars and single-line arrays, # comments.
// Keys are flattened to "section.key".
struct TomlValue {
    enum class Kind { string, integer, real, boolean, array };
    Kind kind = Kind::string;
    std::string s;
    int64_t i = 0;
    double d = 0.0;
    bool b = false;
    std::vector<TomlValue> arr;

    double as_real() const;
    int64_t as_int() const;
    const std::string& as_string() const;
    bool as_bool() const;
};

class TomlTable {
public:
    static TomlTable parse(const std::string& text);
    static TomlTable parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const TomlValue& at(const std::string& key) const;
    void set(const std::string& key, TomlValue v) { values_[key] = std::move(v); }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_string_array(const std::string& key,
                                              std::vector<std::string> fallback) const;
    std::vector<int64_t> get_int_array(const std::string& key,
                                       std::vector<int64_t> fallback) const;

    const std::map<std::string, TomlValue>& values() const { return values_; }

private:
    std::map<std::string, TomlValue> values_;
};

enum class Head { vanilla, mc_dropout, duq };
const char* to_string(Head h);
Head head_from_string(const std::string& s);

struct SyntheticSpec {
    size_t n_train = 5000;
    size_t n_test = 1000;
    int classes = 10;
    int side = 24;
    uint64_t seed = 7;
};

struct CifarSpec {
    std::vector<std::string> train_files;
    std::string test_file;
    size_t train_count = 0; // 0 = all records
    size_t test_count = 0;
    int classes = 10;
};

struct DatasetSpec {
    enum class Kind { synthetic, cifar };
    Kind kind = Kind::synthetic;
    SyntheticSpec synthetic;
    CifarSpec cifar;
};

struct LabelSpec {
    std::string noisy_file;  // annotator labels; provenance 'human'
    std::string multi_file;
    double synth_noise_frac = 0.4; // stand-ins synthesized when files absent
    int synth_annotators = 3;
    double synth_annotator_flip = 0.2;
    uint64_t seed = 99;
};

// Directional margins checked in the report footer; fixed ahead of the run.
struct ReportMargins {
    double noise_entropy_gap = 0.3;   // entropy(noisy) - entropy(clean)
    double noise_accuracy_gap = 0.03; // accuracy(clean) - accuracy(noisy)
    double pq_entropy_gap = 0.15;     // entropy(noisy) - entropy(pq)
    double pq_accuracy_slack = 0.01;  // accuracy(pq) >= accuracy(noisy) - slack
};

struct ExperimentConfig {
    DatasetSpec dataset;
    LabelSpec labels;
    PoolConfig pool;
    FeatureMode feature_mode = FeatureMode::pixel;
    std::optional<double> calibrate_target;
    double quality_ridge = 1e-6;
    ClassifierConfig model;
    DuqConfig duq;
    TrainHyper train;
    std::vector<Condition> conditions{Condition::clean, Condition::noisy_single,
                                      Condition::human_multi, Condition::pq_multi};
    std::vector<Head> heads{Head::vanilla, Head::mc_dropout, Head::duq};
    std::vector<SuiteKind> suites{SuiteKind::rotation, SuiteKind::corruption};
    std::vector<uint64_t> seeds{1, 2, 3};
    int mc_passes = 20;
    uint64_t shift_seed = 1234;
    std::string out_dir = "out";
    int threads = 0;
    ReportMargins margins;

    void validate() const;
    // Canonical key=value dump; digest() is its FNV-1a hash. Identical
    // configs produce identical digests, which are embedded in outputs.
    std::string canonical() const;
    std::string digest() const;
};

ExperimentConfig config_from_table(const TomlTable& table);

} // namespace pqt
