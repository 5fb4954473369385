#include "pqt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "pqt/checkpoint.hpp"
#include "pqt/csv.hpp"
#include "pqt/dataset_io.hpp"
#include "pqt/parallel.hpp"
#include "pqt/rng.hpp"

namespace pqt {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kMcEvalTag = 0x6d63657661ULL;

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stdev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

std::string seed_list_string(const std::vector<uint64_t>& seeds) {
    std::string s;
    for (size_t i = 0; i < seeds.size(); ++i) {
        if (i) s += ";";
        s += std::to_string(seeds[i]);
    }
    return s;
}

} // namespace

HeadEval evaluate_model(const ConvNet& net, Head head, const std::vector<Sample>& images,
                        int mc_passes, uint64_t run_seed, int threads) {
    if (images.empty()) throw ValidationError("evaluate: empty image set");
    std::vector<double> ent(images.size(), 0.0);
    std::vector<uint8_t> correct(images.size(), 0);
    const int t = threads > 0 ? threads : default_thread_count();
    parallel_chunks(images.size(), 32, t, [&](size_t b, size_t e, size_t) {
        for (size_t i = b; i < e; ++i) {
            const Sample& s = images[i];
            if (!s.clean_label)
                throw ValidationError("evaluate: test sample without a label");
            std::vector<double> probs;
            switch (head) {
                case Head::vanilla: probs = predict(net, s.image); break;
                case Head::mc_dropout:
                    probs = mc_dropout_predict(
                        net, s.image, mc_passes,
                        mix_seed(run_seed, kMcEvalTag, static_cast<uint64_t>(s.id)));
                    break;
                case Head::duq: probs = duq_predict(net, s.image).probs; break;
            }
            ent[i] = entropy_bits(probs);
            int best = 0;
            for (size_t k = 1; k < probs.size(); ++k)
                if (probs[k] > probs[best]) best = static_cast<int>(k);
            correct[i] = best == *s.clean_label ? 1 : 0;
        }
    });
    HeadEval o;
    size_t n_correct = 0;
    for (size_t i = 0; i < images.size(); ++i) {
        o.entropy += ent[i];
        n_correct += correct[i];
    }
    o.entropy /= static_cast<double>(images.size());
    o.accuracy = static_cast<double>(n_correct) / static_cast<double>(images.size());
    return o;
}

const ReportCell* EvalReport::find(SuiteKind suite, Condition condition, Head head) const {
    for (const auto& c : cells)
        if (c.suite == suite && c.condition == condition && c.head == head) return &c;
    return nullptr;
}

LabelFile make_noisy_labels(const Dataset& dataset, double frac, uint64_t seed) {
    if (frac < 0.0 || frac > 1.0) throw ValidationError("make_noisy_labels: frac must be in [0,1]");
    const size_t n = dataset.size();
    const size_t n_flip = static_cast<size_t>(std::lround(frac * n));
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(mix_seed(seed, 0x6e6f697379ULL));
    rng.shuffle(ids);

    LabelFile lf;
    std::vector<uint8_t> flip(n, 0);
    for (size_t i = 0; i < n_flip; ++i) flip[ids[i]] = 1;
    for (size_t i = 0; i < n; ++i) {
        const auto& s = dataset.samples[i];
        if (!s.clean_label)
            throw ValidationError("make_noisy_labels: sample without clean label");
        int label = *s.clean_label;
        if (flip[i]) {
            const int offset = 1 + static_cast<int>(rng.uniform_int(dataset.num_classes - 1));
            label = (label + offset) % dataset.num_classes;
        }
        lf.labels[static_cast<int>(i)] = {label};
    }
    return lf;
}

LabelFile make_multi_labels(const Dataset& dataset, int annotators, double flip, uint64_t seed) {
    if (annotators < 1) throw ValidationError("make_multi_labels: need >= 1 annotators");
    if (flip < 0.0 || flip > 1.0) throw ValidationError("make_multi_labels: flip must be in [0,1]");
    Rng rng(mix_seed(seed, 0x6d756c7469ULL));
    LabelFile lf;
    for (size_t i = 0; i < dataset.size(); ++i) {
        const auto& s = dataset.samples[i];
        if (!s.clean_label)
            throw ValidationError("make_multi_labels: sample without clean label");
        std::vector<int> labels;
        for (int a = 0; a < annotators; ++a) {
            int label = *s.clean_label;
            if (rng.uniform() < flip) {
                const int offset = 1 + static_cast<int>(rng.uniform_int(dataset.num_classes - 1));
                label = (label + offset) % dataset.num_classes;
            }
            labels.push_back(label);
        }
        lf.labels[static_cast<int>(i)] = std::move(labels);
    }
    return lf;
}

Dataset load_train_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == DatasetSpec::Kind::synthetic) {
        const auto& s = cfg.dataset.synthetic;
        return make_dataset(synthetic_dataset(s.seed, s.n_train, s.classes, s.side), s.classes);
    }
    const auto& c = cfg.dataset.cifar;
    std::vector<Sample> samples;
    for (const auto& f : c.train_files) {
        std::ifstream probe(f, std::ios::binary | std::ios::ate);
        if (!probe) throw FormatError("cifar10: cannot open '" + f + "'");
        const size_t available = static_cast<size_t>(probe.tellg()) / kCifarRecordBytes;
        probe.close();
        size_t want = available;
        if (c.train_count > 0) {
            const size_t remaining = c.train_count - samples.size();
            if (remaining == 0) break;
            want = std::min(available, remaining);
        }
        auto batch = load_cifar10_binary(f, want, c.classes);
        for (auto& s : batch) {
            s.id = static_cast<int>(samples.size());
            samples.push_back(std::move(s));
        }
    }
    if (c.train_count > 0 && samples.size() < c.train_count)
        throw ValidationError("cifar10: train files hold fewer records than train_count");
    return make_dataset(std::move(samples), c.classes);
}

Dataset load_test_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == DatasetSpec::Kind::synthetic) {
        const auto& s = cfg.dataset.synthetic;
        // A distinct stream from the training set.
        auto samples = synthetic_dataset(mix_seed(s.seed, 0x74657374ULL), s.n_test, s.classes,
                                         s.side);
        return make_dataset(std::move(samples), s.classes);
    }
    const auto& c = cfg.dataset.cifar;
    if (c.test_file.empty()) throw ConfigError("cifar dataset needs a test_file");
    std::ifstream probe(c.test_file, std::ios::binary | std::ios::ate);
    if (!probe) throw FormatError("cifar10: cannot open '" + c.test_file + "'");
    const size_t available = static_cast<size_t>(probe.tellg()) / kCifarRecordBytes;
    probe.close();
    const size_t want = c.test_count > 0 ? std::min(c.test_count, available) : available;
    return make_dataset(load_cifar10_binary(c.test_file, want, c.classes), c.classes);
}

Harness::Harness(ExperimentConfig cfg, std::optional<std::vector<ScoredSample>> precomputed_scores)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.dataset.kind == DatasetSpec::Kind::synthetic) {
        cfg_.model.input_height = cfg_.dataset.synthetic.side;
        cfg_.model.input_width = cfg_.dataset.synthetic.side;
        cfg_.model.num_classes = cfg_.dataset.synthetic.classes;
    } else {
        cfg_.model.input_height = kCifarSide;
        cfg_.model.input_width = kCifarSide;
        cfg_.model.num_classes = cfg_.dataset.cifar.classes;
    }
    fs::create_directories(cfg_.out_dir);

    train_ = load_train_dataset(cfg_);
    test_ = load_test_dataset(cfg_);
    prepare_labels();
    if (precomputed_scores) {
        if (precomputed_scores->size() != train_.size())
            throw ValidationError("harness: precomputed scores do not cover the training set");
        scored_ = std::move(*precomputed_scores);
        ranking_ = rank_by_quality(scored_);
        write_scores_csv(scored_, (fs::path(cfg_.out_dir) / "scores.csv").string());
    } else {
        prepare_ranking();
    }
}

void Harness::prepare_labels() {
    const bool need_noisy =
        std::find(cfg_.conditions.begin(), cfg_.conditions.end(), Condition::noisy_single) !=
        cfg_.conditions.end();
    const bool need_multi =
        std::find(cfg_.conditions.begin(), cfg_.conditions.end(), Condition::human_multi) !=
        cfg_.conditions.end();

    if (!cfg_.labels.noisy_file.empty()) {
        noisy_labels_ = load_label_file(cfg_.labels.noisy_file, train_.num_classes);
        noisy_prov_ = Provenance::human;
    } else if (need_noisy) {
        // Stand-in noise; tagged 'generated', never presented as human.
        noisy_labels_ = make_noisy_labels(train_, cfg_.labels.synth_noise_frac, cfg_.labels.seed);
        noisy_prov_ = Provenance::generated;
        save_label_file(*noisy_labels_, (fs::path(cfg_.out_dir) / "labels_noisy_synth.csv").string());
    }
    if (!cfg_.labels.multi_file.empty()) {
        multi_labels_ = load_label_file(cfg_.labels.multi_file, train_.num_classes);
        multi_prov_ = Provenance::human;
    } else if (need_multi) {
        multi_labels_ = make_multi_labels(train_, cfg_.labels.synth_annotators,
                                          cfg_.labels.synth_annotator_flip, cfg_.labels.seed);
        multi_prov_ = Provenance::generated;
        save_label_file(*multi_labels_, (fs::path(cfg_.out_dir) / "labels_multi_synth.csv").string());
    }
}

void Harness::prepare_ranking() {
    const ReferenceModel ref = fit_reference_from_dataset(train_, cfg_.quality_ridge, cfg_.threads);
    scored_ = score_dataset(train_, ref, cfg_.threads);
    ranking_ = rank_by_quality(scored_);
    write_scores_csv(scored_, (fs::path(cfg_.out_dir) / "scores.csv").string());
}

void Harness::ensure_labeler() {
    if (kmeans_) return;
    extractor_ = std::make_unique<FeatureExtractor>(
        FeatureExtractor::fit(train_, cfg_.feature_mode, cfg_.threads));
    train_features_ = extractor_->extract_all(train_, cfg_.threads);
    std::vector<int> clean(train_.size());
    for (size_t i = 0; i < train_.size(); ++i) {
        if (!train_.samples[i].clean_label)
            throw ValidationError("clustering needs clean labels on every training sample");
        clean[i] = *train_.samples[i].clean_label;
    }
    KMeansModel model = kmeans_fit(train_features_, train_.num_classes, cfg_.pool.seed);
    label_centroids(model, train_features_, clean, train_.num_classes);
    kmeans_ = std::move(model);
    write_kmeans_csv(*kmeans_, (fs::path(cfg_.out_dir) / "kmeans.csv").string());
}

Labeler Harness::labeler() {
    ensure_labeler();
    const FeatureExtractor* fe = extractor_.get();
    const KMeansModel* km = &*kmeans_;
    return [fe, km](const Sample& s, int m) { return generate_labels(fe->extract(s), *km, m); };
}

void Harness::write_condition_outputs(Condition c, const MultiLabelDataset& mld) {
    const std::string tag = to_string(c);
    write_pairs_csv(mld, (fs::path(cfg_.out_dir) / ("pairs_" + tag + ".csv")).string());
    write_pool_manifest(scored_, ranking_, mld,
                        (fs::path(cfg_.out_dir) / ("pool_manifest_" + tag + ".csv")).string());
}

const MultiLabelDataset& Harness::condition(Condition c) {
    const int key = static_cast<int>(c);
    auto it = conditions_.find(key);
    if (it != conditions_.end()) return it->second;
    auto err = condition_errors_.find(key);
    if (err != condition_errors_.end()) throw ConfigError(err->second);

    try {
        ConditionInputs inputs;
        if (noisy_labels_) inputs.noisy_labels = &*noisy_labels_;
        if (multi_labels_) inputs.multi_labels = &*multi_labels_;
        inputs.file_provenance = c == Condition::noisy_single ? noisy_prov_ : multi_prov_;

        PoolConfig pool_cfg = cfg_.pool;
        if (c == Condition::pq_multi) {
            inputs.ranking = &ranking_;
            inputs.labeler = labeler();
            if (cfg_.calibrate_target) {
                const auto cal = calibrate_pool_frac(train_, ranking_, pool_cfg, inputs.labeler,
                                                     *cfg_.calibrate_target);
                pool_cfg = cal.config;
            }
        }
        MultiLabelDataset mld = build_condition(c, train_, inputs, pool_cfg);
        write_condition_outputs(c, mld);
        auto [pos, inserted] = conditions_.emplace(key, std::move(mld));
        return pos->second;
    } catch (const std::exception& e) {
        condition_errors_[key] = std::string("condition ") + to_string(c) + ": " + e.what();
        throw ConfigError(condition_errors_[key]);
    }
}

double Harness::condition_disagreement(Condition c) { return disagreement_rate(condition(c)); }

const ConvNet& Harness::model_for(Condition c, TrainedKind kind, uint64_t seed) {
    const auto key = std::make_tuple(static_cast<int>(c), static_cast<int>(kind), seed);
    auto it = model_cache_.find(key);
    if (it != model_cache_.end()) return *it->second;

    const MultiLabelDataset& mld = condition(c);
    const auto pairs_full = replicate(mld);
    std::vector<TrainPairRef> pairs;
    pairs.reserve(pairs_full.size());
    for (const auto& p : pairs_full) pairs.push_back({p.sample_id, p.label});

    ClassifierConfig mc = cfg_.model;
    mc.seed = seed;
    TrainHyper hyper = cfg_.train;
    hyper.seed = seed;
    hyper.threads = cfg_.threads;
    const HeadKind head = kind == TrainedKind::softmax ? HeadKind::vanilla : HeadKind::duq;

    TrainResult tr = train_classifier(pairs, train_, mc, hyper, head, cfg_.duq);

    const std::string tag = std::string(to_string(c)) + "_" +
                            (kind == TrainedKind::softmax ? "softmax" : "duq") + "_" +
                            std::to_string(seed);
    {
        CsvWriter log((fs::path(cfg_.out_dir) / ("train_" + tag + ".csv")).string());
        log.comment("config=" + cfg_.digest() + " seeds=" + seed_list_string(cfg_.seeds));
        log.row({"epoch", "loss", "train_acc"});
        for (const auto& e : tr.log)
            log.row({std::to_string(e.epoch), format_double(e.loss), format_double(e.train_acc)});
    }
    save_checkpoint_file(tr.net, (fs::path(cfg_.out_dir) / ("ckpt_" + tag + ".bin")).string());

    auto [pos, inserted] =
        model_cache_.emplace(key, std::make_unique<ConvNet>(std::move(tr.net)));
    return *pos->second;
}

// Spec-major evaluation: each shifted test set is materialized once and
// fed to every (condition, head, seed) cell that needs it.
std::vector<ReportCell> Harness::evaluate_grid(const std::vector<Condition>& conditions,
                                               const std::vector<Head>& heads) {
    std::vector<ReportCell> cells;
    for (SuiteKind suite : cfg_.suites)
        for (Condition cond : conditions)
            for (Head head : heads) {
                ReportCell cell;
                cell.suite = suite;
                cell.condition = cond;
                cell.head = head;
                cell.ok = true;
                for (uint64_t seed : cfg_.seeds) {
                    SeedRun run;
                    run.seed = seed;
                    cell.runs.push_back(run);
                }
                cells.push_back(std::move(cell));
            }

    // Pre-train (or fail) every needed model so spec iteration stays cheap.
    for (auto& cell : cells) {
        if (!cell.ok) continue;
        const TrainedKind kind = cell.head == Head::duq ? TrainedKind::duq : TrainedKind::softmax;
        for (uint64_t seed : cfg_.seeds) {
            try {
                model_for(cell.condition, kind, seed);
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
                break;
            }
        }
    }

    for (SuiteKind suite : cfg_.suites) {
        for (const auto& spec : shift_specs(suite)) {
            const auto shifted = apply_shift(test_.samples, spec, cfg_.shift_seed);
            for (auto& cell : cells) {
                if (cell.suite != suite || !cell.ok) continue;
                const TrainedKind kind =
                    cell.head == Head::duq ? TrainedKind::duq : TrainedKind::softmax;
                try {
                    for (auto& run : cell.runs) {
                        const ConvNet& net = model_for(cell.condition, kind, run.seed);
                        const auto out = evaluate_model(net, cell.head, shifted, cfg_.mc_passes,
                                                        run.seed, cfg_.threads);
                        run.per_spec.push_back({spec.name(), out.entropy, out.accuracy});
                    }
                } catch (const std::exception& e) {
                    cell.ok = false;
                    cell.error = e.what();
                }
            }
        }
    }

    for (auto& cell : cells) {
        if (!cell.ok) continue;
        std::vector<double> ents, accs;
        for (auto& run : cell.runs) {
            double e = 0.0, a = 0.0;
            for (const auto& s : run.per_spec) {
                e += s.entropy;
                a += s.accuracy;
            }
            run.entropy = e / static_cast<double>(run.per_spec.size());
            run.accuracy = a / static_cast<double>(run.per_spec.size());
            ents.push_back(run.entropy);
            accs.push_back(run.accuracy);
        }
        cell.entropy_mean = mean_of(ents);
        cell.entropy_std = stdev_of(ents);
        cell.accuracy_mean = mean_of(accs);
        cell.accuracy_std = stdev_of(accs);
    }
    return cells;
}

std::vector<ReportCell> Harness::run_condition(Condition condition, Head head) {
    return evaluate_grid({condition}, {head});
}

EvalReport Harness::reproduce() {
    EvalReport report;
    report.digest = cfg_.digest();
    report.seeds = cfg_.seeds;
    report.cells = evaluate_grid(cfg_.conditions, cfg_.heads);

    for (Condition cond : cfg_.conditions) {
        try {
            report.disagreement.emplace_back(cond, condition_disagreement(cond));
        } catch (const std::exception&) {
            // Condition failed earlier; its cells already carry the error.
        }
    }

    // Directional checks stamped into the footer wherever the involved
    // cells completed.
    const auto& m = cfg_.margins;
    for (SuiteKind suite : cfg_.suites) {
        const std::string sn = to_string(suite);
        const ReportCell* clean = report.find(suite, Condition::clean, Head::vanilla);
        const ReportCell* noisy = report.find(suite, Condition::noisy_single, Head::vanilla);
        const ReportCell* pq = report.find(suite, Condition::pq_multi, Head::vanilla);
        char buf[160];
        if (clean && noisy && clean->ok && noisy->ok) {
            const double egap = noisy->entropy_mean - clean->entropy_mean;
            std::snprintf(buf, sizeof(buf), "entropy(noisy)-entropy(clean)=%.4f (need >= %.2f)",
                          egap, m.noise_entropy_gap);
            report.checks.push_back({"noise_effect_entropy_" + sn, egap >= m.noise_entropy_gap,
                                     buf});
            const double agap = clean->accuracy_mean - noisy->accuracy_mean;
            std::snprintf(buf, sizeof(buf), "accuracy(clean)-accuracy(noisy)=%.4f (need >= %.2f)",
                          agap, m.noise_accuracy_gap);
            report.checks.push_back({"noise_effect_accuracy_" + sn, agap >= m.noise_accuracy_gap,
                                     buf});
        }
        if (noisy && pq && noisy->ok && pq->ok) {
            const double egap = noisy->entropy_mean - pq->entropy_mean;
            std::snprintf(buf, sizeof(buf), "entropy(noisy)-entropy(pq)=%.4f (need >= %.2f)", egap,
                          m.pq_entropy_gap);
            report.checks.push_back({"pq_entropy_" + sn, egap >= m.pq_entropy_gap, buf});
            const double aslack = pq->accuracy_mean - (noisy->accuracy_mean - m.pq_accuracy_slack);
            std::snprintf(buf, sizeof(buf),
                          "accuracy(pq)=%.4f vs accuracy(noisy)-%.2f=%.4f", pq->accuracy_mean,
                          m.pq_accuracy_slack, noisy->accuracy_mean - m.pq_accuracy_slack);
            report.checks.push_back({"pq_accuracy_" + sn, aslack >= 0.0, buf});
        }
        if (suite == SuiteKind::rotation && clean && noisy && pq && clean->ok && noisy->ok &&
            pq->ok) {
            const bool ordered = clean->entropy_mean < pq->entropy_mean &&
                                 pq->entropy_mean < noisy->entropy_mean;
            std::snprintf(buf, sizeof(buf), "clean=%.4f < pq=%.4f < noisy=%.4f",
                          clean->entropy_mean, pq->entropy_mean, noisy->entropy_mean);
            report.checks.push_back({"entropy_ordering_rotation", ordered, buf});
        }
    }

    write_report_csv(report, (fs::path(cfg_.out_dir) / "report.csv").string());
    write_breakdown_csv(report, (fs::path(cfg_.out_dir) / "breakdown.csv").string());
    write_report_md(report, cfg_, (fs::path(cfg_.out_dir) / "report.md").string());
    return report;
}

EvalReport run_condition(Condition condition, Head head, const ExperimentConfig& cfg) {
    Harness h(cfg);
    EvalReport report;
    report.digest = cfg.digest();
    report.seeds = cfg.seeds;
    report.cells = h.run_condition(condition, head);
    try {
        report.disagreement.emplace_back(condition, h.condition_disagreement(condition));
    } catch (const std::exception&) {
    }
    return report;
}

EvalReport reproduce(const ExperimentConfig& cfg) {
    Harness h(cfg);
    return h.reproduce();
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    CsvWriter w(path);
    w.comment("config=" + report.digest + " seeds=" + seed_list_string(report.seeds));
    w.row({"suite", "condition", "head", "status", "entropy_mean", "entropy_std", "accuracy_mean",
           "accuracy_std", "disagreement_rate"});
    auto rate_of = [&](Condition c) -> std::string {
        for (const auto& [cond, rate] : report.disagreement)
            if (cond == c) return format_double(rate);
        return "";
    };
    for (const auto& cell : report.cells) {
        if (cell.ok) {
            w.row({to_string(cell.suite), to_string(cell.condition), to_string(cell.head), "ok",
                   format_double(cell.entropy_mean), format_double(cell.entropy_std),
                   format_double(cell.accuracy_mean), format_double(cell.accuracy_std),
                   rate_of(cell.condition)});
        } else {
            w.row({to_string(cell.suite), to_string(cell.condition), to_string(cell.head),
                   "failed", "", "", "", "", rate_of(cell.condition)});
        }
    }
}

void write_breakdown_csv(const EvalReport& report, const std::string& path) {
    CsvWriter w(path);
    w.comment("config=" + report.digest + " seeds=" + seed_list_string(report.seeds));
    w.row({"suite", "spec", "condition", "head", "seed", "entropy", "accuracy"});
    for (const auto& cell : report.cells) {
        if (!cell.ok) continue;
        for (const auto& run : cell.runs)
            for (const auto& spec : run.per_spec)
                w.row({to_string(cell.suite), spec.spec, to_string(cell.condition),
                       to_string(cell.head), std::to_string(run.seed),
                       format_double(spec.entropy), format_double(spec.accuracy)});
    }
}

void write_report_md(const EvalReport& report, const ExperimentConfig& cfg,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("report: cannot write '" + path + "'");
    char buf[64];
    out << "# Evaluation report\n\n";
    out << "Config digest: `" << report.digest << "`  \n";
    out << "Seeds: " << seed_list_string(report.seeds) << "\n";

    for (SuiteKind suite : cfg.suites) {
        out << "\n## Suite: " << to_string(suite) << "\n\n";
        out << "| Training labels |";
        for (Head h : cfg.heads)
            out << " " << to_string(h) << " entropy (bits) | " << to_string(h) << " accuracy |";
        out << "\n|---|";
        for (size_t i = 0; i < cfg.heads.size(); ++i) out << "---|---|";
        out << "\n";
        for (Condition cond : cfg.conditions) {
            out << "| " << to_string(cond) << " |";
            for (Head h : cfg.heads) {
                const ReportCell* cell = report.find(suite, cond, h);
                if (cell && cell->ok) {
                    std::snprintf(buf, sizeof(buf), " %.3f ± %.3f | %.3f ± %.3f |",
                                  cell->entropy_mean, cell->entropy_std, cell->accuracy_mean,
                                  cell->accuracy_std);
                    out << buf;
                } else if (cell) {
                    out << " FAILED | FAILED |";
                } else {
                    out << " - | - |";
                }
            }
            out << "\n";
        }
    }

    out << "\n## Label disagreement\n\n| condition | rate | delta vs noisy_single |\n|---|---|---|\n";
    double noisy_rate = 0.0;
    bool have_noisy = false;
    for (const auto& [cond, rate] : report.disagreement)
        if (cond == Condition::noisy_single) {
            noisy_rate = rate;
            have_noisy = true;
        }
    for (const auto& [cond, rate] : report.disagreement) {
        std::snprintf(buf, sizeof(buf), "| %s | %.4f |", to_string(cond), rate);
        out << buf;
        if (have_noisy) {
            std::snprintf(buf, sizeof(buf), " %+.4f |\n", rate - noisy_rate);
            out << buf;
        } else {
            out << " - |\n";
        }
    }

    if (!report.checks.empty()) {
        out << "\n## Directional checks\n\n";
        for (const auto& c : report.checks)
            out << "- [" << (c.pass ? "PASS" : "FAIL") << "] " << c.name << ": " << c.detail
                << "\n";
    }

    const bool failures =
        std::any_of(report.cells.begin(), report.cells.end(), [](const auto& c) { return !c.ok; });
    if (failures) {
        out << "\n## Failed cells\n\n";
        for (const auto& c : report.cells)
            if (!c.ok)
                out << "- " << to_string(c.suite) << "/" << to_string(c.condition) << "/"
                    << to_string(c.head) << ": " << c.error << "\n";
    }

    out << "\nNotes: entropy is Shannon entropy in bits of the predictive distribution. "
           "mc_dropout averages "
        << cfg.mc_passes
        << " stochastic passes. The duq head is a simplified kernel-distance classifier "
           "(per-class embeddings with centroid EMA; no gradient penalty).\n";
}

} // namespace pqt
