#include "pqt/cli.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "pqt/checkpoint.hpp"
#include "pqt/config.hpp"
#include "pqt/csv.hpp"
#include "pqt/harness.hpp"

namespace pqt {

namespace {

namespace fs = std::filesystem;

enum class KeyType { str, integer, real, str_array, int_array };

struct KeyInfo {
    const char* key;
    KeyType type;
};

// Every config key is mirrored as a CLI flag of the same (dotted) name.
const KeyInfo kConfigKeys[] = {
    {"dataset.kind", KeyType::str},
    {"dataset.n_train", KeyType::integer},
    {"dataset.n_test", KeyType::integer},
    {"dataset.classes", KeyType::integer},
    {"dataset.side", KeyType::integer},
    {"dataset.seed", KeyType::integer},
    {"dataset.train_files", KeyType::str_array},
    {"dataset.test_file", KeyType::str},
    {"dataset.train_count", KeyType::integer},
    {"dataset.test_count", KeyType::integer},
    {"labels.noisy_file", KeyType::str},
    {"labels.multi_file", KeyType::str},
    {"labels.synth_noise_frac", KeyType::real},
    {"labels.synth_annotators", KeyType::integer},
    {"labels.synth_annotator_flip", KeyType::real},
    {"labels.seed", KeyType::integer},
    {"pool.pool_frac", KeyType::real},
    {"pool.multi_frac", KeyType::real},
    {"pool.triple_frac", KeyType::real},
    {"pool.k_max", KeyType::integer},
    {"pool.seed", KeyType::integer},
    {"pool.feature_mode", KeyType::str},
    {"pool.calibrate_target", KeyType::real},
    {"quality.ridge", KeyType::real},
    {"model.conv1_channels", KeyType::integer},
    {"model.conv2_channels", KeyType::integer},
    {"model.dense_width", KeyType::integer},
    {"model.dropout_p", KeyType::real},
    {"duq.embed_dim", KeyType::integer},
    {"duq.sigma", KeyType::real},
    {"duq.momentum", KeyType::real},
    {"train.epochs", KeyType::integer},
    {"train.batch_size", KeyType::integer},
    {"train.learning_rate", KeyType::real},
    {"train.momentum", KeyType::real},
    {"train.weight_decay", KeyType::real},
    {"eval.suites", KeyType::str_array},
    {"eval.mc_passes", KeyType::integer},
    {"eval.shift_seed", KeyType::integer},
    {"run.conditions", KeyType::str_array},
    {"run.heads", KeyType::str_array},
    {"run.seeds", KeyType::int_array},
    {"run.out_dir", KeyType::str},
    {"run.threads", KeyType::integer},
    {"margins.noise_entropy_gap", KeyType::real},
    {"margins.noise_accuracy_gap", KeyType::real},
    {"margins.pq_entropy_gap", KeyType::real},
    {"margins.pq_accuracy_slack", KeyType::real},
};

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

TomlValue value_from_flag(const KeyInfo& info, const std::string& raw) {
    TomlValue v;
    switch (info.type) {
        case KeyType::str:
            v.kind = TomlValue::Kind::string;
            v.s = raw;
            break;
        case KeyType::integer:
            v.kind = TomlValue::Kind::integer;
            v.i = std::stoll(raw);
            break;
        case KeyType::real:
            v.kind = TomlValue::Kind::real;
            v.d = std::stod(raw);
            break;
        case KeyType::str_array: {
            v.kind = TomlValue::Kind::array;
            for (const auto& item : split_commas(raw)) {
                TomlValue e;
                e.kind = TomlValue::Kind::string;
                e.s = item;
                v.arr.push_back(std::move(e));
            }
            break;
        }
        case KeyType::int_array: {
            v.kind = TomlValue::Kind::array;
            for (const auto& item : split_commas(raw)) {
                TomlValue e;
                e.kind = TomlValue::Kind::integer;
                e.i = std::stoll(item);
                v.arr.push_back(std::move(e));
            }
            break;
        }
    }
    return v;
}

struct CommonOpts {
    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::optional<int64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "TOML config file");
    cmd->add_option("--seed", opts.seed, "run with this single seed (overrides run.seeds)");
    for (const auto& info : kConfigKeys) {
        const std::string name = std::string("--") + info.key;
        cmd->add_option_function<std::string>(
            name, [&opts, key = std::string(info.key)](const std::string& val) {
                opts.overrides[key] = val;
            },
            "override config key " + std::string(info.key));
    }
}

ExperimentConfig make_config(const CommonOpts& opts) {
    TomlTable table;
    if (!opts.config_path.empty()) table = TomlTable::parse_file(opts.config_path);
    for (const auto& [key, raw] : opts.overrides) {
        for (const auto& info : kConfigKeys) {
            if (key == info.key) {
                try {
                    table.set(key, value_from_flag(info, raw));
                } catch (const ConfigError&) {
                    throw;
                } catch (const std::exception&) {
                    throw ConfigError("flag --" + key + ": cannot parse value '" + raw + "'");
                }
                break;
            }
        }
    }
    if (opts.seed) {
        TomlValue v;
        v.kind = TomlValue::Kind::array;
        TomlValue e;
        e.kind = TomlValue::Kind::integer;
        e.i = *opts.seed;
        v.arr.push_back(e);
        table.set("run.seeds", v);
    }
    return config_from_table(table);
}

int cmd_score(const CommonOpts& opts, const std::string& out) {
    ExperimentConfig cfg = make_config(opts);
    cfg.conditions = {Condition::clean}; // scoring needs no label files
    Harness h(cfg);
    if (!out.empty()) write_scores_csv(h.scored(), out);
    std::cout << "wrote "
              << (out.empty() ? (fs::path(cfg.out_dir) / "scores.csv").string() : out) << "\n";
    return 0;
}

int cmd_cluster(const CommonOpts& opts, const std::string& out) {
    ExperimentConfig cfg = make_config(opts);
    cfg.conditions = {Condition::pq_multi};
    Harness h(cfg);
    // Building the condition fits and exports the k-means model.
    h.condition(Condition::pq_multi);
    const std::string src = (fs::path(cfg.out_dir) / "kmeans.csv").string();
    if (!out.empty() && out != src) fs::copy_file(src, out, fs::copy_options::overwrite_existing);
    std::cout << "wrote " << (out.empty() ? src : out) << "\n";
    return 0;
}

int cmd_pool(const CommonOpts& opts, const std::string& scores_csv) {
    ExperimentConfig cfg = make_config(opts);
    cfg.conditions = {Condition::pq_multi};
    std::optional<std::vector<ScoredSample>> pre;
    if (!scores_csv.empty()) pre = read_scores_csv(scores_csv);
    Harness h(cfg, std::move(pre));
    h.condition(Condition::pq_multi);
    const double rate = h.condition_disagreement(Condition::pq_multi);
    std::cout << "pool built: disagreement_rate=" << format_double(rate) << "\n"
              << "wrote " << (fs::path(cfg.out_dir) / "pairs_pq_multi.csv").string() << "\n"
              << "wrote " << (fs::path(cfg.out_dir) / "pool_manifest_pq_multi.csv").string()
              << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& condition, const std::string& trained,
              const std::string& out) {
    ExperimentConfig cfg = make_config(opts);
    const Condition cond = condition_from_string(condition);
    cfg.conditions = {cond};
    Harness h(cfg);
    const auto kind =
        trained == "duq" ? Harness::TrainedKind::duq : Harness::TrainedKind::softmax;
    if (trained != "duq" && trained != "softmax")
        throw ConfigError("train: --trained-head must be 'softmax' or 'duq'");
    const uint64_t seed = cfg.seeds.front();
    const ConvNet& net = h.model_for(cond, kind, seed);
    if (!out.empty()) save_checkpoint_file(net, out);
    const std::string tag =
        std::string(to_string(cond)) + "_" + trained + "_" + std::to_string(seed);
    std::cout << "trained " << tag << "; checkpoint at "
              << (out.empty() ? (fs::path(cfg.out_dir) / ("ckpt_" + tag + ".bin")).string() : out)
              << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, const std::string& head_name,
             const std::string& out) {
    ExperimentConfig cfg = make_config(opts);
    const Head head = head_from_string(head_name);
    const ConvNet net = load_checkpoint_file(checkpoint);
    if (head == Head::duq && net.head() != HeadKind::duq)
        throw ConfigError("eval: duq head needs a duq checkpoint");
    if (head != Head::duq && net.head() != HeadKind::vanilla)
        throw ConfigError("eval: vanilla/mc_dropout heads need a softmax checkpoint");

    const Dataset test = load_test_dataset(cfg);
    fs::create_directories(cfg.out_dir);
    const std::string path = out.empty() ? (fs::path(cfg.out_dir) / "eval.csv").string() : out;
    CsvWriter w(path);
    w.comment("config=" + cfg.digest() + " checkpoint=" + checkpoint);
    w.row({"suite", "spec", "entropy", "accuracy"});
    const uint64_t seed = cfg.seeds.front();
    for (SuiteKind suite : cfg.suites) {
        for (const auto& spec : shift_specs(suite)) {
            const auto shifted = apply_shift(test.samples, spec, cfg.shift_seed);
            const auto r = evaluate_model(net, head, shifted, cfg.mc_passes, seed, cfg.threads);
            w.row({to_string(suite), spec.name(), format_double(r.entropy),
                   format_double(r.accuracy)});
        }
    }
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_reproduce(const CommonOpts& opts) {
    ExperimentConfig cfg = make_config(opts);
    const EvalReport report = reproduce(cfg);
    size_t failed = 0;
    for (const auto& c : report.cells)
        if (!c.ok) ++failed;
    std::cout << "report written to " << cfg.out_dir << " (" << report.cells.size() << " cells, "
              << failed << " failed)\n";
    for (const auto& c : report.checks)
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"perceptual-quality multi-label training toolkit"};
    app.require_subcommand(1);

    CommonOpts score_opts, cluster_opts, pool_opts, train_opts, eval_opts, repro_opts;
    std::string score_out, cluster_out, pool_scores, train_condition = "clean";
    std::string train_head = "softmax", train_out, eval_ckpt, eval_head = "vanilla", eval_out;

    auto* score = app.add_subcommand("score", "score training images and emit the quality CSV");
    add_common(score, score_opts);
    score->add_option("--out", score_out, "scores CSV path");

    auto* cluster = app.add_subcommand("cluster", "fit the k-means labeler and export it");
    add_common(cluster, cluster_opts);
    cluster->add_option("--out", cluster_out, "k-means CSV path");

    auto* pool = app.add_subcommand("pool", "build the uncertain pool and emit pairs + manifest");
    add_common(pool, pool_opts);
    pool->add_option("--scores", pool_scores, "reuse a scores CSV instead of rescoring");

    auto* train = app.add_subcommand("train", "train one classifier for a label condition");
    add_common(train, train_opts);
    train->add_option("--condition", train_condition,
                      "clean|noisy_single|human_multi|pq_multi");
    train->add_option("--trained-head", train_head, "softmax|duq");
    train->add_option("--out", train_out, "checkpoint output path");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over the shift suites");
    add_common(eval, eval_opts);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--head", eval_head, "vanilla|mc_dropout|duq");
    eval->add_option("--out", eval_out, "eval CSV path");

    auto* repro = app.add_subcommand("reproduce", "run all conditions/heads and render the table");
    add_common(repro, repro_opts);

    std::vector<const char*> argv;
    argv.push_back("pqt");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (score->parsed()) return cmd_score(score_opts, score_out);
        if (cluster->parsed()) return cmd_cluster(cluster_opts, cluster_out);
        if (pool->parsed()) return cmd_pool(pool_opts, pool_scores);
        if (train->parsed()) return cmd_train(train_opts, train_condition, train_head, train_out);
        if (eval->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_head, eval_out);
        if (repro->parsed()) return cmd_reproduce(repro_opts);
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

} // namespace pqt
