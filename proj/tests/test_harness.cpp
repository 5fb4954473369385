#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pqt/cli.hpp"
#include "pqt/csv.hpp"
#include "pqt/harness.hpp"

using namespace pqt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small but end-to-end-capable configuration.
ExperimentConfig mini_config(const std::string& out_dir) {
    TomlTable t;
    auto set_int = [&](const char* k, int64_t v) {
        TomlValue tv;
        tv.kind = TomlValue::Kind::integer;
        tv.i = v;
        t.set(k, tv);
    };
    auto set_str = [&](const char* k, const std::string& v) {
        TomlValue tv;
        tv.kind = TomlValue::Kind::string;
        tv.s = v;
        t.set(k, tv);
    };
    set_int("dataset.n_train", 150);
    set_int("dataset.n_test", 40);
    set_int("dataset.classes", 5);
    set_int("dataset.side", 24);
    set_int("model.conv1_channels", 4);
    set_int("model.conv2_channels", 8);
    set_int("model.dense_width", 16);
    set_int("duq.embed_dim", 8);
    set_int("train.epochs", 2);
    set_int("train.batch_size", 32);
    set_int("eval.mc_passes", 4);
    set_str("run.out_dir", out_dir);
    {
        TomlValue arr;
        arr.kind = TomlValue::Kind::array;
        TomlValue e;
        e.kind = TomlValue::Kind::string;
        e.s = "rotation";
        arr.arr.push_back(e);
        t.set("eval.suites", arr);
    }
    {
        TomlValue arr;
        arr.kind = TomlValue::Kind::array;
        TomlValue e;
        e.kind = TomlValue::Kind::integer;
        e.i = 3;
        arr.arr.push_back(e);
        t.set("run.seeds", arr);
    }
    return config_from_table(t);
}

} // namespace

TEST_CASE("synthetic noisy labels: exact flip count, determinism") {
    Dataset ds = make_dataset(synthetic_dataset(1, 200, 10, 8), 10);
    const auto lf = make_noisy_labels(ds, 0.4, 7);
    REQUIRE(lf.size() == 200);
    size_t flipped = 0;
    for (size_t i = 0; i < 200; ++i)
        if (lf.of(static_cast<int>(i))[0] != *ds.samples[i].clean_label) ++flipped;
    CHECK(flipped == 80);
    const auto lf2 = make_noisy_labels(ds, 0.4, 7);
    for (size_t i = 0; i < 200; ++i)
        CHECK(lf.of(static_cast<int>(i)) == lf2.of(static_cast<int>(i)));
}

TEST_CASE("synthetic multi labels: list length and flip statistics") {
    Dataset ds = make_dataset(synthetic_dataset(2, 400, 10, 8), 10);
    const auto lf = make_multi_labels(ds, 3, 0.2, 9);
    size_t total = 0, wrong = 0;
    for (size_t i = 0; i < 400; ++i) {
        const auto& list = lf.of(static_cast<int>(i));
        REQUIRE(list.size() == 3);
        for (int v : list) {
            ++total;
            if (v != *ds.samples[i].clean_label) ++wrong;
        }
    }
    const double rate = static_cast<double>(wrong) / total;
    CHECK(rate > 0.14);
    CHECK(rate < 0.26);
}

TEST_CASE("mini reproduce: report files, layout, aggregation, determinism") {
    const auto dir = fs::temp_directory_path() / "pqt_mini_repro";
    fs::remove_all(dir);
    auto cfg = mini_config(dir.string());
    cfg.conditions = {Condition::clean, Condition::pq_multi};
    cfg.heads = {Head::vanilla, Head::duq};

    Harness h(cfg);
    const auto report = h.reproduce();

    // 1 suite x 2 conditions x 2 heads
    REQUIRE(report.cells.size() == 4);
    for (const auto& cell : report.cells) {
        CHECK(cell.ok);
        REQUIRE(cell.runs.size() == 1);
        CHECK(cell.runs[0].per_spec.size() == 12);
        CHECK(cell.entropy_mean >= 0.0);
        CHECK(cell.accuracy_mean >= 0.0);
        CHECK(cell.accuracy_mean <= 1.0);
        CHECK(cell.entropy_mean <= std::log2(5.0) + 1e-9);

        // aggregation linearity: suite mean == mean of per-spec values
        double acc = 0.0;
        for (const auto& s : cell.runs[0].per_spec) acc += s.entropy;
        CHECK(cell.runs[0].entropy == doctest::Approx(acc / 12.0).epsilon(1e-12));
    }

    for (const char* name :
         {"report.csv", "breakdown.csv", "report.md", "scores.csv", "kmeans.csv",
          "pairs_clean.csv", "pairs_pq_multi.csv", "pool_manifest_pq_multi.csv"})
        CHECK(fs::exists(dir / name));

    // CSV re-parse equals the in-memory report exactly
    const auto table = read_csv((dir / "report.csv").string());
    REQUIRE(table.rows.size() == 4);
    for (const auto& row : table.rows) {
        const auto* cell = report.find(
            row[table.column("suite")] == "rotation" ? SuiteKind::rotation : SuiteKind::corruption,
            condition_from_string(row[table.column("condition")]),
            head_from_string(row[table.column("head")]));
        REQUIRE(cell != nullptr);
        CHECK(parse_double(row[table.column("entropy_mean")]) == cell->entropy_mean);
        CHECK(parse_double(row[table.column("accuracy_mean")]) == cell->accuracy_mean);
    }

    // determinism: a second run reproduces every artifact byte for byte
    const std::string report_csv = slurp(dir / "report.csv");
    const std::string breakdown_csv = slurp(dir / "breakdown.csv");
    const std::string report_md = slurp(dir / "report.md");
    Harness h2(cfg);
    h2.reproduce();
    CHECK(slurp(dir / "report.csv") == report_csv);
    CHECK(slurp(dir / "breakdown.csv") == breakdown_csv);
    CHECK(slurp(dir / "report.md") == report_md);
}

TEST_CASE("pq_multi pool arithmetic inside the harness") {
    const auto dir = fs::temp_directory_path() / "pqt_pool_arith";
    fs::remove_all(dir);
    auto cfg = mini_config(dir.string());
    cfg.conditions = {Condition::pq_multi};
    Harness h(cfg);
    const auto& mld = h.condition(Condition::pq_multi);

    size_t generated = 0;
    for (auto p : mld.provenance)
        if (p == Provenance::generated) ++generated;
    CHECK(generated == 60); // round(0.4 * 150)

    const auto rate = h.condition_disagreement(Condition::pq_multi);
    CHECK(rate >= 0.0);
    CHECK(rate <= 1.0);

    // manifest slice equals the generated set
    const auto manifest = read_csv((dir / "pool_manifest_pq_multi.csv").string());
    size_t multi_labeled = 0;
    for (const auto& row : manifest.rows)
        if (parse_long(row[manifest.column("num_labels")]) > 1) ++multi_labeled;
    CHECK(multi_labeled == 15); // round(0.10 * 150)
}

TEST_CASE("run_condition fragment carries disagreement and cells") {
    const auto dir = fs::temp_directory_path() / "pqt_fragment";
    fs::remove_all(dir);
    auto cfg = mini_config(dir.string());
    const auto frag = run_condition(Condition::noisy_single, Head::vanilla, cfg);
    REQUIRE(frag.cells.size() == 1);
    CHECK(frag.cells[0].ok);
    REQUIRE(frag.disagreement.size() == 1);
    CHECK(frag.disagreement[0].second == doctest::Approx(0.4));
}

TEST_CASE("missing label file is a named configuration error") {
    const auto dir = fs::temp_directory_path() / "pqt_missing_labels";
    fs::remove_all(dir);
    auto cfg = mini_config(dir.string());
    cfg.labels.noisy_file = "/nonexistent/labels.csv";
    CHECK_THROWS_AS(Harness{cfg}, FormatError);
}

TEST_CASE("failed cells render without aborting the table") {
    const auto dir = fs::temp_directory_path() / "pqt_failed_cells";
    fs::remove_all(dir);
    auto cfg = mini_config(dir.string());
    cfg.conditions = {Condition::clean, Condition::human_multi};
    // force human_multi to fail: file with too many labels per row
    const auto bad = dir / "bad_multi.csv";
    fs::create_directories(dir);
    {
        std::ofstream out(bad);
        out << "id,label1,label2,label3,label4\n";
        for (int i = 0; i < 150; ++i) out << i << ",0,1,2,3\n";
    }
    cfg.labels.multi_file = bad.string();
    Harness h(cfg);
    const auto report = h.reproduce();
    REQUIRE(report.cells.size() == 6);
    size_t ok = 0, failed = 0;
    for (const auto& c : report.cells) {
        if (c.ok)
            ++ok;
        else {
            ++failed;
            CHECK(c.condition == Condition::human_multi);
            CHECK(!c.error.empty());
        }
    }
    CHECK(ok == 3);
    CHECK(failed == 3);
    const std::string md = slurp(dir / "report.md");
    CHECK(md.find("FAILED") != std::string::npos);
}

TEST_CASE("cli: score then pool equals the fused pool path") {
    const auto dir_a = fs::temp_directory_path() / "pqt_cli_a";
    const auto dir_b = fs::temp_directory_path() / "pqt_cli_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    std::vector<std::string> common{
        "--dataset.n_train", "120",  "--dataset.n_test", "30", "--dataset.classes", "5",
        "--dataset.side",    "24",   "--train.epochs",   "1",  "--run.seeds",       "1",
    };

    auto args_a = common;
    args_a.insert(args_a.begin(), "score");
    args_a.push_back("--run.out_dir");
    args_a.push_back(dir_a.string());
    REQUIRE(run_cli(args_a) == 0);

    auto args_a2 = common;
    args_a2.insert(args_a2.begin(), "pool");
    args_a2.push_back("--run.out_dir");
    args_a2.push_back(dir_a.string());
    args_a2.push_back("--scores");
    args_a2.push_back((dir_a / "scores.csv").string());
    REQUIRE(run_cli(args_a2) == 0);

    auto args_b = common;
    args_b.insert(args_b.begin(), "pool");
    args_b.push_back("--run.out_dir");
    args_b.push_back(dir_b.string());
    REQUIRE(run_cli(args_b) == 0);

    CHECK(slurp(dir_a / "pairs_pq_multi.csv") == slurp(dir_b / "pairs_pq_multi.csv"));
    CHECK(slurp(dir_a / "pool_manifest_pq_multi.csv") ==
          slurp(dir_b / "pool_manifest_pq_multi.csv"));
}

TEST_CASE("cli: exit codes") {
    CHECK(run_cli({"--definitely-not-a-flag"}) == 1);
    CHECK(run_cli({"score", "--no-such-option"}) == 1);
    // missing label file for noisy_single -> validation error -> 1
    const auto dir = fs::temp_directory_path() / "pqt_cli_exit";
    fs::remove_all(dir);
    const int rc = run_cli({"reproduce", "--dataset.n_train", "60", "--dataset.n_test", "10",
                            "--dataset.classes", "5", "--dataset.side", "24", "--train.epochs",
                            "1", "--run.seeds", "1", "--run.conditions", "noisy_single",
                            "--run.heads", "vanilla", "--labels.noisy_file",
                            "/nonexistent/nofile.csv", "--run.out_dir", dir.string()});
    CHECK(rc == 1);
}

TEST_CASE("cli: train then eval consume a checkpoint") {
    const auto dir = fs::temp_directory_path() / "pqt_cli_train";
    fs::remove_all(dir);
    std::vector<std::string> train_args{
        "train",
        "--dataset.n_train", "100", "--dataset.n_test", "20", "--dataset.classes", "4",
        "--dataset.side", "24", "--train.epochs", "1", "--run.seeds", "2",
        "--model.conv1_channels", "4", "--model.conv2_channels", "6",
        "--model.dense_width", "12", "--condition", "clean",
        "--run.out_dir", dir.string()};
    REQUIRE(run_cli(train_args) == 0);
    const auto ckpt = dir / "ckpt_clean_softmax_2.bin";
    REQUIRE(fs::exists(ckpt));

    const int rc = run_cli({"eval", "--dataset.n_train", "100", "--dataset.n_test", "20",
                            "--dataset.classes", "4", "--dataset.side", "24", "--eval.suites",
                            "rotation", "--run.seeds", "2", "--checkpoint", ckpt.string(),
                            "--run.out_dir", dir.string()});
    CHECK(rc == 0);
    const auto table = read_csv((dir / "eval.csv").string());
    CHECK(table.rows.size() == 12);
}
