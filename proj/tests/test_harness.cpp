#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "incap/harness.hpp"

using namespace incap;
namespace fs = std::filesystem;
using strategies::Variant;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "incap_harness_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

harness::ScenarioPlan tiny_plan(harness::Mode mode, std::vector<Variant> strategies,
                                std::vector<uint64_t> seeds, const std::string& out_dir) {
    harness::ScenarioPlan p;
    p.base_classes = {"square", "circle"};
    p.addition_classes = {"triangle"};
    if (mode != harness::Mode::AddOne) p.addition_classes = {"triangle", "cross"};
    p.mode = mode;
    p.strategy_list = std::move(strategies);
    p.epochs = 2;
    p.batch_size = 4;
    p.early_stop_patience = 0;
    p.seeds = std::move(seeds);
    p.output_dir = out_dir;
    p.n_per_class = 6;
    p.data_seed = 19;
    p.canvas = 12;
    p.max_len = 12;
    p.model_cfg.conv1_channels = 3;
    p.model_cfg.conv2_channels = 4;
    p.model_cfg.feature_dim = 8;
    p.model_cfg.embed_dim = 8;
    p.model_cfg.hidden_dim = 10;
    return p;
}

metrics::MetricReport flat_report(double v) { return {v, v, v, v, v}; }

} // namespace

TEST_CASE("plan files parse") {
    auto dir = fresh_dir("plan");
    std::string path = (dir / "plan.json").string();
    std::ofstream os(path);
    os << R"({
      "base_classes": ["square", "circle"],
      "addition_classes": ["triangle"],
      "mode": "add_one",
      "strategies": ["F", "P"],
      "beta": 0.5,
      "epochs": 7,
      "seeds": [4, 5],
      "output_dir": "/tmp/x",
      "data": {"n_per_class": 9, "seed": 3, "canvas": 16},
      "model": {"hidden_dim": 32}
    })";
    os.close();
    auto p = harness::load_plan(path);
    CHECK(p.mode == harness::Mode::AddOne);
    CHECK(p.strategy_list == std::vector<Variant>{Variant::F, Variant::P});
    CHECK(p.beta == 0.5);
    CHECK(p.epochs == 7);
    CHECK(p.seeds == std::vector<uint64_t>{4, 5});
    CHECK(p.n_per_class == 9);
    CHECK(p.canvas == 16);
    CHECK(p.model_cfg.hidden_dim == 32);
    CHECK_THROWS_AS(harness::mode_from_name("bogus"), ConfigError);
}

TEST_CASE("forgetting_delta is a per-metric signed difference") {
    auto zero = harness::forgetting_delta(flat_report(10), flat_report(10));
    CHECK(zero.cider == doctest::Approx(0.0));
    metrics::MetricReport before = flat_report(0);
    before.cider = 47.3;
    metrics::MetricReport after = flat_report(0);
    after.cider = 9.4;
    CHECK(harness::forgetting_delta(before, after).cider == doctest::Approx(-37.9));
}

TEST_CASE("add_one run produces one record with both reports") {
    auto dir = fresh_dir("addone");
    auto plan = tiny_plan(harness::Mode::AddOne, {Variant::F}, {1}, dir.string());
    auto records = harness::run_scenario(plan);
    REQUIRE(records.size() == 1);
    const auto& r = records[0];
    CHECK(r.ok());
    CHECK(r.strategy == "F");
    CHECK(r.checkpoints.size() == 2);  // base + one stage
    CHECK(r.old_data_violations == 0);
    // two evaluation reports, both populated by a real pass
    CHECK(r.old_report.bleu1 >= 0.0);
    CHECK(r.new_report.bleu1 >= 0.0);
    CHECK(fs::exists(dir / "F" / "seed_1" / "record.json"));
    CHECK(fs::exists(dir / "table.tsv"));

    // delta recomputes byte-identically from the stored record
    auto loaded = harness::load_record((dir / "F" / "seed_1" / "record.json").string());
    auto recomputed = harness::forgetting_delta(loaded.base_old_report, loaded.old_report);
    CHECK(recomputed == loaded.delta_old);
}

TEST_CASE("sequential runs persist one checkpoint per stage") {
    auto dir = fresh_dir("seq");
    auto plan = tiny_plan(harness::Mode::AddSequential, {Variant::F}, {2}, dir.string());
    plan.base_classes = {"square"};
    plan.addition_classes = {"circle", "triangle", "cross", "ring", "diamond"};
    auto records = harness::run_scenario(plan);
    REQUIRE(records.size() == 1);
    CHECK(records[0].ok());
    CHECK(records[0].checkpoints.size() == 6);  // base + 5 stages
    for (const auto& c : records[0].checkpoints) CHECK(fs::exists(c));
    CHECK(records[0].vocabs.size() == 6);
    CHECK(records[0].per_class_new.size() == 5);
}

TEST_CASE("resuming from a stage checkpoint reproduces the uninterrupted metrics") {
    auto dir_a = fresh_dir("resume_a");
    auto dir_b = fresh_dir("resume_b");
    auto plan_a = tiny_plan(harness::Mode::AddSequential, {Variant::F}, {3}, dir_a.string());
    auto records_a = harness::run_scenario(plan_a);
    REQUIRE(records_a.size() == 1);
    REQUIRE(records_a[0].ok());

    // simulate a run killed after stage 1: only base + stage_1 survive
    fs::create_directories(dir_b / "F" / "seed_3");
    fs::copy(dir_a / "base", dir_b / "base", fs::copy_options::recursive);
    fs::copy_file(dir_a / "F" / "seed_3" / "stage_1.ckpt", dir_b / "F" / "seed_3" / "stage_1.ckpt");

    auto plan_b = tiny_plan(harness::Mode::AddSequential, {Variant::F}, {3}, dir_b.string());
    auto records_b = harness::run_scenario(plan_b);
    REQUIRE(records_b.size() == 1);
    REQUIRE(records_b[0].ok());
    CHECK(records_a[0].old_report == records_b[0].old_report);
    CHECK(records_a[0].new_report == records_b[0].new_report);
    CHECK(records_a[0].per_class_new == records_b[0].per_class_new);
}

TEST_CASE("vocabulary grows by one version per stage and matches across modes") {
    auto dir_once = fresh_dir("once");
    auto dir_seq = fresh_dir("seq2");
    auto plan_once =
        tiny_plan(harness::Mode::AddMultiOnce, {Variant::F}, {4}, dir_once.string());
    auto plan_seq =
        tiny_plan(harness::Mode::AddSequential, {Variant::F}, {4}, dir_seq.string());
    auto rec_once = harness::run_scenario(plan_once);
    auto rec_seq = harness::run_scenario(plan_seq);
    REQUIRE(rec_once[0].ok());
    REQUIRE(rec_seq[0].ok());

    CHECK(rec_once[0].vocabs.size() == 2);  // base + single merged stage
    CHECK(rec_seq[0].vocabs.size() == 3);   // base + two stages

    auto v_once = vocab::Vocabulary::load(rec_once[0].vocabs.back());
    auto v_seq = vocab::Vocabulary::load(rec_seq[0].vocabs.back());
    std::set<std::string> s_once(v_once.tokens().begin(), v_once.tokens().end());
    std::set<std::string> s_seq(v_seq.tokens().begin(), v_seq.tokens().end());
    CHECK(s_once == s_seq);  // same final token set, possibly different order

    // versions increase by one per stage
    int version = 0;
    for (const auto& path : rec_seq[0].vocabs) {
        auto v = vocab::Vocabulary::load(path);
        CHECK(v.version() == ++version);
    }
}

TEST_CASE("tables average seeds and regenerate byte-identically") {
    harness::RunRecord r1, r2;
    r1.strategy = r2.strategy = "F";
    r1.seed = 1;
    r2.seed = 2;
    r1.old_report = flat_report(10.0);
    r2.old_report = flat_report(20.0);
    r1.new_report = flat_report(30.0);
    r2.new_report = flat_report(50.0);

    auto t = harness::render_table({r1, r2});
    std::istringstream lines(t.tsv);
    std::string header, row;
    std::getline(lines, header);
    std::getline(lines, row);
    CHECK(row == "F\t15.0\t15.0\t15.0\t15.0\t15.0\t40.0\t40.0\t40.0\t40.0\t40.0");

    SUBCASE("one record gives one row of ten cells") {
        auto t1 = harness::render_table({r1});
        std::istringstream ls(t1.tsv);
        std::string h, data;
        std::getline(ls, h);
        std::getline(ls, data);
        int tabs = static_cast<int>(std::count(data.begin(), data.end(), '\t'));
        CHECK(tabs == 10);  // strategy + 10 numeric cells
    }

    SUBCASE("strategy rows follow the canonical order") {
        harness::RunRecord fd = r1, p = r1, ef = r1;
        fd.strategy = "FD";
        p.strategy = "P";
        ef.strategy = "E_F";
        auto tbl = harness::render_table({fd, p, r1, ef});
        auto f_pos = tbl.tsv.find("\nF\t");
        auto ef_pos = tbl.tsv.find("\nE_F\t");
        auto p_pos = tbl.tsv.find("\nP\t");
        auto fd_pos = tbl.tsv.find("\nFD\t");
        CHECK(f_pos < ef_pos);
        CHECK(ef_pos < p_pos);
        CHECK(p_pos < fd_pos);
    }

    SUBCASE("emit_table writes identical bytes on regeneration") {
        auto dir = fresh_dir("table");
        harness::emit_table({r1, r2}, dir.string());
        auto tsv1 = file_bytes((dir / "table.tsv").string());
        auto txt1 = file_bytes((dir / "table.txt").string());
        harness::emit_table({r1, r2}, dir.string());
        CHECK(file_bytes((dir / "table.tsv").string()) == tsv1);
        CHECK(file_bytes((dir / "table.txt").string()) == txt1);
    }
}

TEST_CASE("INCAP_SEED overrides the plan seed list") {
    auto dir = fresh_dir("envseed");
    auto plan = tiny_plan(harness::Mode::AddOne, {Variant::F}, {1, 2, 3}, dir.string());
    setenv("INCAP_SEED", "9", 1);
    auto records = harness::run_scenario(plan);
    unsetenv("INCAP_SEED");
    REQUIRE(records.size() == 1);
    CHECK(records[0].seed == 9);
}

TEST_CASE("scenario plans validate class sets") {
    auto dir = fresh_dir("badplan");
    auto plan = tiny_plan(harness::Mode::AddOne, {Variant::F}, {1}, dir.string());
    plan.addition_classes = {"square"};  // overlaps the base
    CHECK_THROWS_AS(harness::run_scenario(plan), ConfigError);
    plan.addition_classes = {"nonexistent"};
    CHECK_THROWS_AS(harness::run_scenario(plan), ConfigError);
}
