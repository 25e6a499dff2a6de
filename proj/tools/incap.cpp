// Command-line front end: dataset splitting, synthetic data generation,
// caption scoring, scenario runs and report regeneration.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "incap/dataio.hpp"
#include "incap/harness.hpp"
#include "incap/metrics.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace incap;

namespace {

int cmd_split(const std::vector<std::string>& annotations,
              const std::vector<std::string>& val_annotations, const std::string& classes_csv,
              const std::string& out_dir, int resize_to) {
    dataio::AnnotationSet ann;
    bool first = true;
    for (const auto& path : annotations) {
        auto a = dataio::load_annotations(path, "train");
        ann = first ? a : dataio::merge_annotations(ann, a);
        first = false;
    }
    for (const auto& path : val_annotations) {
        auto a = dataio::load_annotations(path, "val");
        ann = first ? a : dataio::merge_annotations(ann, a);
        first = false;
    }
    if (first) {
        std::cerr << "split: no annotation files given\n";
        return 2;
    }

    std::vector<int> ordering;
    std::stringstream ss(classes_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        int id = ann.category_id_by_name(item);
        if (id < 0) {
            try {
                id = std::stoi(item);
            } catch (const std::exception&) {
                std::cerr << "split: unknown class '" << item << "'\n";
                return 2;
            }
        }
        ordering.push_back(id);
    }

    auto clear = dataio::filter_clear_images(ann, ann.class_universe());
    auto split = dataio::build_split(clear, ordering, resize_to);
    fs::create_directories(out_dir);
    size_t total_train = 0, total_val = 0, total_test = 0;
    for (const auto& task : split.tasks) {
        dataio::save_manifest(task,
                              (fs::path(out_dir) / ("task_" + std::to_string(task.task_id) + ".json"))
                                  .string());
        total_train += task.train.size();
        total_val += task.val.size();
        total_test += task.test.size();
    }
    for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << split.tasks.size() << " tasks, " << total_train << " train / " << total_val
              << " val / " << total_test << " test images -> " << out_dir << "\n";
    return 0;
}

int cmd_synth(const std::string& classes_csv, int n, uint64_t seed, const std::string& out_dir,
              int canvas) {
    std::vector<std::string> classes;
    std::stringstream ss(classes_csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) classes.push_back(item);
    auto result = dataio::generate_synthetic(classes, n, seed, canvas);
    fs::create_directories(out_dir);
    dataio::save_annotations(result.ann, (fs::path(out_dir) / "annotations.json").string());
    result.images.save_dir((fs::path(out_dir) / "images").string());
    std::cout << result.ann.images.size() << " scenes (" << classes.size() << " classes) -> "
              << out_dir << "\n";
    return 0;
}

std::map<int, std::vector<std::string>> read_caption_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open " + path);
    ordered_json j;
    is >> j;
    std::map<int, std::vector<std::string>> out;
    for (const auto& [key, value] : j.items()) {
        std::vector<std::string> caps;
        if (value.is_string())
            caps.push_back(value.get<std::string>());
        else
            caps = value.get<std::vector<std::string>>();
        out[std::stoi(key)] = std::move(caps);
    }
    return out;
}

int cmd_score(const std::string& candidates_path, const std::string& references_path,
              const std::string& out_path) {
    auto candidates = read_caption_file(candidates_path);
    auto references = read_caption_file(references_path);
    auto report = metrics::score_captions(candidates, references);
    ordered_json j;
    j["bleu1"] = report.bleu1;
    j["bleu4"] = report.bleu4;
    j["meteor_lite"] = report.meteor_lite;
    j["rouge_l"] = report.rouge_l;
    j["cider"] = report.cider;
    std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream os(out_path, std::ios::binary);
        os << text;
    }
    return 0;
}

int cmd_run(const std::string& plan_path) {
    auto plan = harness::load_plan(plan_path);
    auto records = harness::run_scenario(plan);
    int failures = 0;
    for (const auto& r : records) {
        std::cout << r.strategy << " seed " << r.seed << ": ";
        if (r.ok()) {
            std::cout << "old CIDEr " << r.old_report.cider << ", new CIDEr " << r.new_report.cider
                      << " (" << r.wall_seconds << " s)\n";
        } else {
            std::cout << "ERROR: " << r.error << "\n";
            ++failures;
        }
    }
    std::cout << "table: " << (fs::path(plan.output_dir) / "table.txt").string() << "\n";
    return failures == 0 ? 0 : 1;
}

int cmd_report(const std::string& dir) {
    auto records = harness::load_records(dir);
    if (records.empty()) {
        std::cerr << "report: no record.json files under " << dir << "\n";
        return 2;
    }
    harness::emit_table(records, dir);
    auto table = harness::render_table(records);
    std::cout << table.txt;
    std::cout << "\nold-task change vs base model (CIDEr):\n";
    for (const auto& r : records)
        if (r.ok())
            std::cout << "  " << r.strategy << " seed " << r.seed << ": " << r.base_old_report.cider
                      << " -> " << r.old_report.cider << " (" << (r.delta_old.cider >= 0 ? "+" : "")
                      << r.delta_old.cider << ")\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental captioning toolkit"};
    app.require_subcommand(1);

    auto* split = app.add_subcommand("split", "build per-class task manifests from annotations");
    std::vector<std::string> annotations, val_annotations;
    std::string classes, out_dir;
    int resize_to = 224;
    split->add_option("--annotations", annotations, "annotation file(s), images default to train");
    split->add_option("--val-annotations", val_annotations,
                      "annotation file(s whose images default to val");
    split->add_option("--classes", classes, "comma-separated class names or ids")->required();
    split->add_option("--out", out_dir, "output directory")->required();
    split->add_option("--resize", resize_to, "target image size recorded in manifests");

    auto* synth = app.add_subcommand("synth", "generate a synthetic shape-captioning dataset");
    std::string synth_classes, synth_out;
    int synth_n = 30, synth_canvas = 32;
    uint64_t synth_seed = 13;
    synth->add_option("--classes", synth_classes, "comma-separated shape names")->required();
    synth->add_option("--n", synth_n, "scenes per class");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--canvas", synth_canvas, "canvas size in pixels");
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* score = app.add_subcommand("score", "score candidate captions against references");
    std::string cand_path, ref_path, score_out;
    score->add_option("--candidates", cand_path, "JSON: image_id -> caption")->required();
    score->add_option("--references", ref_path, "JSON: image_id -> caption(s)")->required();
    score->add_option("--out", score_out, "write the report here instead of stdout");

    auto* run = app.add_subcommand("run", "run a scenario plan");
    std::string plan_path;
    run->add_option("--plan", plan_path, "plan JSON file")->required();

    auto* report = app.add_subcommand("report", "regenerate tables from stored run records");
    std::string report_dir;
    report->add_option("--dir", report_dir, "directory holding run records")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (split->parsed())
            return cmd_split(annotations, val_annotations, classes, out_dir, resize_to);
        if (synth->parsed())
            return cmd_synth(synth_classes, synth_n, synth_seed, synth_out, synth_canvas);
        if (score->parsed()) return cmd_score(cand_path, ref_path, score_out);
        if (run->parsed()) return cmd_run(plan_path);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
