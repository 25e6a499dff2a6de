#pragma once

#include <map>
#include <string>
#include <vector>

#include "incap/dataio.hpp"
#include "incap/metrics.hpp"
#include "incap/model.hpp"
#include "incap/strategies.hpp"
#include "incap/vocab.hpp"

namespace incap::harness {

enum class Mode { AddOne, AddMultiOnce, AddSequential };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

// A scenario: train a base model on base_classes, then apply the additions per
// mode, once per (strategy, seed), and evaluate the final model on the base
// task's test split and on the pooled test split of the added classes.
struct ScenarioPlan {
    std::vector<std::string> base_classes;
    std::vector<std::string> addition_classes;
    Mode mode = Mode::AddOne;
    std::vector<strategies::Variant> strategy_list;
    double beta = 1.0;
    double lambda = 1.0;
    int epochs = 30;
    double learning_rate = 1e-3;
    int batch_size = 4;
    int early_stop_patience = 0;
    std::vector<uint64_t> seeds;
    std::string output_dir;

    // data source: synthetic scenes unless dataset_dir is given
    int n_per_class = 30;
    uint64_t data_seed = 13;
    int canvas = 32;
    std::string dataset_dir;  // expects annotations.json + images/
    // Addition classes keep at most this many train images (0 = all); their
    // val/test splits stay full-sized. Models the usual scarcity of newly
    // arriving classes while keeping evaluation stable.
    int addition_train_cap = 0;

    int min_count = 1;
    int max_len = 20;
    model::ModelConfig model_cfg;
};

ScenarioPlan load_plan(const std::string& path);

struct RunRecord {
    std::string strategy;
    uint64_t seed = 0;
    metrics::MetricReport old_report;       // final model on the base test split
    metrics::MetricReport new_report;       // final model on the pooled addition test split
    metrics::MetricReport base_old_report;  // base model on the base test split
    metrics::MetricReport delta_old;        // old_report - base_old_report
    std::map<std::string, metrics::MetricReport> per_class_new;
    std::vector<std::string> checkpoints;
    std::vector<std::string> vocabs;
    double wall_seconds = 0;
    long old_data_violations = 0;
    std::string error;  // empty on success

    bool ok() const { return error.empty(); }
};

// Per-metric signed differences, after - before.
metrics::MetricReport forgetting_delta(const metrics::MetricReport& before,
                                       const metrics::MetricReport& after);

// Runs every (strategy, seed) pair. A failed run records its error and the
// remaining runs proceed. Existing stage checkpoints in the output directory
// are resumed from rather than retrained. The INCAP_SEED environment variable,
// when set, overrides the plan's seed list with that single seed.
std::vector<RunRecord> run_scenario(const ScenarioPlan& plan);

void save_record(const RunRecord& rec, const std::string& path);
RunRecord load_record(const std::string& path);
std::vector<RunRecord> load_records(const std::string& dir);  // all record.json under dir

// Mean-over-seeds table, one row per strategy in the order F, E_F, D_F, P, FD,
// column groups {old, new} x {BLEU1, BLEU4, METEOR, ROUGE_L, CIDEr}, one
// decimal. Regenerating from the same records is byte-identical.
struct TableFiles {
    std::string tsv;
    std::string txt;
};
TableFiles render_table(const std::vector<RunRecord>& records);
void emit_table(const std::vector<RunRecord>& records, const std::string& dir);

// Image access tracking; training and evaluation fetch pixels only through
// this so that reads of earlier tasks' train/val data are impossible to miss.
class LoggingLoader {
  public:
    LoggingLoader(const dataio::ImageStore* store, int resize_to)
        : store_(store), resize_to_(resize_to) {}

    void register_task(const dataio::TaskSpec& task);
    void begin_task(int task_id) { current_task_ = task_id; }

    const dataio::Image& load(int image_id);

    long reads() const { return reads_; }
    long violations() const { return violations_; }
    const std::vector<std::string>& violation_log() const { return violation_log_; }

  private:
    const dataio::ImageStore* store_;
    int resize_to_;
    std::map<int, std::pair<int, char>> owner_;  // image_id -> (task_id, 't'rain/'v'al/'s'test)
    std::map<int, dataio::Image> resized_;
    int current_task_ = -1;
    long reads_ = 0;
    long violations_ = 0;
    std::vector<std::string> violation_log_;
};

} // namespace incap::harness
