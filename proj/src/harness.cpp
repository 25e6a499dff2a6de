#include "incap/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "incap/error.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace incap::harness {

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::AddOne: return "add_one";
        case Mode::AddMultiOnce: return "add_multi_once";
        case Mode::AddSequential: return "add_sequential";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    if (name == "add_one") return Mode::AddOne;
    if (name == "add_multi_once") return Mode::AddMultiOnce;
    if (name == "add_sequential") return Mode::AddSequential;
    throw ConfigError("unknown mode '" + name +
                      "' (expected add_one, add_multi_once or add_sequential)");
}

ScenarioPlan load_plan(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("load_plan: cannot open " + path);
    ordered_json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_plan: " + path + ": " + e.what());
    }
    ScenarioPlan p;
    p.base_classes = j.at("base_classes").get<std::vector<std::string>>();
    p.addition_classes = j.at("addition_classes").get<std::vector<std::string>>();
    p.mode = mode_from_name(j.at("mode").get<std::string>());
    for (const auto& s : j.at("strategies"))
        p.strategy_list.push_back(strategies::variant_from_name(s.get<std::string>()));
    p.beta = j.value("beta", 1.0);
    p.lambda = j.value("lambda", 1.0);
    p.epochs = j.value("epochs", 30);
    p.learning_rate = j.value("learning_rate", 1e-3);
    p.batch_size = j.value("batch_size", 4);
    p.early_stop_patience = j.value("early_stop_patience", 0);
    p.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    p.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("data")) {
        const auto& d = j["data"];
        p.n_per_class = d.value("n_per_class", p.n_per_class);
        p.data_seed = d.value("seed", p.data_seed);
        p.canvas = d.value("canvas", p.canvas);
        p.dataset_dir = d.value("dataset_dir", std::string());
        p.addition_train_cap = d.value("addition_train_cap", 0);
    }
    p.min_count = j.value("min_count", 1);
    p.max_len = j.value("max_len", 20);
    if (j.contains("model")) {
        const auto& m = j["model"];
        p.model_cfg.conv1_channels = m.value("conv1_channels", p.model_cfg.conv1_channels);
        p.model_cfg.conv2_channels = m.value("conv2_channels", p.model_cfg.conv2_channels);
        p.model_cfg.feature_dim = m.value("feature_dim", p.model_cfg.feature_dim);
        p.model_cfg.embed_dim = m.value("embed_dim", p.model_cfg.embed_dim);
        p.model_cfg.hidden_dim = m.value("hidden_dim", p.model_cfg.hidden_dim);
    }
    return p;
}

metrics::MetricReport forgetting_delta(const metrics::MetricReport& before,
                                       const metrics::MetricReport& after) {
    metrics::MetricReport d;
    d.bleu1 = after.bleu1 - before.bleu1;
    d.bleu4 = after.bleu4 - before.bleu4;
    d.meteor_lite = after.meteor_lite - before.meteor_lite;
    d.rouge_l = after.rouge_l - before.rouge_l;
    d.cider = after.cider - before.cider;
    return d;
}

// ---------------------------------------------------------------------------
// Logging loader
// ---------------------------------------------------------------------------

void LoggingLoader::register_task(const dataio::TaskSpec& task) {
    for (int id : task.train) owner_[id] = {task.task_id, 't'};
    for (int id : task.val) owner_[id] = {task.task_id, 'v'};
    for (int id : task.test) owner_[id] = {task.task_id, 's'};
}

const dataio::Image& LoggingLoader::load(int image_id) {
    ++reads_;
    auto it = owner_.find(image_id);
    if (it != owner_.end()) {
        auto [task, split] = it->second;
        if ((split == 't' || split == 'v') && task != current_task_) {
            ++violations_;
            violation_log_.push_back("image " + std::to_string(image_id) + " (task " +
                                     std::to_string(task) + " " +
                                     (split == 't' ? "train" : "val") + ") read during task " +
                                     std::to_string(current_task_));
        }
    }
    const dataio::Image& img = store_->get(image_id);
    if (img.height == resize_to_ && img.width == resize_to_) return img;
    auto cached = resized_.find(image_id);
    if (cached == resized_.end())
        cached = resized_.emplace(image_id, dataio::resize_bilinear(img, resize_to_)).first;
    return cached->second;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

namespace {

ordered_json report_json(const metrics::MetricReport& r) {
    ordered_json j;
    j["bleu1"] = r.bleu1;
    j["bleu4"] = r.bleu4;
    j["meteor_lite"] = r.meteor_lite;
    j["rouge_l"] = r.rouge_l;
    j["cider"] = r.cider;
    return j;
}

metrics::MetricReport report_from_json(const ordered_json& j) {
    metrics::MetricReport r;
    r.bleu1 = j.at("bleu1").get<double>();
    r.bleu4 = j.at("bleu4").get<double>();
    r.meteor_lite = j.at("meteor_lite").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.cider = j.at("cider").get<double>();
    return r;
}

} // namespace

void save_record(const RunRecord& rec, const std::string& path) {
    ordered_json j;
    j["strategy"] = rec.strategy;
    j["seed"] = rec.seed;
    j["reports"]["old"] = report_json(rec.old_report);
    j["reports"]["new"] = report_json(rec.new_report);
    j["base_old"] = report_json(rec.base_old_report);
    j["delta_old"] = report_json(rec.delta_old);
    j["per_class_new"] = ordered_json::object();
    for (const auto& [cls, rep] : rec.per_class_new) j["per_class_new"][cls] = report_json(rep);
    j["checkpoints"] = rec.checkpoints;
    j["vocabs"] = rec.vocabs;
    j["wall_seconds"] = rec.wall_seconds;
    j["old_data_violations"] = rec.old_data_violations;
    j["error"] = rec.error;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_record: cannot open " + path);
    os << j.dump(2) << "\n";
}

RunRecord load_record(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("load_record: cannot open " + path);
    ordered_json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_record: " + path + ": " + e.what());
    }
    RunRecord rec;
    rec.strategy = j.at("strategy").get<std::string>();
    rec.seed = j.at("seed").get<uint64_t>();
    rec.old_report = report_from_json(j.at("reports").at("old"));
    rec.new_report = report_from_json(j.at("reports").at("new"));
    rec.base_old_report = report_from_json(j.at("base_old"));
    rec.delta_old = report_from_json(j.at("delta_old"));
    for (const auto& [cls, rep] : j.at("per_class_new").items())
        rec.per_class_new[cls] = report_from_json(rep);
    rec.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    rec.vocabs = j.at("vocabs").get<std::vector<std::string>>();
    rec.wall_seconds = j.at("wall_seconds").get<double>();
    rec.old_data_violations = j.at("old_data_violations").get<long>();
    rec.error = j.at("error").get<std::string>();
    return rec;
}

std::vector<RunRecord> load_records(const std::string& dir) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() == "record.json") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    std::vector<RunRecord> out;
    for (const auto& p : paths) out.push_back(load_record(p.string()));
    return out;
}

// ---------------------------------------------------------------------------
// Table
// ---------------------------------------------------------------------------

namespace {

std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

const std::vector<std::string>& table_strategy_order() {
    static const std::vector<std::string> order = {"F", "E_F", "D_F", "P", "FD"};
    return order;
}

} // namespace

TableFiles render_table(const std::vector<RunRecord>& records) {
    if (records.empty()) throw ContractViolation("render_table: no records");
    std::map<std::string, std::vector<const RunRecord*>> by_strategy;
    for (const auto& r : records)
        if (r.ok()) by_strategy[r.strategy].push_back(&r);

    const char* metric_names[5] = {"BLEU1", "BLEU4", "METEOR", "ROUGE_L", "CIDEr"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& name : table_strategy_order()) {
        auto it = by_strategy.find(name);
        if (it == by_strategy.end()) continue;
        double sums[10] = {0};
        for (const RunRecord* r : it->second) {
            const metrics::MetricReport* reps[2] = {&r->old_report, &r->new_report};
            for (int g = 0; g < 2; ++g) {
                sums[g * 5 + 0] += reps[g]->bleu1;
                sums[g * 5 + 1] += reps[g]->bleu4;
                sums[g * 5 + 2] += reps[g]->meteor_lite;
                sums[g * 5 + 3] += reps[g]->rouge_l;
                sums[g * 5 + 4] += reps[g]->cider;
            }
        }
        std::vector<std::string> row{name};
        for (double s : sums) row.push_back(fmt1(s / static_cast<double>(it->second.size())));
        rows.push_back(std::move(row));
    }

    std::ostringstream tsv;
    tsv << "strategy";
    for (const char* side : {"old", "new"})
        for (const char* m : metric_names) tsv << "\t" << side << "_" << m;
    tsv << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) tsv << (i ? "\t" : "") << row[i];
        tsv << "\n";
    }

    std::vector<std::vector<std::string>> all_rows;
    std::vector<std::string> header{"strategy"};
    for (const char* side : {"old", "new"})
        for (const char* m : metric_names) header.push_back(std::string(side) + " " + m);
    all_rows.push_back(header);
    all_rows.insert(all_rows.end(), rows.begin(), rows.end());
    std::vector<size_t> width(header.size(), 0);
    for (const auto& row : all_rows)
        for (size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    std::ostringstream txt;
    for (const auto& row : all_rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) txt << "  ";
            txt << row[i] << std::string(width[i] - row[i].size(), ' ');
        }
        txt << "\n";
    }
    return {tsv.str(), txt.str()};
}

void emit_table(const std::vector<RunRecord>& records, const std::string& dir) {
    TableFiles t = render_table(records);
    fs::create_directories(dir);
    std::ofstream tsv(fs::path(dir) / "table.tsv", std::ios::binary);
    tsv << t.tsv;
    std::ofstream txt(fs::path(dir) / "table.txt", std::ios::binary);
    txt << t.txt;
    if (!tsv || !txt) throw std::runtime_error("emit_table: write failed in " + dir);
}

// ---------------------------------------------------------------------------
// Scenario runner
// ---------------------------------------------------------------------------

namespace {

dataio::TaskSpec merge_tasks(const std::vector<dataio::TaskSpec>& tasks, int task_id) {
    dataio::TaskSpec out;
    out.task_id = task_id;
    for (const auto& t : tasks) {
        out.class_set.insert(t.class_set.begin(), t.class_set.end());
        out.train.insert(out.train.end(), t.train.begin(), t.train.end());
        out.val.insert(out.val.end(), t.val.begin(), t.val.end());
        out.test.insert(out.test.end(), t.test.begin(), t.test.end());
        out.resize_to = t.resize_to;
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

struct ScenarioData {
    dataio::AnnotationSet ann;
    dataio::ImageStore store;
    metrics::RefMap refs;
    dataio::TaskSpec base_task;
    std::vector<dataio::TaskSpec> stages;       // training stages, task_id 1..S
    std::vector<dataio::TaskSpec> class_tasks;  // per addition class, for breakdowns
    std::vector<std::string> class_names;       // parallel to class_tasks
};

ScenarioData prepare_data(const ScenarioPlan& plan) {
    ScenarioData d;
    if (plan.dataset_dir.empty()) {
        std::vector<std::string> all_classes = plan.base_classes;
        all_classes.insert(all_classes.end(), plan.addition_classes.begin(),
                           plan.addition_classes.end());
        auto synth = dataio::generate_synthetic(all_classes, plan.n_per_class, plan.data_seed,
                                                plan.canvas);
        d.ann = std::move(synth.ann);
        d.store = std::move(synth.images);
    } else {
        d.ann = dataio::load_annotations((fs::path(plan.dataset_dir) / "annotations.json").string());
        d.store = dataio::ImageStore::load_dir((fs::path(plan.dataset_dir) / "images").string());
        d.ann = dataio::filter_clear_images(d.ann, d.ann.class_universe());
    }
    for (const auto& c : d.ann.captions) d.refs[c.image_id].push_back(c.text);

    auto resolve = [&](const std::vector<std::string>& names) {
        std::vector<int> ids;
        for (const auto& n : names) {
            int id = d.ann.category_id_by_name(n);
            if (id < 0) throw ConfigError("plan names unknown class '" + n + "'");
            ids.push_back(id);
        }
        return ids;
    };
    std::vector<int> base_ids = resolve(plan.base_classes);
    std::vector<int> add_ids = resolve(plan.addition_classes);
    for (int id : add_ids)
        if (std::find(base_ids.begin(), base_ids.end(), id) != base_ids.end())
            throw ConfigError("addition class id " + std::to_string(id) +
                              " overlaps the base task");

    std::vector<int> ordering = base_ids;
    ordering.insert(ordering.end(), add_ids.begin(), add_ids.end());
    auto split = dataio::build_split(d.ann, ordering, plan.canvas);
    if (split.tasks.size() != ordering.size())
        throw ConfigError("scenario classes with no images: " +
                          (split.warnings.empty() ? std::string("?") : split.warnings.front()));

    std::vector<dataio::TaskSpec> base_parts(split.tasks.begin(),
                                             split.tasks.begin() + static_cast<long>(base_ids.size()));
    d.base_task = merge_tasks(base_parts, 0);
    std::vector<dataio::TaskSpec> add_parts(split.tasks.begin() + static_cast<long>(base_ids.size()),
                                            split.tasks.end());
    if (plan.addition_train_cap > 0)
        for (auto& part : add_parts)
            if (static_cast<int>(part.train.size()) > plan.addition_train_cap)
                part.train.resize(static_cast<size_t>(plan.addition_train_cap));

    switch (plan.mode) {
        case Mode::AddOne:
            if (add_parts.size() != 1)
                throw ConfigError("add_one requires exactly one addition class");
            d.stages = {merge_tasks({add_parts[0]}, 1)};
            break;
        case Mode::AddMultiOnce:
            d.stages = {merge_tasks(add_parts, 1)};
            break;
        case Mode::AddSequential:
            for (size_t i = 0; i < add_parts.size(); ++i)
                d.stages.push_back(merge_tasks({add_parts[i]}, static_cast<int>(i) + 1));
            break;
    }
    for (size_t i = 0; i < add_parts.size(); ++i) {
        d.class_tasks.push_back(add_parts[i]);
        d.class_names.push_back(plan.addition_classes[i]);
    }
    return d;
}

std::vector<std::string> collect_captions(const metrics::RefMap& refs, const std::vector<int>& ids) {
    std::vector<std::string> out;
    for (int id : ids) {
        auto it = refs.find(id);
        if (it == refs.end())
            throw ValidationError("no captions for image " + std::to_string(id));
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

strategies::TrainData make_train_data(const dataio::TaskSpec& task, const metrics::RefMap& refs,
                                      const vocab::Vocabulary& v, LoggingLoader& loader) {
    strategies::TrainData data;
    data.load_image = [&loader](int id) -> const dataio::Image& { return loader.load(id); };
    data.vocab = &v;
    for (int id : task.train)
        for (const auto& cap : refs.at(id)) {
            std::vector<int> target;
            target.push_back(vocab::kStart);
            for (const auto& tok : vocab::tokenize(cap)) target.push_back(v.index_of(tok));
            target.push_back(vocab::kEnd);
            data.train_pairs.emplace_back(id, std::move(target));
        }
    data.val_images = task.val;
    for (int id : task.val) data.val_refs[id] = refs.at(id);
    return data;
}

metrics::RefMap subset_refs(const metrics::RefMap& refs, const std::vector<int>& ids) {
    metrics::RefMap out;
    for (int id : ids) out[id] = refs.at(id);
    return out;
}

} // namespace

std::vector<RunRecord> run_scenario(const ScenarioPlan& plan_in) {
    ScenarioPlan plan = plan_in;
    if (const char* env = std::getenv("INCAP_SEED")) plan.seeds = {std::stoull(env)};
    if (plan.seeds.empty()) throw ConfigError("run_scenario: no seeds");
    if (plan.strategy_list.empty()) throw ConfigError("run_scenario: no strategies");

    ScenarioData d = prepare_data(plan);
    model::ModelConfig mcfg = plan.model_cfg;
    mcfg.in_channels = 3;
    mcfg.image_size = plan.canvas;

    LoggingLoader loader(&d.store, plan.canvas);
    loader.register_task(d.base_task);
    for (const auto& s : d.stages) loader.register_task(s);
    metrics::ImageLoader load = [&loader](int id) -> const dataio::Image& {
        return loader.load(id);
    };

    fs::create_directories(plan.output_dir);

    auto stage_cfg = [&plan](strategies::Variant v, uint64_t seed) {
        strategies::StrategyConfig cfg;
        cfg.variant = v;
        cfg.beta = plan.beta;
        cfg.lambda = plan.lambda;
        cfg.epochs = plan.epochs;
        cfg.learning_rate = plan.learning_rate;
        cfg.batch_size = plan.batch_size;
        cfg.early_stop_patience = plan.early_stop_patience;
        cfg.max_len = plan.max_len;
        cfg.seed = seed;
        return cfg;
    };

    // Base model per seed, shared by all strategies (training it is
    // strategy-independent and deterministic in the seed).
    std::map<uint64_t, std::pair<std::string, metrics::MetricReport>> base_by_seed;
    vocab::Vocabulary base_vocab = accumulate(
        vocab::Vocabulary(),
        vocab::build_task_vocab(collect_captions(d.refs, d.base_task.train), plan.min_count));
    for (uint64_t seed : plan.seeds) {
        fs::path base_dir = fs::path(plan.output_dir) / "base" / ("seed_" + std::to_string(seed));
        fs::create_directories(base_dir);
        std::string ckpt = (base_dir / "base.ckpt").string();
        std::string eval_path = (base_dir / "base_eval.json").string();
        base_vocab.save((base_dir / "vocab_v1.txt").string());
        metrics::MetricReport base_eval;
        if (fs::exists(ckpt) && fs::exists(eval_path)) {
            std::ifstream is(eval_path);
            ordered_json j;
            is >> j;
            base_eval = report_from_json(j);
        } else {
            loader.begin_task(0);
            auto init = model::init_model<float>(mcfg, base_vocab.size(), 1,
                                                 derive_seed(seed, 0xb45e, 0));
            auto data = make_train_data(d.base_task, d.refs, base_vocab, loader);
            auto trained = strategies::train_task(
                init, data, stage_cfg(strategies::Variant::F, derive_seed(seed, 0xb45e, 1)));
            model::save_checkpoint(trained.state, ckpt);
            base_eval = metrics::evaluate(trained.state, d.base_task, base_vocab, d.refs, load,
                                          plan.max_len);
            std::ofstream os(eval_path, std::ios::binary);
            os << report_json(base_eval).dump(2) << "\n";
        }
        base_by_seed[seed] = {ckpt, base_eval};
    }

    std::vector<RunRecord> records;
    for (strategies::Variant variant : plan.strategy_list) {
        for (uint64_t seed : plan.seeds) {
            RunRecord rec;
            rec.strategy = strategies::variant_name(variant);
            rec.seed = seed;
            auto t0 = std::chrono::steady_clock::now();
            long violations_before = loader.violations();
            fs::path run_dir =
                fs::path(plan.output_dir) / rec.strategy / ("seed_" + std::to_string(seed));
            try {
                fs::create_directories(run_dir);
                // Each run keeps its own copy of the base checkpoint.
                std::string base_ckpt = (run_dir / "base.ckpt").string();
                if (!fs::exists(base_ckpt))
                    fs::copy_file(base_by_seed.at(seed).first, base_ckpt);
                rec.base_old_report = base_by_seed.at(seed).second;
                rec.checkpoints.push_back(base_ckpt);

                vocab::Vocabulary v = base_vocab;
                std::string vocab_path = (run_dir / "vocab_v1.txt").string();
                v.save(vocab_path);
                rec.vocabs.push_back(vocab_path);
                model::ModelStateF state = model::load_checkpoint(base_ckpt, v);

                for (size_t si = 0; si < d.stages.size(); ++si) {
                    const dataio::TaskSpec& stage = d.stages[si];
                    auto tokens = vocab::build_task_vocab(
                        collect_captions(d.refs, stage.train), plan.min_count);
                    vocab::Vocabulary v_new = accumulate(v, tokens);
                    if (v_new.version() != v.version() + 1 || v_new.size() < v.size())
                        throw ContractViolation("vocabulary failed to grow monotonically");
                    vocab_path =
                        (run_dir / ("vocab_v" + std::to_string(v_new.version()) + ".txt")).string();
                    v_new.save(vocab_path);
                    rec.vocabs.push_back(vocab_path);

                    std::string ckpt_path =
                        (run_dir / ("stage_" + std::to_string(si + 1) + ".ckpt")).string();
                    if (fs::exists(ckpt_path)) {
                        state = model::load_checkpoint(ckpt_path, v_new);  // resume
                    } else {
                        loader.begin_task(stage.task_id);
                        model::ModelStateF prev = state;
                        auto data = make_train_data(stage, d.refs, v_new, loader);
                        if (variant == strategies::Variant::P) {
                            std::string cache =
                                (run_dir / ("pseudo_stage_" + std::to_string(si + 1) + ".json"))
                                    .string();
                            data.pseudo_labels = strategies::pseudo_labels_cached(
                                cache, prev, stage.train, data.load_image, plan.max_len);
                        }
                        auto expanded = model::expand_decoder(
                            state, v_new, derive_seed(seed, 0xe49a, si + 1));
                        auto cfg = stage_cfg(variant, derive_seed(seed, 0x7a51, si + 1));
                        auto trained = strategies::train_task(
                            expanded, data, cfg,
                            variant == strategies::Variant::FD ? &prev : nullptr);
                        state = std::move(trained.state);
                        model::save_checkpoint(state, ckpt_path);
                    }
                    rec.checkpoints.push_back(ckpt_path);
                    v = v_new;
                }

                // Final evaluations: base test split and pooled addition test split.
                loader.begin_task(d.stages.back().task_id);
                rec.old_report =
                    metrics::evaluate(state, d.base_task, v, d.refs, load, plan.max_len);
                dataio::TaskSpec pooled = merge_tasks(
                    d.class_tasks, static_cast<int>(d.stages.size()) + 1);
                rec.new_report = metrics::evaluate(state, pooled, v, d.refs, load, plan.max_len);
                for (size_t ci = 0; ci < d.class_tasks.size(); ++ci)
                    rec.per_class_new[d.class_names[ci]] = metrics::evaluate(
                        state, d.class_tasks[ci], v,
                        subset_refs(d.refs, d.class_tasks[ci].test), load, plan.max_len);
                rec.delta_old = forgetting_delta(rec.base_old_report, rec.old_report);
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
            rec.old_data_violations = loader.violations() - violations_before;
            rec.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            save_record(rec, (run_dir / "record.json").string());
            records.push_back(std::move(rec));
        }
    }

    bool any_ok = std::any_of(records.begin(), records.end(),
                              [](const RunRecord& r) { return r.ok(); });
    if (any_ok) emit_table(records, plan.output_dir);
    return records;
}

} // namespace incap::harness
