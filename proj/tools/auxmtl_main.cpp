#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "auxmtl/dataset_io.hpp"
#include "auxmtl/kernels.hpp"
#include "auxmtl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace auxmtl;

namespace {

// Distinguishes bad invocations (exit 2) from runtime/data failures (exit 1).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    json j;
    is >> j;
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << j.dump(2) << "\n";
}

std::uint64_t default_seed() {
    if (const char* env = std::getenv("AUXMTL_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw UsageError("AUXMTL_SEED is not an integer: " + std::string(env));
        }
    }
    return 0;
}

TaskSet parse_tasks_or_usage(const std::string& csv) {
    try {
        return parse_task_set(csv);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::vector<std::int64_t> parse_i64_csv(const std::string& csv, const char* what) {
    std::vector<std::int64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoll(tok));
        } catch (const std::exception&) {
            throw UsageError(std::string(what) + ": bad integer '" + tok + "'");
        }
    }
    if (out.empty()) throw UsageError(std::string(what) + ": empty list");
    return out;
}

// "1=0.5,2=1.25" -> fixed per-task coefficients.
std::map<TaskId, double> parse_coeffs(const std::string& s) {
    std::map<TaskId, double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw UsageError("bad coefficient '" + tok + "' (use task=value)");
        try {
            out[task_from_index(std::stoi(tok.substr(0, eq)))] = std::stod(tok.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    return out;
}

struct TrainSetup {
    fs::path data;
    fs::path split;
    ModelConfig model;
    Hyperparams hyper;

    json to_json() const {
        json j;
        j["command"] = "train";
        j["data"] = data.string();
        j["split"] = split.string();
        j["model"] = model.to_json();
        j["hyper"] = hyper.to_json();
        return j;
    }

    static TrainSetup from_json(const json& j) {
        TrainSetup s;
        s.data = j.at("data").get<std::string>();
        s.split = j.at("split").get<std::string>();
        s.model = ModelConfig::from_json(j.at("model"));
        s.hyper = Hyperparams::from_json(j.at("hyper"));
        return s;
    }
};

struct LoadedData {
    std::vector<scenegen::Sample> train;
    std::vector<scenegen::Sample> test;
};

LoadedData load_split_data(const fs::path& data_dir, const fs::path& split_dir) {
    const fs::path manifest_path = data_dir / "manifest.jsonl";
    if (!fs::exists(manifest_path)) {
        throw std::runtime_error("no manifest at " + manifest_path.string() +
                                 " (run `auxmtl generate` first)");
    }
    const auto manifest = dataset_io::read_manifest(manifest_path);
    const fs::path train_ids = split_dir / "train_ids.txt";
    const fs::path test_ids = split_dir / "test_ids.txt";
    if (!fs::exists(train_ids) || !fs::exists(test_ids)) {
        throw std::runtime_error("no split id lists under " + split_dir.string() +
                                 " (run `auxmtl split` first)");
    }
    LoadedData d;
    d.train = dataset_io::load_samples(data_dir, manifest, dataset_io::read_id_list(train_ids));
    d.test = dataset_io::load_samples(data_dir, manifest, dataset_io::read_id_list(test_ids));
    return d;
}

void write_experiment_outputs(const fs::path& dir, const TrainSetup& setup,
                              const TrainHistory& history, const Model& model) {
    fs::create_directories(dir);
    history.write_csv(dir / "history.csv");
    save_checkpoint(dir / "checkpoint.bin", model);
    write_json_file(dir / "config.json", setup.to_json());
}

int cmd_generate(std::int64_t n, std::uint64_t seed, const fs::path& out,
                 const std::string& dist_file) {
    scenegen::LabelDist dist;
    if (!dist_file.empty()) dist = scenegen::LabelDist::from_json(read_json_file(dist_file));
    dist.validate();

    fs::create_directories(out);
    dataset_io::generate_dataset(n, seed, dist, out);

    json cfg;
    cfg["command"] = "generate";
    cfg["n"] = n;
    cfg["seed"] = seed;
    cfg["dist"] = dist.to_json();
    write_json_file(out / "config.json", cfg);

    std::cout << "wrote " << n << " samples to " << out.string() << "\n";
    return 0;
}

int cmd_split(const fs::path& data, const fs::path& out, const scenegen::SplitSpec& spec) {
    const auto manifest = dataset_io::read_manifest(data / "manifest.jsonl");
    const auto res = scenegen::spatial_split(manifest, spec);

    fs::create_directories(out);
    dataset_io::write_id_list(out / "train_ids.txt", res.train_ids);
    dataset_io::write_id_list(out / "test_ids.txt", res.test_ids);
    dataset_io::write_id_list(out / "buffer_ids.txt", res.buffer_ids);

    json cfg;
    cfg["command"] = "split";
    cfg["data"] = data.string();
    cfg["bin_size_m"] = spec.bin_size_m;
    cfg["n_test_bins"] = spec.n_test_bins;
    cfg["buffer_m"] = spec.buffer_m;
    cfg["seed"] = spec.rng_seed;
    write_json_file(out / "split_config.json", cfg);

    std::cout << "split: " << res.train_ids.size() << " train, " << res.test_ids.size()
              << " test, " << res.buffer_ids.size() << " buffer\n";
    return 0;
}

int cmd_train(const TrainSetup& setup, const fs::path& out) {
    const LoadedData data = load_split_data(setup.data, setup.split);

    ExperimentSpec spec;
    spec.tasks = setup.model.task_set;
    spec.model = setup.model;
    spec.hyper = setup.hyper;
    spec.data = {&data.train, &data.test};
    if (spec.tasks.empty()) throw UsageError("no tasks selected (use --tasks)");
    if (spec.hyper.mode == WeightingMode::Single && spec.tasks.size() != 1) {
        throw UsageError("--mode single requires exactly one task");
    }

    const TrainResult res = train(spec);
    write_experiment_outputs(out, setup, res.history, res.model);

    if (!res.history.snapshots.empty()) {
        const auto& last = res.history.snapshots.back();
        std::cout << task_set_name(spec.tasks) << " @ iter " << last.iteration << ":";
        for (TaskId t : spec.tasks) {
            std::cout << " " << metrics::metric_name(t) << "=" << *last.by_task(t);
        }
        std::cout << "\n";
    }
    std::cout << "wrote " << (out / "history.csv").string() << "\n";
    return 0;
}

int cmd_matrix(const TrainSetup& base, const fs::path& out, int jobs) {
    const LoadedData data = load_split_data(base.data, base.split);

    if (jobs > 1) {
        // Experiments run in isolated worker threads; keep the kernels
        // serial to avoid oversubscription (results are identical).
        kernels::set_parallel(false);
    }
    const auto outcomes =
        run_matrix(base.model, base.hyper, {&data.train, &data.test}, jobs);

    fs::create_directories(out);
    std::vector<std::pair<TaskSet, const TrainHistory*>> runs;
    bool any_failed = false;
    for (const auto& oc : outcomes) {
        const fs::path sub = out / task_set_name(oc.tasks);
        if (oc.ok) {
            TrainSetup setup = base;
            setup.model.task_set = oc.tasks;
            setup.hyper = oc.hyper;
            write_experiment_outputs(sub, setup, oc.history, oc.model);
            runs.emplace_back(oc.tasks, &oc.history);
        } else {
            any_failed = true;
            std::cerr << "experiment " << task_set_name(oc.tasks) << " failed: " << oc.error << "\n";
            runs.emplace_back(oc.tasks, nullptr);
        }
    }

    {
        std::ofstream os(out / "results.csv", std::ios::trunc);
        os << results_table_csv(runs);
    }
    write_json_file(out / "config.json", [&] {
        json j = base.to_json();
        j["command"] = "matrix";
        j["jobs"] = jobs;
        return j;
    }());

    std::cout << "wrote " << (out / "results.csv").string() << "\n";
    return any_failed ? 1 : 0;
}

TaskSet task_set_from_name(const std::string& name) {
    TaskSet ts;
    std::stringstream ss(name);
    std::string tok;
    while (std::getline(ss, tok, '-')) {
        if (tok.size() != 4 || tok.substr(0, 3) != "tau") {
            throw std::runtime_error("not a task-set directory name: " + name);
        }
        ts.insert(task_from_index(tok[3] - '0'));
    }
    return ts;
}

TaskSet task_set_from_history(const TrainHistory& h) {
    TaskSet ts;
    for (const auto& r : h.rows) {
        if (r.task.size() == 4 && r.task.substr(0, 3) == "tau") {
            ts.insert(task_from_index(r.task[3] - '0'));
        }
    }
    if (ts.empty()) throw std::runtime_error("history contains no task series");
    return ts;
}

int cmd_report(const fs::path& history_arg, const fs::path& out) {
    struct Run {
        TaskSet tasks;
        TrainHistory history;
    };
    std::vector<Run> found;

    if (fs::is_directory(history_arg)) {
        for (const TaskSet& ts : matrix_task_sets()) {
            const fs::path h = history_arg / task_set_name(ts) / "history.csv";
            if (fs::exists(h)) found.push_back({ts, TrainHistory::read_csv(h)});
        }
        if (found.empty()) {
            // Not a matrix directory; accept a single-run directory.
            const fs::path h = history_arg / "history.csv";
            if (!fs::exists(h)) {
                throw std::runtime_error("no history.csv under " + history_arg.string());
            }
            TrainHistory hist = TrainHistory::read_csv(h);
            found.push_back({task_set_from_history(hist), std::move(hist)});
        }
    } else if (fs::exists(history_arg)) {
        TrainHistory hist = TrainHistory::read_csv(history_arg);
        found.push_back({task_set_from_history(hist), std::move(hist)});
    } else {
        throw std::runtime_error("no such history file or directory: " + history_arg.string());
    }

    fs::create_directories(out);
    std::vector<std::pair<TaskSet, const TrainHistory*>> runs;
    for (const auto& run : found) {
        write_curve_file(out / (task_set_name(run.tasks) + ".dat"), run.history, run.tasks);
        runs.emplace_back(run.tasks, &run.history);
    }
    {
        std::ofstream os(out / "summary.csv", std::ios::trunc);
        os << results_table_csv(runs);
    }
    std::cout << "wrote " << found.size() << " curve file(s) and summary.csv to " << out.string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"auxmtl: multi-task training engine with learned loss weighting"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "OpenMP thread count (0 = library default)");

    // generate
    auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
    std::int64_t gen_n = 0;
    std::string gen_out, gen_dist;
    std::uint64_t gen_seed = 0;
    gen->add_option("--n", gen_n, "number of samples")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--dist", gen_dist, "label-distribution JSON file");

    // split
    auto* spl = app.add_subcommand("split", "spatial train/test split over world bins");
    std::string spl_data, spl_out;
    scenegen::SplitSpec spl_spec;
    spl->add_option("--data", spl_data, "dataset directory")->required();
    spl->add_option("--bin", spl_spec.bin_size_m, "bin size in meters");
    spl->add_option("--test-bins", spl_spec.n_test_bins, "number of test bins");
    spl->add_option("--buffer", spl_spec.buffer_m, "buffer width in meters");
    spl->add_option("--seed", spl_spec.rng_seed, "bin-selection seed");
    spl->add_option("--out", spl_out, "output directory (default: dataset dir)");

    // shared train/matrix options
    struct TrainFlags {
        std::string config, data, split, out, tasks, mode, reg, coeffs, channels, rates;
        std::int64_t iters = 0, batch = 0, snapshot = 0, input_h = 0, input_w = 0;
        std::int64_t seg_classes = 0, head_channels = 0, stride = 0;
        double lr = 0, c_lr = 0, time_scale = 0;
        std::uint64_t seed = 0;
        bool clamp_c = false;
    };
    auto add_train_flags = [](CLI::App* cmd, TrainFlags& f, bool with_tasks) {
        cmd->add_option("--config", f.config, "resolved-config JSON to start from");
        cmd->add_option("--data", f.data, "dataset directory");
        cmd->add_option("--split", f.split, "split directory (default: dataset dir)");
        cmd->add_option("--out", f.out, "output directory")->required();
        if (with_tasks) cmd->add_option("--tasks", f.tasks, "task ids, e.g. 1,2,4");
        cmd->add_option("--mode", f.mode, "single|fixed|learned");
        cmd->add_option("--reg", f.reg, "weight regularizer: pos|log");
        cmd->add_option("--coeffs", f.coeffs, "fixed-mode coefficients, e.g. 1=0.5,2=1");
        cmd->add_option("--iters", f.iters, "training iterations");
        cmd->add_option("--batch", f.batch, "batch size");
        cmd->add_option("--lr", f.lr, "learning rate");
        cmd->add_option("--c-lr", f.c_lr, "learning rate override for c weights");
        cmd->add_option("--time-scale", f.time_scale, "time-loss scale constant");
        cmd->add_option("--seed", f.seed, "experiment seed");
        cmd->add_option("--snapshot-every", f.snapshot, "evaluation cadence in iterations");
        cmd->add_flag("--clamp-c", f.clamp_c, "clamp diverging c weights");
        cmd->add_option("--input-h", f.input_h, "input height");
        cmd->add_option("--input-w", f.input_w, "input width");
        cmd->add_option("--channels", f.channels, "encoder channels, e.g. 16,32,64,64");
        cmd->add_option("--aspp", f.rates, "ASPP dilation rates, e.g. 1,2,4");
        cmd->add_option("--stride", f.stride, "output stride");
        cmd->add_option("--seg-classes", f.seg_classes, "segmentation class count");
        cmd->add_option("--head-channels", f.head_channels, "decoder channel width");
    };

    auto* trn = app.add_subcommand("train", "run one experiment");
    TrainFlags tf;
    add_train_flags(trn, tf, true);

    auto* mat = app.add_subcommand("matrix", "run the eight-task-set experiment matrix");
    TrainFlags mf;
    int mat_jobs = 1;
    add_train_flags(mat, mf, false);
    mat->add_option("--jobs", mat_jobs, "concurrent experiments")->check(CLI::PositiveNumber);

    auto* rep = app.add_subcommand("report", "emit convergence curves and the summary table");
    std::string rep_history, rep_out;
    rep->add_option("--history", rep_history, "history.csv or matrix output directory")->required();
    rep->add_option("--out", rep_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\nRun with --help for usage.\n";
        return 2;
    }

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    auto resolve_setup = [&](CLI::App* cmd, const TrainFlags& f, bool with_tasks) {
        TrainSetup s;
        s.hyper.seed = default_seed();
        if (!f.config.empty()) s = TrainSetup::from_json(read_json_file(f.config));
        if (cmd->count("--data")) s.data = fs::absolute(f.data);
        if (cmd->count("--split")) {
            s.split = fs::absolute(f.split);
        } else if (s.split.empty()) {
            s.split = s.data;
        }
        if (s.data.empty()) throw UsageError("--data (or a config with data) is required");
        if (with_tasks && cmd->count("--tasks")) s.model.task_set = parse_tasks_or_usage(f.tasks);
        if (cmd->count("--mode")) {
            try {
                s.hyper.mode = parse_mode(f.mode);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        if (cmd->count("--reg")) {
            try {
                s.hyper.reg = parse_reg_kind(f.reg);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        if (cmd->count("--coeffs")) s.hyper.fixed_coeffs = parse_coeffs(f.coeffs);
        if (cmd->count("--iters")) s.hyper.max_iters = f.iters;
        if (cmd->count("--batch")) s.hyper.batch_size = f.batch;
        if (cmd->count("--lr")) s.hyper.lr = f.lr;
        if (cmd->count("--c-lr")) s.hyper.c_lr = f.c_lr;
        if (cmd->count("--time-scale")) s.hyper.time_scale = f.time_scale;
        if (cmd->count("--seed")) s.hyper.seed = f.seed;
        if (cmd->count("--snapshot-every")) s.hyper.snapshot_every = f.snapshot;
        if (cmd->count("--clamp-c")) s.hyper.clamp_c = f.clamp_c;
        if (cmd->count("--input-h")) s.model.input_h = f.input_h;
        if (cmd->count("--input-w")) s.model.input_w = f.input_w;
        if (cmd->count("--channels")) s.model.encoder_channels = parse_i64_csv(f.channels, "--channels");
        if (cmd->count("--aspp")) s.model.aspp_rates = parse_i64_csv(f.rates, "--aspp");
        if (cmd->count("--stride")) {
            s.model.output_stride = f.stride;
        } else if (cmd->count("--channels")) {
            s.model.output_stride = std::int64_t{1} << s.model.encoder_channels.size();
        }
        if (cmd->count("--seg-classes")) s.model.n_seg_classes = f.seg_classes;
        if (cmd->count("--head-channels")) s.model.head_channels = f.head_channels;
        try {
            s.hyper.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return s;
    };

    try {
        if (*gen) {
            if (!gen->count("--seed")) gen_seed = default_seed();
            return cmd_generate(gen_n, gen_seed, gen_out, gen_dist);
        }
        if (*spl) {
            if (!spl->count("--seed")) spl_spec.rng_seed = default_seed();
            const fs::path out = spl_out.empty() ? fs::path(spl_data) : fs::path(spl_out);
            return cmd_split(spl_data, out, spl_spec);
        }
        if (*trn) {
            TrainSetup setup = resolve_setup(trn, tf, true);
            try {
                setup.model.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            return cmd_train(setup, tf.out);
        }
        if (*mat) {
            TrainSetup setup = resolve_setup(mat, mf, false);
            setup.model.task_set = {TaskId::Seg, TaskId::Depth, TaskId::Time, TaskId::Weather};
            try {
                setup.model.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            return cmd_matrix(setup, mf.out, mat_jobs);
        }
        if (*rep) {
            return cmd_report(rep_history, rep_out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
