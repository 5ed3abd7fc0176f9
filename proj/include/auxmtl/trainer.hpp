#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "auxmtl/losses.hpp"
#include "auxmtl/metrics.hpp"
#include "auxmtl/model.hpp"
#include "auxmtl/scenegen.hpp"

namespace auxmtl {

enum class WeightingMode { Single, Fixed, Learned };

WeightingMode parse_mode(const std::string& s);
std::string mode_name(WeightingMode m);

struct Hyperparams {
    double lr = 1e-3;
    std::int64_t batch_size = 4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t max_iters = 2000;
    std::int64_t snapshot_every = 100;
    RegKind reg = RegKind::Pos;
    WeightingMode mode = WeightingMode::Learned;
    std::uint64_t seed = 0;
    double time_scale = losses::kDefaultTimeScale;
    std::optional<double> c_lr;  // learning rate override for the c weights
    bool clamp_c = false;        // optional guard against diverging weights
    std::map<TaskId, double> fixed_coeffs;  // Fixed mode; missing tasks default to 1

    void validate() const;
    nlohmann::json to_json() const;
    static Hyperparams from_json(const nlohmann::json& j);
};

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::int64_t t = 0;
};

// One Adam update over a named parameter group. Moment buffers are created
// lazily; throws on non-finite gradients, naming the parameter.
void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               const Hyperparams& hyper);

struct HistoryRow {
    std::int64_t iteration = 0;
    std::string task;    // "tau1".."tau4" or "all"
    std::string series;  // raw_loss | weighted_loss | c | combined | metric name
    double value = 0.0;
};

struct TrainHistory {
    std::vector<HistoryRow> rows;
    std::vector<metrics::MetricRecord> snapshots;

    void write_csv(const std::filesystem::path& path) const;
    static TrainHistory read_csv(const std::filesystem::path& path);

    std::optional<double> find(std::int64_t iteration, const std::string& task,
                               const std::string& series) const;
};

struct DivergenceError : std::runtime_error {
    std::int64_t iteration;
    DivergenceError(std::int64_t iter, const std::string& what)
        : std::runtime_error("diverged at iteration " + std::to_string(iter) + ": " + what),
          iteration(iter) {}
};

struct DataRef {
    const std::vector<scenegen::Sample>* train = nullptr;
    const std::vector<scenegen::Sample>* test = nullptr;
};

struct ExperimentSpec {
    TaskSet tasks;
    ModelConfig model;  // task_set is overridden with `tasks`
    Hyperparams hyper;
    DataRef data;
};

struct TrainResult {
    TrainHistory history;
    Model model;
};

// Deterministic in hyper.seed: model init, batch order and all kernel
// arithmetic are pure functions of the spec.
TrainResult train(const ExperimentSpec& spec);

// Full-test-split evaluation of the tasks active in the model.
metrics::MetricRecord evaluate(const Model& m, const std::vector<scenegen::Sample>& test,
                               std::int64_t batch_size, std::int64_t iteration);

// The eight task-set experiments, in fixed order.
std::vector<TaskSet> matrix_task_sets();

struct ExperimentOutcome {
    TaskSet tasks;
    Hyperparams hyper;  // as actually run (mode resolved per task-set size)
    bool ok = false;
    std::string error;
    TrainHistory history;
    Model model;
};

// Runs all eight experiments; one failure does not abort the others.
// jobs > 1 executes experiments in isolated worker threads.
std::vector<ExperimentOutcome> run_matrix(const ModelConfig& base_model,
                                          const Hyperparams& base_hyper, DataRef data, int jobs);

// Results table with one row per task set and one column per metric;
// cells for tasks outside the set hold "-", failed runs hold "nan".
std::string results_table_csv(
    const std::vector<std::pair<TaskSet, const TrainHistory*>>& runs);

// Gnuplot-readable curve data: column 1 iteration, then one column per
// active metric, with a commented header line.
void write_curve_file(const std::filesystem::path& path, const TrainHistory& history,
                      const TaskSet& tasks);

}  // namespace auxmtl
