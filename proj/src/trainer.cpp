#include "auxmtl/trainer.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "auxmtl/util.hpp"

namespace auxmtl {

WeightingMode parse_mode(const std::string& s) {
    if (s == "single") return WeightingMode::Single;
    if (s == "fixed") return WeightingMode::Fixed;
    if (s == "learned") return WeightingMode::Learned;
    throw std::invalid_argument("unknown mode '" + s + "' (expected single|fixed|learned)");
}

std::string mode_name(WeightingMode m) {
    switch (m) {
        case WeightingMode::Single: return "single";
        case WeightingMode::Fixed: return "fixed";
        case WeightingMode::Learned: return "learned";
    }
    return "?";
}

void Hyperparams::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("hyperparams: betas must be in (0,1)");
    }
    if (batch_size < 1) throw std::invalid_argument("hyperparams: batch size must be >= 1");
    if (!(lr > 0.0) || !(eps > 0.0)) throw std::invalid_argument("hyperparams: lr and eps must be > 0");
    if (max_iters < 0) throw std::invalid_argument("hyperparams: negative iteration count");
    if (snapshot_every < 1) throw std::invalid_argument("hyperparams: snapshot cadence must be >= 1");
    if (c_lr && !(*c_lr > 0.0)) throw std::invalid_argument("hyperparams: c lr must be > 0");
}

nlohmann::json Hyperparams::to_json() const {
    nlohmann::json coeffs = nlohmann::json::object();
    for (const auto& [t, v] : fixed_coeffs) coeffs[task_name(t)] = v;
    nlohmann::json j{{"lr", lr},
                     {"batch_size", batch_size},
                     {"beta1", beta1},
                     {"beta2", beta2},
                     {"eps", eps},
                     {"max_iters", max_iters},
                     {"snapshot_every", snapshot_every},
                     {"reg", reg_kind_name(reg)},
                     {"mode", mode_name(mode)},
                     {"seed", seed},
                     {"time_scale", time_scale},
                     {"clamp_c", clamp_c},
                     {"fixed_coeffs", coeffs}};
    if (c_lr) j["c_lr"] = *c_lr;
    return j;
}

Hyperparams Hyperparams::from_json(const nlohmann::json& j) {
    Hyperparams h;
    h.lr = j.value("lr", h.lr);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.beta1 = j.value("beta1", h.beta1);
    h.beta2 = j.value("beta2", h.beta2);
    h.eps = j.value("eps", h.eps);
    h.max_iters = j.value("max_iters", h.max_iters);
    h.snapshot_every = j.value("snapshot_every", h.snapshot_every);
    if (j.contains("reg")) h.reg = parse_reg_kind(j.at("reg").get<std::string>());
    if (j.contains("mode")) h.mode = parse_mode(j.at("mode").get<std::string>());
    h.seed = j.value("seed", h.seed);
    h.time_scale = j.value("time_scale", h.time_scale);
    if (j.contains("c_lr") && !j.at("c_lr").is_null()) h.c_lr = j.at("c_lr").get<double>();
    h.clamp_c = j.value("clamp_c", h.clamp_c);
    if (j.contains("fixed_coeffs")) {
        for (const auto& [k, v] : j.at("fixed_coeffs").items()) {
            if (k.size() != 4 || k.substr(0, 3) != "tau") {
                throw std::invalid_argument("bad fixed coefficient key '" + k + "'");
            }
            h.fixed_coeffs[task_from_index(k[3] - '0')] = v.get<double>();
        }
    }
    h.validate();
    return h;
}

void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               const Hyperparams& hyper) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (g.shape != p.shape) {
            throw std::invalid_argument("adam_step: gradient shape " + shape_str(g.shape) +
                                        " != parameter shape " + shape_str(p.shape) + " for " + name);
        }
        if (!g.all_finite()) {
            throw std::runtime_error("adam_step: non-finite gradient for " + name);
        }
        auto& m = state.m.try_emplace(name, Tensor(p.shape, 0.0)).first->second;
        auto& v = state.v.try_emplace(name, Tensor(p.shape, 0.0)).first->second;
        for (std::int64_t i = 0; i < p.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << "iteration,task,series,value\n";
    for (const auto& r : rows) {
        os << r.iteration << "," << r.task << "," << r.series << "," << format_g17(r.value) << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

TrainHistory TrainHistory::read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open history: " + path.string());
    TrainHistory h;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty history: " + path.string());
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        HistoryRow r;
        std::string field;
        std::getline(ss, field, ',');
        r.iteration = std::stoll(field);
        std::getline(ss, r.task, ',');
        std::getline(ss, r.series, ',');
        std::getline(ss, field, ',');
        r.value = std::stod(field);
        h.rows.push_back(std::move(r));
    }
    return h;
}

std::optional<double> TrainHistory::find(std::int64_t iteration, const std::string& task,
                                         const std::string& series) const {
    for (const auto& r : rows) {
        if (r.iteration == iteration && r.task == task && r.series == series) return r.value;
    }
    return std::nullopt;
}

namespace {

// Deterministic batch order: epoch permutations keyed by (seed, epoch), a
// pure function of the iteration number.
class BatchSampler {
public:
    BatchSampler(std::uint64_t seed, std::int64_t n_samples) : seed_(seed), n_(n_samples) {}

    std::vector<std::int64_t> batch(std::int64_t iteration, std::int64_t batch_size) {
        std::vector<std::int64_t> out;
        out.reserve(static_cast<std::size_t>(batch_size));
        const std::int64_t start = (iteration - 1) * batch_size;
        for (std::int64_t j = 0; j < batch_size; ++j) {
            const std::int64_t g = start + j;
            const std::int64_t epoch = g / n_;
            if (epoch != cached_epoch_) {
                perm_.resize(static_cast<std::size_t>(n_));
                for (std::int64_t i = 0; i < n_; ++i) perm_[static_cast<std::size_t>(i)] = i;
                Rng rng = Rng::stream(seed_, 0xBA7C, static_cast<std::uint64_t>(epoch));
                rng.shuffle(perm_);
                cached_epoch_ = epoch;
            }
            out.push_back(perm_[static_cast<std::size_t>(g % n_)]);
        }
        return out;
    }

private:
    std::uint64_t seed_;
    std::int64_t n_;
    std::int64_t cached_epoch_ = -1;
    std::vector<std::int64_t> perm_;
};

struct Batch {
    Tensor images;
    Tensor depth_r;
    std::vector<std::int32_t> seg_ids;
    std::vector<double> time_min;
    std::vector<std::int32_t> weather;
};

Batch make_batch(const std::vector<scenegen::Sample>& samples,
                 const std::vector<std::int64_t>& idx) {
    const auto& first = samples.at(static_cast<std::size_t>(idx.at(0)));
    const std::int64_t h = first.h, w = first.w;
    const std::int64_t b = static_cast<std::int64_t>(idx.size());
    Batch out;
    out.images = Tensor({b, h, w, 3});
    out.depth_r = Tensor({b, h, w});
    out.seg_ids.resize(static_cast<std::size_t>(b * h * w));
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& s = samples.at(static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]));
        if (s.h != h || s.w != w) throw std::runtime_error("mixed sample resolutions in dataset");
        for (std::int64_t p = 0; p < h * w; ++p) {
            for (int ch = 0; ch < 3; ++ch) {
                out.images[(i * h * w + p) * 3 + ch] = s.image[static_cast<std::size_t>(p * 3 + ch)];
            }
            out.depth_r[i * h * w + p] =
                losses::depth_target_transform(s.depth_m[static_cast<std::size_t>(p)]);
            out.seg_ids[static_cast<std::size_t>(i * h * w + p)] = s.mask[static_cast<std::size_t>(p)];
        }
        out.time_min.push_back(s.time_min);
        out.weather.push_back(s.weather);
    }
    return out;
}

std::map<TaskId, NodeId> build_raw_losses(Graph& g, const ForwardNodes& fn, const Batch& batch,
                                          const TaskSet& tasks, double time_scale) {
    std::map<TaskId, NodeId> raw;
    for (TaskId t : tasks) {
        switch (t) {
            case TaskId::Seg:
                raw[t] = losses::pixelwise_ce_loss(g, fn.outputs.at(t), batch.seg_ids);
                break;
            case TaskId::Depth:
                raw[t] = losses::depth_loss(g, fn.outputs.at(t), batch.depth_r);
                break;
            case TaskId::Time:
                raw[t] = losses::time_loss(g, fn.outputs.at(t), batch.time_min, time_scale);
                break;
            case TaskId::Weather:
                raw[t] = losses::scalar_ce_loss(g, fn.outputs.at(t), batch.weather);
                break;
        }
    }
    return raw;
}

std::int32_t argmax_row(const double* p, std::int64_t k) {
    std::int32_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
        if (p[j] > p[best]) best = static_cast<std::int32_t>(j);
    }
    return best;
}

}  // namespace

metrics::MetricRecord evaluate(const Model& m, const std::vector<scenegen::Sample>& test,
                               std::int64_t batch_size, std::int64_t iteration) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test split");
    const TaskSet& tasks = m.cfg.task_set;
    std::vector<std::int32_t> seg_pred, seg_gt, wx_pred, wx_gt;
    std::vector<double> depth_pred, depth_gt, time_pred, time_gt;

    const std::int64_t n = static_cast<std::int64_t>(test.size());
    for (std::int64_t at = 0; at < n; at += batch_size) {
        std::vector<std::int64_t> idx;
        for (std::int64_t i = at; i < std::min(n, at + batch_size); ++i) idx.push_back(i);
        const Batch batch = make_batch(test, idx);
        const auto outputs = predict(m, batch.images);
        const std::int64_t b = static_cast<std::int64_t>(idx.size());

        if (tasks.count(TaskId::Seg)) {
            const Tensor& lg = outputs.at(TaskId::Seg);
            const std::int64_t k = lg.shape[3];
            const std::int64_t pixels = lg.size() / k;
            for (std::int64_t p = 0; p < pixels; ++p) {
                seg_pred.push_back(argmax_row(lg.data.data() + p * k, k));
            }
            seg_gt.insert(seg_gt.end(), batch.seg_ids.begin(), batch.seg_ids.end());
        }
        if (tasks.count(TaskId::Depth)) {
            const Tensor& dp = outputs.at(TaskId::Depth);
            depth_pred.insert(depth_pred.end(), dp.data.begin(), dp.data.end());
            depth_gt.insert(depth_gt.end(), batch.depth_r.data.begin(), batch.depth_r.data.end());
        }
        if (tasks.count(TaskId::Time)) {
            const Tensor& tm = outputs.at(TaskId::Time);
            for (std::int64_t i = 0; i < b; ++i) time_pred.push_back(tm[i]);
            time_gt.insert(time_gt.end(), batch.time_min.begin(), batch.time_min.end());
        }
        if (tasks.count(TaskId::Weather)) {
            const Tensor& lg = outputs.at(TaskId::Weather);
            const std::int64_t k = lg.shape[1];
            for (std::int64_t i = 0; i < b; ++i) {
                wx_pred.push_back(argmax_row(lg.data.data() + i * k, k));
            }
            wx_gt.insert(wx_gt.end(), batch.weather.begin(), batch.weather.end());
        }
    }

    metrics::MetricRecord rec;
    rec.iteration = iteration;
    if (tasks.count(TaskId::Seg)) {
        rec.miou = metrics::miou(seg_pred, seg_gt, static_cast<std::int32_t>(m.cfg.n_seg_classes));
    }
    if (tasks.count(TaskId::Depth)) rec.depth_rmse_r = metrics::depth_rmse(depth_pred, depth_gt);
    if (tasks.count(TaskId::Time)) rec.rmsctd_min = metrics::rmsctd(time_gt, time_pred);
    if (tasks.count(TaskId::Weather)) rec.weather_acc = metrics::accuracy(wx_pred, wx_gt);
    return rec;
}

TrainResult train(const ExperimentSpec& spec) {
    if (spec.tasks.empty()) throw std::invalid_argument("train: empty task set");
    spec.hyper.validate();
    if (!spec.data.train || spec.data.train->empty()) {
        throw std::runtime_error("train: missing training data");
    }
    if (!spec.data.test || spec.data.test->empty()) {
        throw std::runtime_error("train: missing test data");
    }
    if (spec.hyper.mode == WeightingMode::Single && spec.tasks.size() != 1) {
        throw std::invalid_argument("train: single mode requires exactly one task");
    }

    ModelConfig cfg = spec.model;
    cfg.task_set = spec.tasks;
    const auto& first = spec.data.train->front();
    if (first.h != cfg.input_h || first.w != cfg.input_w) {
        throw std::runtime_error("train: dataset resolution " + std::to_string(first.h) + "x" +
                                 std::to_string(first.w) + " does not match model input " +
                                 std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
    }

    TrainResult res;
    res.model = build_model(cfg, spec.hyper.seed);
    Model& model = res.model;
    TrainHistory& hist = res.history;

    const bool learned = spec.hyper.mode == WeightingMode::Learned;
    std::map<TaskId, double> coeffs;
    if (spec.hyper.mode == WeightingMode::Fixed) {
        for (TaskId t : spec.tasks) {
            auto it = spec.hyper.fixed_coeffs.find(t);
            coeffs[t] = it == spec.hyper.fixed_coeffs.end() ? 1.0 : it->second;
        }
    }

    for (TaskId t : spec.tasks) {
        hist.rows.push_back({0, task_name(t), "c", model.c.at(t)});
    }

    AdamState theta_state, c_state;
    Hyperparams c_hyper = spec.hyper;
    c_hyper.lr = spec.hyper.c_lr.value_or(spec.hyper.lr);

    BatchSampler sampler(spec.hyper.seed, static_cast<std::int64_t>(spec.data.train->size()));

    for (std::int64_t iter = 1; iter <= spec.hyper.max_iters; ++iter) {
        const auto idx = sampler.batch(iter, spec.hyper.batch_size);
        const Batch batch = make_batch(*spec.data.train, idx);

        Graph g;
        const ForwardNodes fn = model_forward(g, model, batch.images);
        const auto raw = build_raw_losses(g, fn, batch, spec.tasks, spec.hyper.time_scale);

        NodeId total = -1;
        std::map<TaskId, NodeId> c_nodes;
        losses::CombinedLoss cl;
        try {
            switch (spec.hyper.mode) {
                case WeightingMode::Single:
                    total = raw.begin()->second;
                    break;
                case WeightingMode::Fixed:
                    total = losses::combine_fixed(g, raw, coeffs);
                    break;
                case WeightingMode::Learned: {
                    for (TaskId t : spec.tasks) {
                        Tensor c = Tensor::scalar(model.c.at(t));
                        c.requires_grad = true;
                        c_nodes[t] = g.input(std::move(c));
                    }
                    cl = losses::combine_learned(g, raw, c_nodes, spec.hyper.reg);
                    total = cl.combined;
                    break;
                }
            }
        } catch (const std::invalid_argument& e) {
            throw DivergenceError(iter, e.what());
        }

        const double combined = g.value(total).item();
        if (!std::isfinite(combined)) {
            throw DivergenceError(iter, "non-finite combined loss");
        }

        hist.rows.push_back({iter, "all", "combined", combined});
        for (TaskId t : spec.tasks) {
            hist.rows.push_back({iter, task_name(t), "raw_loss", g.value(raw.at(t)).item()});
        }
        if (spec.hyper.mode == WeightingMode::Fixed) {
            for (TaskId t : spec.tasks) {
                hist.rows.push_back({iter, task_name(t), "weighted_loss",
                                     g.value(raw.at(t)).item() * coeffs.at(t)});
            }
        } else if (learned) {
            for (TaskId t : spec.tasks) {
                hist.rows.push_back({iter, task_name(t), "weighted_loss",
                                     g.value(cl.weighted.at(t)).item()});
            }
        }

        auto grads = g.backward(total);

        std::map<std::string, Tensor> theta_grads;
        for (const auto& [name, id] : fn.params) {
            auto it = grads.find(id);
            if (it != grads.end()) theta_grads.emplace(name, std::move(it->second));
        }
        try {
            adam_step(model.params, theta_grads, theta_state, spec.hyper);
        } catch (const std::runtime_error& e) {
            throw DivergenceError(iter, e.what());
        }

        if (learned) {
            std::map<std::string, Tensor> c_params, c_grads;
            for (TaskId t : spec.tasks) {
                c_params.emplace("c." + task_name(t), Tensor::scalar(model.c.at(t)));
                auto it = grads.find(c_nodes.at(t));
                if (it != grads.end()) c_grads.emplace("c." + task_name(t), std::move(it->second));
            }
            try {
                adam_step(c_params, c_grads, c_state, c_hyper);
            } catch (const std::runtime_error& e) {
                throw DivergenceError(iter, e.what());
            }
            for (TaskId t : spec.tasks) {
                double c = c_params.at("c." + task_name(t)).item();
                if (spec.hyper.clamp_c) {
                    const double mag = std::min(1e3, std::max(1e-3, std::abs(c)));
                    c = std::copysign(mag, c == 0.0 ? 1.0 : c);
                }
                model.c[t] = c;
                hist.rows.push_back({iter, task_name(t), "c", c});
            }
        }

        if (iter % spec.hyper.snapshot_every == 0 || iter == spec.hyper.max_iters) {
            const auto rec = evaluate(model, *spec.data.test, spec.hyper.batch_size, iter);
            hist.snapshots.push_back(rec);
            for (TaskId t : spec.tasks) {
                hist.rows.push_back({iter, task_name(t), metrics::metric_name(t), *rec.by_task(t)});
            }
        }
    }
    return res;
}

std::vector<TaskSet> matrix_task_sets() {
    using T = TaskId;
    return {
        {T::Seg},
        {T::Depth},
        {T::Time},
        {T::Weather},
        {T::Seg, T::Depth},
        {T::Seg, T::Depth, T::Time},
        {T::Seg, T::Depth, T::Weather},
        {T::Seg, T::Depth, T::Time, T::Weather},
    };
}

std::vector<ExperimentOutcome> run_matrix(const ModelConfig& base_model,
                                          const Hyperparams& base_hyper, DataRef data, int jobs) {
    const auto sets = matrix_task_sets();
    std::vector<ExperimentOutcome> outcomes(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) outcomes[i].tasks = sets[i];

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= sets.size()) return;
            ExperimentOutcome& out = outcomes[i];
            try {
                ExperimentSpec spec;
                spec.tasks = sets[i];
                spec.model = base_model;
                spec.hyper = base_hyper;
                if (sets[i].size() == 1) {
                    spec.hyper.mode = WeightingMode::Single;
                } else if (base_hyper.mode == WeightingMode::Single) {
                    spec.hyper.mode = WeightingMode::Learned;
                }
                spec.data = data;
                out.hyper = spec.hyper;
                TrainResult r = train(spec);
                out.history = std::move(r.history);
                out.model = std::move(r.model);
                out.ok = true;
            } catch (const std::exception& e) {
                out.ok = false;
                out.error = e.what();
            }
        }
    };

    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return outcomes;
}

std::string results_table_csv(
    const std::vector<std::pair<TaskSet, const TrainHistory*>>& runs) {
    std::ostringstream os;
    os << "task_set,miou,depth_rmse_r,rmsctd_min,weather_acc\n";
    const TaskId order[4] = {TaskId::Seg, TaskId::Depth, TaskId::Time, TaskId::Weather};
    for (const auto& [tasks, hist] : runs) {
        os << task_set_name(tasks);
        for (TaskId t : order) {
            os << ",";
            if (!tasks.count(t)) {
                os << "-";
            } else if (!hist || hist->snapshots.empty()) {
                os << "nan";
            } else {
                const auto v = hist->snapshots.back().by_task(t);
                os << (v ? format_g17(*v) : "nan");
            }
        }
        os << "\n";
    }
    return os.str();
}

void write_curve_file(const std::filesystem::path& path, const TrainHistory& history,
                      const TaskSet& tasks) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os << "# iteration";
    for (TaskId t : tasks) os << " " << metrics::metric_name(t);
    os << "\n";

    // Collect metric rows by iteration, preserving iteration order.
    std::vector<std::int64_t> iters;
    std::map<std::int64_t, std::map<TaskId, double>> by_iter;
    for (const auto& r : history.rows) {
        for (TaskId t : tasks) {
            if (r.series == metrics::metric_name(t)) {
                if (!by_iter.count(r.iteration)) iters.push_back(r.iteration);
                by_iter[r.iteration][t] = r.value;
            }
        }
    }
    for (std::int64_t it : iters) {
        os << it;
        for (TaskId t : tasks) {
            const auto& m = by_iter[it];
            auto f = m.find(t);
            os << " " << (f == m.end() ? "nan" : format_g17(f->second));
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace auxmtl
