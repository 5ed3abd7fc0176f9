#include "auxmtl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "auxmtl/kernels.hpp"
#include "auxmtl/util.hpp"

namespace auxmtl {

void ModelConfig::validate() const {
    if (task_set.empty()) throw std::invalid_argument("model config: empty task set");
    if (encoder_channels.empty()) throw std::invalid_argument("model config: no encoder stages");
    const std::int64_t stages = static_cast<std::int64_t>(encoder_channels.size());
    if (output_stride != (std::int64_t{1} << stages)) {
        throw std::invalid_argument("model config: output stride " + std::to_string(output_stride) +
                                    " does not match " + std::to_string(stages) +
                                    " stride-2 encoder stages");
    }
    if (input_h % output_stride != 0 || input_w % output_stride != 0) {
        throw std::invalid_argument("model config: input " + std::to_string(input_h) + "x" +
                                    std::to_string(input_w) + " not divisible by output stride " +
                                    std::to_string(output_stride));
    }
    if (aspp_rates.empty()) throw std::invalid_argument("model config: empty ASPP rates");
    for (std::int64_t r : aspp_rates) {
        if (r < 1) throw std::invalid_argument("model config: ASPP rate must be >= 1");
    }
    if (n_seg_classes < 2) throw std::invalid_argument("model config: need >= 2 seg classes");
    if (task_set.count(TaskId::Weather) && n_weather_classes != 11) {
        throw std::invalid_argument("model config: weather head requires 11 classes, got " +
                                    std::to_string(n_weather_classes));
    }
    if (head_channels < 1) throw std::invalid_argument("model config: head channels must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
    std::vector<int> tasks;
    for (TaskId t : task_set) tasks.push_back(static_cast<int>(t));
    return nlohmann::json{{"input_h", input_h},
                          {"input_w", input_w},
                          {"encoder_channels", encoder_channels},
                          {"aspp_rates", aspp_rates},
                          {"output_stride", output_stride},
                          {"n_seg_classes", n_seg_classes},
                          {"n_weather_classes", n_weather_classes},
                          {"head_channels", head_channels},
                          {"tasks", tasks}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_h = j.value("input_h", c.input_h);
    c.input_w = j.value("input_w", c.input_w);
    if (j.contains("encoder_channels")) {
        c.encoder_channels = j.at("encoder_channels").get<std::vector<std::int64_t>>();
    }
    if (j.contains("aspp_rates")) c.aspp_rates = j.at("aspp_rates").get<std::vector<std::int64_t>>();
    c.output_stride = j.value("output_stride", c.output_stride);
    c.n_seg_classes = j.value("n_seg_classes", c.n_seg_classes);
    c.n_weather_classes = j.value("n_weather_classes", c.n_weather_classes);
    c.head_channels = j.value("head_channels", c.head_channels);
    if (j.contains("tasks")) {
        for (int t : j.at("tasks").get<std::vector<int>>()) c.task_set.insert(task_from_index(t));
    }
    return c;
}

namespace {

// Pool output extent with border-clipped windows, mirroring Pool2dDims.
std::int64_t pooled_extent(std::int64_t in, std::int64_t window, std::int64_t stride) {
    if (in <= window) return 1;
    std::int64_t o = (in - window + stride - 1) / stride + 1;
    if ((o - 1) * stride >= in) --o;
    return o;
}

struct Builder {
    Rng rng;
    std::map<std::string, Tensor>& params;

    void conv(const std::string& name, std::int64_t kh, std::int64_t kw, std::int64_t cin,
              std::int64_t cout) {
        Tensor w({kh, kw, cin, cout});
        const double sd = std::sqrt(2.0 / static_cast<double>(kh * kw * cin));
        for (auto& v : w.data) v = rng.normal(0.0, sd);
        params.emplace(name + ".w", std::move(w));
        params.emplace(name + ".b", Tensor({cout}, 0.0));
    }

    void fc(const std::string& name, std::int64_t fin, std::int64_t fout) {
        Tensor w({fin, fout});
        const double sd = std::sqrt(2.0 / static_cast<double>(fin));
        for (auto& v : w.data) v = rng.normal(0.0, sd);
        params.emplace(name + ".w", std::move(w));
        params.emplace(name + ".b", Tensor({fout}, 0.0));
    }
};

// The scalar heads share a topology: 5x5 conv, pool, 3x3 conv, pool,
// 1x1 conv, then a fully connected layer. Only the first pool differs
// between the weather and time branches.
struct ScalarHeadSpec {
    std::int64_t pool1_window, pool1_stride;
    std::int64_t fc_out;
};

ScalarHeadSpec scalar_head_spec(TaskId t, const ModelConfig& cfg) {
    if (t == TaskId::Weather) return {3, 3, cfg.n_weather_classes};
    return {5, 5, 1};
}

// Spatial extent of the scalar-head feature map right before flattening.
std::pair<std::int64_t, std::int64_t> scalar_head_extent(const ModelConfig& cfg,
                                                         const ScalarHeadSpec& hs) {
    std::int64_t h = cfg.input_h / cfg.output_stride;
    std::int64_t w = cfg.input_w / cfg.output_stride;
    h = pooled_extent(h, hs.pool1_window, hs.pool1_stride);
    w = pooled_extent(w, hs.pool1_window, hs.pool1_stride);
    h = pooled_extent(h, 3, 3);
    w = pooled_extent(w, 3, 3);
    return {h, w};
}

}  // namespace

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Builder b{Rng::stream(seed, 0xA11, 0), m.params};

    std::int64_t cin = 3;
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
        b.conv("enc.stage" + std::to_string(i), 3, 3, cin, cfg.encoder_channels[i]);
        cin = cfg.encoder_channels[i];
    }
    const std::int64_t cenc = cin;
    for (std::int64_t r : cfg.aspp_rates) {
        b.conv("aspp.rate" + std::to_string(r), 3, 3, cenc, cenc);
    }
    b.conv("aspp.fuse", 1, 1, cenc * static_cast<std::int64_t>(cfg.aspp_rates.size()), cenc);

    const std::int64_t hc = cfg.head_channels;
    for (TaskId t : cfg.task_set) {
        const std::string h = "head." + task_name(t);
        if (t == TaskId::Seg || t == TaskId::Depth) {
            b.conv(h + ".conv1", 3, 3, cenc, hc);
            b.conv(h + ".conv2", 3, 3, hc, hc);
            b.conv(h + ".proj", 1, 1, hc, t == TaskId::Seg ? cfg.n_seg_classes : 1);
        } else {
            const auto hs = scalar_head_spec(t, cfg);
            b.conv(h + ".conv1", 5, 5, cenc, hc);
            b.conv(h + ".conv2", 3, 3, hc, hc);
            b.conv(h + ".proj", 1, 1, hc, hc);
            const auto [ph, pw] = scalar_head_extent(cfg, hs);
            b.fc(h + ".fc", ph * pw * hc, hs.fc_out);
        }
    }

    const double c0 = 1.0 / static_cast<double>(cfg.task_set.size());
    for (TaskId t : cfg.task_set) m.c[t] = c0;
    return m;
}

ForwardNodes model_forward(Graph& g, const Model& m, const Tensor& images) {
    const ModelConfig& cfg = m.cfg;
    if (images.shape.size() != 4 || images.shape[1] != cfg.input_h ||
        images.shape[2] != cfg.input_w || images.shape[3] != 3) {
        throw std::invalid_argument("model_forward: batch shape " + shape_str(images.shape) +
                                    " does not match configured input (B," +
                                    std::to_string(cfg.input_h) + "," + std::to_string(cfg.input_w) +
                                    ",3)");
    }
    const std::int64_t bsz = images.shape[0];

    ForwardNodes fn;
    for (const auto& [name, t] : m.params) {
        Tensor leaf = t;
        leaf.requires_grad = true;
        fn.params[name] = g.input(std::move(leaf));
    }
    auto P = [&](const std::string& name) {
        auto it = fn.params.find(name);
        if (it == fn.params.end()) throw std::logic_error("missing parameter " + name);
        return it->second;
    };

    NodeId x = g.constant(images);
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
        const std::string s = "enc.stage" + std::to_string(i);
        x = ops::relu(g, ops::conv2d(g, x, P(s + ".w"), P(s + ".b"), 2, 1, 1));
    }
    std::vector<NodeId> branches;
    for (std::int64_t r : cfg.aspp_rates) {
        const std::string s = "aspp.rate" + std::to_string(r);
        branches.push_back(ops::relu(g, ops::conv2d(g, x, P(s + ".w"), P(s + ".b"), 1, r, r)));
    }
    NodeId feat = ops::concat(g, branches, 3);
    feat = ops::relu(g, ops::conv2d(g, feat, P("aspp.fuse.w"), P("aspp.fuse.b"), 1, 0, 1));

    for (TaskId t : cfg.task_set) {
        const std::string h = "head." + task_name(t);
        if (t == TaskId::Seg || t == TaskId::Depth) {
            NodeId y = ops::relu(g, ops::conv2d(g, feat, P(h + ".conv1.w"), P(h + ".conv1.b"), 1, 1, 1));
            y = ops::relu(g, ops::conv2d(g, y, P(h + ".conv2.w"), P(h + ".conv2.b"), 1, 1, 1));
            y = ops::conv2d(g, y, P(h + ".proj.w"), P(h + ".proj.b"), 1, 0, 1);
            y = ops::bilinear_upsample(g, y, cfg.output_stride);
            if (t == TaskId::Depth) {
                y = ops::sigmoid(g, y);
                y = ops::reshape(g, y, {bsz, cfg.input_h, cfg.input_w});
            }
            fn.outputs[t] = y;
        } else {
            const auto hs = scalar_head_spec(t, cfg);
            NodeId y = ops::relu(g, ops::conv2d(g, feat, P(h + ".conv1.w"), P(h + ".conv1.b"), 1, 2, 1));
            y = ops::max_pool2d(g, y, hs.pool1_window, hs.pool1_stride);
            y = ops::relu(g, ops::conv2d(g, y, P(h + ".conv2.w"), P(h + ".conv2.b"), 1, 1, 1));
            y = ops::max_pool2d(g, y, 3, 3);
            y = ops::conv2d(g, y, P(h + ".proj.w"), P(h + ".proj.b"), 1, 0, 1);
            const Tensor& v = g.value(y);
            y = ops::reshape(g, y, {bsz, v.shape[1] * v.shape[2] * v.shape[3]});
            fn.outputs[t] = ops::fully_connected(g, y, P(h + ".fc.w"), P(h + ".fc.b"));
        }
    }
    return fn;
}

std::map<TaskId, Tensor> predict(const Model& m, const Tensor& images) {
    Graph g;
    const ForwardNodes fn = model_forward(g, m, images);
    std::map<TaskId, Tensor> out;
    for (const auto& [t, id] : fn.outputs) out[t] = g.value(id);
    return out;
}

static_assert(std::endian::native == std::endian::little,
              "checkpoints are written in native byte order and documented as little-endian");

namespace {

constexpr char kCkptMagic[4] = {'A', 'M', 'T', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& m) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(kCkptMagic, 4);
    put_u32(os, kCkptVersion);
    put_string(os, m.cfg.to_json().dump());

    nlohmann::json cj;
    for (const auto& [t, v] : m.c) cj[task_name(t)] = v;
    put_string(os, cj.dump());

    put_u32(os, static_cast<std::uint32_t>(m.params.size()));
    for (const auto& [name, t] : m.params) {
        put_string(os, name);
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (std::int64_t d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path.string());
    }
    const std::uint32_t version = get_u32(is);
    if (version != kCkptVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    Model m;
    m.cfg = ModelConfig::from_json(nlohmann::json::parse(get_string(is)));
    const auto cj = nlohmann::json::parse(get_string(is));
    for (TaskId t : m.cfg.task_set) m.c[t] = cj.at(task_name(t)).get<double>();

    const std::uint32_t n_params = get_u32(is);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = get_string(is);
        const std::uint32_t rank = get_u32(is);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_u32(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
        m.params.emplace(name, std::move(t));
    }
    return m;
}

}  // namespace auxmtl
