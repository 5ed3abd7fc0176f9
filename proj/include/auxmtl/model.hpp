#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "auxmtl/graph.hpp"
#include "auxmtl/losses.hpp"
#include "json.hpp"

namespace auxmtl {

struct ModelConfig {
    std::int64_t input_h = 64;
    std::int64_t input_w = 48;
    std::vector<std::int64_t> encoder_channels = {16, 32, 64, 64};
    std::vector<std::int64_t> aspp_rates = {1, 2, 4};
    std::int64_t output_stride = 16;
    std::int64_t n_seg_classes = 3;
    std::int64_t n_weather_classes = 11;
    std::int64_t head_channels = 64;  // seg/depth decoder width
    TaskSet task_set;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Shared encoder plus one decoder per active task. Parameters are named
// tensors; c holds the learnable per-task loss weights, initialized to
// 1/|T|.
struct Model {
    ModelConfig cfg;
    std::map<std::string, Tensor> params;
    std::map<TaskId, double> c;
};

Model build_model(const ModelConfig& cfg, std::uint64_t seed);

// Nodes created by one forward pass: the parameter leaves (requires_grad)
// and the per-task outputs. Output shapes:
//   seg     (B, H, W, n_seg_classes)   logits, upsampled by output_stride
//   depth   (B, H, W)                  r-space via sigmoid
//   weather (B, n_weather_classes)     logits
//   time    (B, 1)                     raw minutes, unbounded
struct ForwardNodes {
    std::map<std::string, NodeId> params;
    std::map<TaskId, NodeId> outputs;
};

ForwardNodes model_forward(Graph& g, const Model& m, const Tensor& images);

// Convenience inference entry point over a fresh graph.
std::map<TaskId, Tensor> predict(const Model& m, const Tensor& images);

// Checkpoint container: magic "AMTC", version, config JSON, c values and
// f64 parameter blobs with shape prefixes (docs/checkpoint_format.md).
void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace auxmtl
