// Model assembly for the four downstream architectures:
//   fcn    - dense 128 / 64 head on a pooled embedding
//   cnn    - three conv1d(64,128,256,k=3)+ReLU+pool2 stages, then the head
//   concat - per-view conv stacks, concatenation, then the head
//   thama  - per-view conv stacks, shared-space projection, bilinear fusion
//            through a trainable 3-way core, element-wise squaring, head
// plus parameter counting and the CKPT1 checkpoint container.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "thama/executor.hpp"
#include "thama/graph.hpp"
#include "thama/tensor.hpp"

namespace thama::models {

enum class ModelKind { Fcn, Cnn, Concat, Thama };
enum class CoreKind { Full, Factored };

std::string to_string(ModelKind kind);
std::string to_string(CoreKind core);
ModelKind parse_model_kind(const std::string& s);
CoreKind parse_core_kind(const std::string& s);
bool is_fusion(ModelKind kind);
bool has_conv(ModelKind kind);

struct ModelSpec {
    ModelKind kind = ModelKind::Fcn;
    std::size_t d1 = 0;
    std::size_t d2 = 0; // fusion kinds only
    std::size_t d_f = 96;
    CoreKind core = CoreKind::Full;
    std::array<std::size_t, 3> ranks{32, 32, 32};
    float dropout = 0.3f;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static ModelSpec from_json(const std::string& text);
    bool operator==(const ModelSpec&) const = default;
};

struct GraphHandles {
    int x1 = -1;
    int x2 = -1;
    int labels = -1;
    int prob = -1;
    int loss = -1;
};

template <typename S>
struct ModelT {
    ModelSpec spec;
    std::unique_ptr<ad::Graph> graph;
    std::unique_ptr<ad::Executor<S>> exec;
    GraphHandles io;

    ModelT clone() const {
        ModelT m;
        m.spec = spec;
        m.graph = std::make_unique<ad::Graph>(*graph);
        m.exec = std::make_unique<ad::Executor<S>>(*exec);
        m.io = io;
        // the copied executor must point at the copied graph
        m.exec->rebind_graph(*m.graph);
        return m;
    }
};

using ModelInstance = ModelT<float>;
using ModelInstance64 = ModelT<double>;

// Builds the graph and initializes parameters deterministically from the
// spec seed. Two builds from equal specs are bitwise identical.
ModelInstance build_model(const ModelSpec& spec);
ModelInstance64 build_model_f64(const ModelSpec& spec);

// Flattened width after the three conv+pool stages: 256 * floor3(d / 8).
std::size_t flatten_dim(std::size_t d);

// One probability per record, dropout off, deterministic.
std::vector<float> predict_batch(ModelInstance& model, const Tensor& view1,
                                 const Tensor* view2 = nullptr);

template <typename S>
std::size_t param_count(const ModelT<S>& model) {
    std::size_t n = 0;
    for (int pid : model.graph->params()) n += shape_numel(model.graph->node(pid).shape);
    return n;
}

// Closed-form count derived from the spec alone; must equal param_count of a
// built model exactly (cross-checked in the tests).
std::size_t analytic_param_count(const ModelSpec& spec);

struct CheckpointMeta {
    double best_dev_loss = 0.0;
    std::int64_t epoch = -1;
    std::string train_domain;
};

// CKPT1: "CKPT", version u32, length-prefixed UTF-8 JSON {spec, meta}, then
// one record per parameter in graph order: name, rank u32, extents u32...,
// little-endian f32 payload. Parameter names and shapes are derivable from
// the spec, which is how the loader validates the file.
void save_checkpoint(const ModelInstance& model, const CheckpointMeta& meta,
                     const std::string& path);
ModelInstance load_checkpoint(const std::string& path,
                              std::optional<ModelKind> expect_kind = std::nullopt);
CheckpointMeta read_checkpoint_meta(const std::string& path);

} // namespace thama::models
