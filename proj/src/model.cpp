#include "thama/model.hpp"

#include <fstream>

#include <json.hpp>

#include "thama/bytes.hpp"
#include "thama/nn.hpp"
#include "thama/rng.hpp"

namespace thama::models {

using json = nlohmann::json;

namespace {

constexpr std::uint32_t kCkptVersion = 1;
constexpr char kCkptMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::array<std::size_t, 3> kConvChannels{64, 128, 256};
constexpr std::size_t kKernelWidth = 3;
constexpr std::size_t kHead1 = 128;
constexpr std::size_t kHead2 = 64;

// Collects the graph plus the deterministic initial parameter values. Values
// are drawn in double and narrowed for the float build so both precisions
// consume the identical random stream.
struct Builder {
    ad::Graph& g;
    Rng& rng;
    std::vector<std::pair<std::string, Tensor64>> init;

    int he_param(const std::string& name, Shape shape, std::size_t fan_in) {
        const int id = g.param(name, shape);
        Tensor64 t(g.node(id).shape);
        nn::fill_he_uniform(t, fan_in, rng);
        init.emplace_back(name, std::move(t));
        return id;
    }

    int glorot_param(const std::string& name, Shape shape, std::size_t fan_in,
                     std::size_t fan_out) {
        const int id = g.param(name, shape);
        Tensor64 t(g.node(id).shape);
        nn::fill_glorot_uniform(t, fan_in, fan_out, rng);
        init.emplace_back(name, std::move(t));
        return id;
    }

    int zero_param(const std::string& name, Shape shape) {
        const int id = g.param(name, shape);
        init.emplace_back(name, Tensor64(g.node(id).shape));
        return id;
    }

    // conv1d(k=3) + ReLU + pool(2), three stages, then flatten channel-major.
    int conv_block(int x, std::size_t d, const std::string& prefix) {
        int c = g.reshape(x, {1, d});
        std::size_t in_ch = 1;
        for (std::size_t i = 0; i < kConvChannels.size(); ++i) {
            const std::size_t out_ch = kConvChannels[i];
            const std::string stem = prefix + ".conv" + std::to_string(i + 1);
            const int k = he_param(stem + ".k", {out_ch, in_ch, kKernelWidth},
                                   in_ch * kKernelWidth);
            const int b = zero_param(stem + ".b", {out_ch});
            c = g.maxpool1d(g.relu(g.conv1d(c, k, b)), 2);
            g.set_label(c, stem);
            in_ch = out_ch;
        }
        const Shape& s = g.node(c).shape;
        return g.reshape(c, {s[0] * s[1]});
    }

    // dense(128)+ReLU+dropout, dense(64)+ReLU+dropout, dense(1)+sigmoid.
    int fcn_head(int x, std::size_t in_dim, float dropout_rate) {
        const int w1 = he_param("fcn.dense1.w", {in_dim, kHead1}, in_dim);
        const int b1 = zero_param("fcn.dense1.b", {kHead1});
        int h = g.dropout(g.relu(g.add(g.matmul(x, w1), b1)), dropout_rate);
        const int w2 = he_param("fcn.dense2.w", {kHead1, kHead2}, kHead1);
        const int b2 = zero_param("fcn.dense2.b", {kHead2});
        h = g.dropout(g.relu(g.add(g.matmul(h, w2), b2)), dropout_rate);
        const int w3 = glorot_param("fcn.out.w", {kHead2, 1}, kHead2, 1);
        const int b3 = zero_param("fcn.out.b", {1});
        const int logit = g.add(g.matmul(h, w3), b3);
        g.set_label(logit, "logit");
        return logit;
    }
};

struct Built {
    std::unique_ptr<ad::Graph> graph;
    GraphHandles io;
    std::vector<std::pair<std::string, Tensor64>> init;
};

Built build_graph(const ModelSpec& spec) {
    spec.validate();
    Built out;
    out.graph = std::make_unique<ad::Graph>();
    ad::Graph& g = *out.graph;
    Rng rng(spec.seed);
    Builder b{g, rng, {}};
    GraphHandles& io = out.io;

    io.x1 = g.input("x1", {spec.d1});
    if (is_fusion(spec.kind)) io.x2 = g.input("x2", {spec.d2});

    int head_in = -1;
    switch (spec.kind) {
        case ModelKind::Fcn:
            head_in = io.x1;
            break;
        case ModelKind::Cnn:
            head_in = b.conv_block(io.x1, spec.d1, "view1");
            break;
        case ModelKind::Concat: {
            const int f1 = b.conv_block(io.x1, spec.d1, "view1");
            const int f2 = b.conv_block(io.x2, spec.d2, "view2");
            head_in = g.concat(f1, f2);
            break;
        }
        case ModelKind::Thama: {
            const int f1 = b.conv_block(io.x1, spec.d1, "view1");
            const int f2 = b.conv_block(io.x2, spec.d2, "view2");
            const std::size_t d1p = g.node(f1).shape[0];
            const std::size_t d2p = g.node(f2).shape[0];
            const int w1 = b.glorot_param("proj.w1", {d1p, spec.d_f}, d1p, spec.d_f);
            const int w2 = b.glorot_param("proj.w2", {d2p, spec.d_f}, d2p, spec.d_f);
            const int p1 = g.matmul(f1, w1);
            const int p2 = g.matmul(f2, w2);
            int z = -1;
            if (spec.core == CoreKind::Full) {
                const int core = b.glorot_param("core.t", {spec.d_f, spec.d_f, spec.d_f},
                                                spec.d_f * spec.d_f, spec.d_f);
                z = g.bilinear(p1, p2, core);
            } else {
                const auto [r1, r2, r3] = spec.ranks;
                const int fa = b.glorot_param("core.a", {spec.d_f, r1}, spec.d_f, r1);
                const int fb = b.glorot_param("core.b", {spec.d_f, r2}, spec.d_f, r2);
                const int fg = b.glorot_param("core.g", {r1, r2, r3}, r1 * r2, r3);
                const int fc = b.glorot_param("core.c", {spec.d_f, r3}, r3, spec.d_f);
                const int q1 = g.matmul(p1, fa);
                const int q2 = g.matmul(p2, fb);
                const int mid = g.bilinear(q1, q2, fg);
                z = g.matmul(mid, fc, /*transpose_w=*/true);
            }
            g.set_label(z, "fused");
            head_in = g.mul(z, z); // element-wise square of the fused vector
            g.set_label(head_in, "fused.sq");
            break;
        }
    }

    // The loss differences the logit directly (stable softplus form); the
    // probability head is what prediction reads.
    const int logit = b.fcn_head(head_in, g.node(head_in).shape[0], spec.dropout);
    io.prob = g.sigmoid(logit);
    g.set_label(io.prob, "prob");
    io.labels = g.input("y", {1});
    io.loss = g.bce_logits(logit, io.labels);
    g.set_label(io.loss, "loss");
    out.init = std::move(b.init);
    return out;
}

template <typename S>
ModelT<S> build_t(const ModelSpec& spec) {
    Built built = build_graph(spec);
    ModelT<S> m;
    m.spec = spec;
    m.graph = std::move(built.graph);
    m.exec = std::make_unique<ad::Executor<S>>(*m.graph);
    m.io = built.io;
    for (const auto& [name, value] : built.init)
        m.exec->set_param(name, tensor_cast<S>(value));
    return m;
}

} // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::Fcn: return "fcn";
        case ModelKind::Cnn: return "cnn";
        case ModelKind::Concat: return "concat";
        case ModelKind::Thama: return "thama";
    }
    return "?";
}

std::string to_string(CoreKind core) {
    return core == CoreKind::Full ? "full" : "factored";
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "fcn") return ModelKind::Fcn;
    if (s == "cnn") return ModelKind::Cnn;
    if (s == "concat") return ModelKind::Concat;
    if (s == "thama") return ModelKind::Thama;
    throw ConfigError("unknown model kind '" + s + "'");
}

CoreKind parse_core_kind(const std::string& s) {
    if (s == "full") return CoreKind::Full;
    if (s == "factored") return CoreKind::Factored;
    throw ConfigError("unknown core kind '" + s + "'");
}

bool is_fusion(ModelKind kind) {
    return kind == ModelKind::Concat || kind == ModelKind::Thama;
}

bool has_conv(ModelKind kind) { return kind != ModelKind::Fcn; }

void ModelSpec::validate() const {
    if (d1 < 1) throw ConfigError("model: d1 must be positive");
    if (has_conv(kind) && d1 < 8)
        throw ConfigError("model: d1 = " + std::to_string(d1) +
                          " cannot survive three pool-2 stages (need d >= 8)");
    if (is_fusion(kind)) {
        if (d2 < 8)
            throw ConfigError("model: fusion kinds require d2 >= 8, got " +
                              std::to_string(d2));
    } else if (d2 != 0) {
        throw ConfigError("model: d2 is only meaningful for fusion kinds");
    }
    if (kind == ModelKind::Thama) {
        if (d_f < 1) throw ConfigError("model: d_f must be positive");
        if (core == CoreKind::Factored) {
            for (std::size_t r : ranks)
                if (r < 1 || r > d_f)
                    throw ConfigError("model: factored ranks must lie in [1, d_f]");
        }
    }
    if (dropout < 0.0f || dropout >= 1.0f)
        throw ConfigError("model: dropout rate must lie in [0, 1)");
}

std::string ModelSpec::to_json() const {
    json j;
    j["kind"] = models::to_string(kind);
    j["d1"] = d1;
    j["d2"] = d2;
    j["d_f"] = d_f;
    j["core"] = models::to_string(core);
    j["ranks"] = ranks;
    j["dropout"] = dropout;
    j["seed"] = seed;
    return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model spec is not valid JSON: ") + e.what());
    }
    try {
        ModelSpec s;
        s.kind = parse_model_kind(j.at("kind").get<std::string>());
        s.d1 = j.at("d1").get<std::size_t>();
        s.d2 = j.at("d2").get<std::size_t>();
        s.d_f = j.at("d_f").get<std::size_t>();
        s.core = parse_core_kind(j.at("core").get<std::string>());
        s.ranks = j.at("ranks").get<std::array<std::size_t, 3>>();
        s.dropout = j.at("dropout").get<float>();
        s.seed = j.at("seed").get<std::uint64_t>();
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("model spec JSON missing fields: ") + e.what());
    }
}

ModelInstance build_model(const ModelSpec& spec) { return build_t<float>(spec); }
ModelInstance64 build_model_f64(const ModelSpec& spec) { return build_t<double>(spec); }

std::size_t flatten_dim(std::size_t d) {
    return kConvChannels.back() * (d / 2 / 2 / 2);
}

std::vector<float> predict_batch(ModelInstance& model, const Tensor& view1,
                                 const Tensor* view2) {
    const bool fusion = is_fusion(model.spec.kind);
    if (fusion && view2 == nullptr)
        throw ShapeError("predict: model kind " + to_string(model.spec.kind) +
                         " requires two views");
    if (!fusion && view2 != nullptr)
        throw ShapeError("predict: model kind " + to_string(model.spec.kind) +
                         " takes a single view");
    if (view1.rank() != 2 || view1.extent(1) != model.spec.d1)
        throw ShapeError("predict: view 1 must be [batch x " +
                         std::to_string(model.spec.d1) + "], got " +
                         shape_str(view1.shape()));
    if (view2 != nullptr) {
        if (view2->rank() != 2 || view2->extent(1) != model.spec.d2)
            throw ShapeError("predict: view 2 must be [batch x " +
                             std::to_string(model.spec.d2) + "], got " +
                             shape_str(view2->shape()));
        if (view2->extent(0) != view1.extent(0))
            throw ShapeError("predict: views disagree on batch size");
    }
    model.exec->bind("x1", view1);
    if (view2 != nullptr) model.exec->bind("x2", *view2);
    model.exec->forward({model.io.prob}, ad::Mode::Inference);
    const auto vals = model.exec->value(model.io.prob);
    return std::vector<float>(vals.begin(), vals.end());
}

std::size_t analytic_param_count(const ModelSpec& spec) {
    spec.validate();
    const auto conv_block = [] {
        std::size_t n = 0;
        std::size_t in_ch = 1;
        for (std::size_t out_ch : kConvChannels) {
            n += out_ch * in_ch * kKernelWidth + out_ch;
            in_ch = out_ch;
        }
        return n;
    }();
    const auto head = [](std::size_t in) {
        return in * kHead1 + kHead1 + kHead1 * kHead2 + kHead2 + kHead2 + 1;
    };
    switch (spec.kind) {
        case ModelKind::Fcn:
            return head(spec.d1);
        case ModelKind::Cnn:
            return conv_block + head(flatten_dim(spec.d1));
        case ModelKind::Concat:
            return 2 * conv_block + head(flatten_dim(spec.d1) + flatten_dim(spec.d2));
        case ModelKind::Thama: {
            const std::size_t f1 = flatten_dim(spec.d1);
            const std::size_t f2 = flatten_dim(spec.d2);
            std::size_t core = 0;
            if (spec.core == CoreKind::Full) {
                core = spec.d_f * spec.d_f * spec.d_f;
            } else {
                const auto [r1, r2, r3] = spec.ranks;
                core = r1 * r2 * r3 + spec.d_f * (r1 + r2 + r3);
            }
            return 2 * conv_block + (f1 + f2) * spec.d_f + core + head(spec.d_f);
        }
    }
    throw ConfigError("analytic_param_count: unknown kind");
}

// ---------------------------------------------------------------------------
// CKPT1
// ---------------------------------------------------------------------------

void save_checkpoint(const ModelInstance& model, const CheckpointMeta& meta,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kCkptMagic, 4);
    bytes::put_u32(os, kCkptVersion);
    json header;
    header["spec"] = json::parse(model.spec.to_json());
    header["meta"] = {{"best_dev_loss", meta.best_dev_loss},
                      {"epoch", meta.epoch},
                      {"train_domain", meta.train_domain}};
    bytes::put_str(os, header.dump());
    for (int pid : model.graph->params()) {
        const ad::Node& n = model.graph->node(pid);
        bytes::put_str(os, n.name);
        bytes::put_u32(os, static_cast<std::uint32_t>(n.shape.size()));
        for (std::size_t e : n.shape) bytes::put_u32(os, static_cast<std::uint32_t>(e));
        const auto v = model.exec->param_data(pid);
        bytes::put_f32_block(os, v.data(), v.size());
    }
    if (!os) throw DataError("checkpoint: short write to '" + path + "'");
}

namespace {

struct CkptHeader {
    ModelSpec spec;
    CheckpointMeta meta;
};

CkptHeader read_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw DataError("checkpoint '" + path + "': bad magic, not a CKPT1 file");
    const std::uint32_t version = bytes::get_u32(is, "checkpoint version");
    if (version != kCkptVersion)
        throw DataError("checkpoint '" + path + "': unsupported version " +
                        std::to_string(version));
    const std::string header_text = bytes::get_str(is, "checkpoint header", 1u << 20);
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw DataError("checkpoint '" + path + "': corrupt header JSON: " + e.what());
    }
    CkptHeader out;
    out.spec = ModelSpec::from_json(header.at("spec").dump());
    if (header.contains("meta")) {
        const json& m = header["meta"];
        out.meta.best_dev_loss = m.value("best_dev_loss", 0.0);
        out.meta.epoch = m.value("epoch", static_cast<std::int64_t>(-1));
        out.meta.train_domain = m.value("train_domain", std::string{});
    }
    return out;
}

} // namespace

ModelInstance load_checkpoint(const std::string& path,
                              std::optional<ModelKind> expect_kind) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
    const CkptHeader header = read_header(is, path);
    if (expect_kind && header.spec.kind != *expect_kind)
        throw DataError("checkpoint '" + path + "': spec mismatch, file holds a " +
                        to_string(header.spec.kind) + " model but a " +
                        to_string(*expect_kind) + " model was expected");
    ModelInstance model = build_model(header.spec);
    for (int pid : model.graph->params()) {
        const ad::Node& n = model.graph->node(pid);
        const std::string name = bytes::get_str(is, "checkpoint parameter name", 1u << 16);
        if (name != n.name)
            throw DataError("checkpoint '" + path + "': spec mismatch, expected parameter '" +
                            n.name + "' but found '" + name + "'");
        const std::uint32_t rank = bytes::get_u32(is, "checkpoint parameter rank");
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i)
            shape[i] = bytes::get_u32(is, "checkpoint parameter extent");
        if (shape != n.shape)
            throw DataError("checkpoint '" + path + "': parameter '" + name +
                            "' has shape " + shape_str(shape) + ", spec requires " +
                            shape_str(n.shape));
        auto dst = model.exec->param_data(pid);
        bytes::get_f32_block(is, dst.data(), dst.size(), "checkpoint parameter payload");
    }
    if (is.peek() != EOF)
        throw DataError("checkpoint '" + path + "': trailing bytes after parameters");
    return model;
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
    return read_header(is, path).meta;
}

} // namespace thama::models
