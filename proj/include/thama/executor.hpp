// Evaluates a Graph for a concrete batch: forward pass, reverse-mode
// backward pass, and a partial re-evaluation path used by the gradient
// checker (recomputes only the nodes downstream of a perturbed parameter).
//
// An Executor owns its parameter values and per-node workspaces; it is a
// single-writer object. Concurrent evaluation over disjoint batches uses one
// Executor copy per thread, which shares nothing mutable.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "thama/graph.hpp"
#include "thama/kernels.hpp"
#include "thama/rng.hpp"
#include "thama/tensor.hpp"

namespace thama::ad {

template <typename S>
using GradientMap = std::map<std::string, TensorT<S>>;

enum class Mode {
    Inference, // dropout is the identity
    Train,     // dropout samples fresh masks from the supplied stream
    Replay,    // dropout reuses the masks of the previous Train forward
};

template <typename S>
class Executor {
    template <typename T>
    friend class Executor;

public:
    explicit Executor(const Graph& graph) : g_(&graph), bufs_(graph.size()) {
        for (int id : g_->params()) {
            bufs_[idx(id)].v.assign(shape_numel(g_->node(id).shape), S(0));
        }
    }

    const Graph& graph() const { return *g_; }

    // Points a copied executor at the copied graph; the graphs must be equal.
    void rebind_graph(const Graph& graph) { g_ = &graph; }

    // Mirror of this executor at another scalar precision: parameters,
    // bindings, and dropout masks carry over, so a Replay forward evaluates
    // the same function. The gradient checker differences its loss in higher
    // precision than the gradients under test.
    template <typename T>
    Executor<T> cast_to() const {
        Executor<T> out(*g_);
        for (int pid : g_->params()) {
            const auto& src = bufs_[idx(pid)].v;
            auto& dst = out.bufs_[idx(pid)].v;
            dst.resize(src.size());
            for (std::size_t i = 0; i < src.size(); ++i)
                dst[i] = static_cast<T>(src[i]);
        }
        for (const auto& [id, binding] : bindings_) {
            typename Executor<T>::Binding b;
            b.batch = binding.batch;
            b.values.resize(binding.values.size());
            for (std::size_t i = 0; i < binding.values.size(); ++i)
                b.values[i] = static_cast<T>(binding.values[i]);
            out.bindings_.emplace(id, std::move(b));
        }
        for (std::size_t id = 0; id < g_->size(); ++id)
            out.bufs_[id].mask = bufs_[id].mask;
        return out;
    }

    // ---- parameters -------------------------------------------------------

    void set_param(const std::string& name, const TensorT<S>& value) {
        const int id = g_->find_param(name);
        if (id < 0) throw ShapeError("executor: unknown parameter '" + name + "'");
        if (value.shape() != g_->node(id).shape)
            throw ShapeError("executor: parameter '" + name + "' expects shape " +
                             shape_str(g_->node(id).shape) + ", got " +
                             shape_str(value.shape()));
        bufs_[idx(id)].v.assign(value.data(), value.data() + value.numel());
    }

    TensorT<S> param(const std::string& name) const {
        const int id = g_->find_param(name);
        if (id < 0) throw ShapeError("executor: unknown parameter '" + name + "'");
        const auto& v = bufs_[idx(id)].v;
        return TensorT<S>(g_->node(id).shape, std::vector<S>(v.begin(), v.end()));
    }

    std::span<S> param_data(int id) { return bufs_[idx(id)].v; }
    std::span<const S> param_data(int id) const { return bufs_[idx(id)].v; }

    // ---- bindings ---------------------------------------------------------

    // Bound tensors carry the batch as the leading axis; trailing axes must
    // flatten to the declared per-record element count.
    void bind(const std::string& name, TensorT<S> batch) {
        const int id = g_->find_input(name);
        if (id < 0) throw ShapeError("executor: unknown input '" + name + "'");
        const std::size_t m = shape_numel(g_->node(id).shape);
        if (batch.rank() < 1 || batch.numel() % m != 0 ||
            batch.extent(0) != batch.numel() / m)
            throw ShapeError("executor: binding for '" + name + "' with shape " +
                             shape_str(batch.shape()) + " does not match records of shape " +
                             shape_str(g_->node(id).shape));
        Binding b;
        b.batch = batch.extent(0);
        b.values.assign(batch.data(), batch.data() + batch.numel());
        bindings_[id] = std::move(b);
    }

    void clear_bindings() { bindings_.clear(); }

    // ---- forward ----------------------------------------------------------

    // Evaluates the ancestors of `targets`. Every input leaf in that set must
    // be bound, all bindings must agree on the batch size, and every
    // intermediate value must come out finite.
    void forward(const std::vector<int>& targets, Mode mode = Mode::Inference,
                 Rng* dropout_rng = nullptr) {
        needed_ = needed_for(targets);
        batch_ = resolve_batch();
        mode_ = mode;
        if (mode == Mode::Train && dropout_rng == nullptr && graph_has_dropout())
            throw Error("executor: training forward requires a dropout stream");
        for (std::size_t id = 0; id < g_->size(); ++id) {
            if (!needed_[id]) continue;
            eval_node(static_cast<int>(id), baseline_args(), bufs_[id].v,
                      bufs_[id].argmax, mode, dropout_rng);
            check_finite(static_cast<int>(id), bufs_[id].v);
        }
        forward_done_ = true;
    }

    std::size_t batch() const { return batch_; }

    std::span<const S> value(int id) const {
        require_evaluated(id);
        return bufs_[idx(id)].v;
    }

    S scalar(int id) const {
        require_evaluated(id);
        if (g_->node(id).shape != Shape{1} || g_->node(id).batched)
            throw ShapeError("executor: " + g_->describe(id) + " is not a scalar");
        return bufs_[idx(id)].v[0];
    }

    // Value of a batched node as a [B x record] tensor.
    TensorT<S> batch_value(int id) const {
        require_evaluated(id);
        const Node& n = g_->node(id);
        Shape s;
        if (n.batched) s.push_back(batch_);
        for (std::size_t e : n.shape) s.push_back(e);
        const auto& v = bufs_[idx(id)].v;
        return TensorT<S>(std::move(s), std::vector<S>(v.begin(), v.end()));
    }

    // ---- backward ---------------------------------------------------------

    // Reverse-mode gradients of a scalar loss with respect to every trainable
    // parameter it depends on. Requires a forward pass covering the loss.
    GradientMap<S> backward(int loss) {
        const Node& ln = g_->node(loss);
        if (ln.shape != Shape{1} || ln.batched)
            throw ShapeError("executor: loss must be an unbatched scalar, got " +
                             g_->describe(loss));
        if (!forward_done_ || !needed_[idx(loss)])
            throw Error("executor: backward before forward over " + g_->describe(loss));
        const std::vector<char> anc = g_->ancestors(loss);
        for (std::size_t id = 0; id < g_->size(); ++id) {
            if (anc[id]) bufs_[id].g.assign(value_len(static_cast<int>(id)), S(0));
        }
        bufs_[idx(loss)].g[0] = S(1);
        for (int id = static_cast<int>(g_->size()) - 1; id >= 0; --id) {
            if (!anc[idx(id)]) continue;
            backprop_node(id);
        }
        GradientMap<S> grads;
        for (int pid : g_->params()) {
            if (!anc[idx(pid)]) continue;
            const auto& gbuf = bufs_[idx(pid)].g;
            grads.emplace(g_->node(pid).name,
                          TensorT<S>(g_->node(pid).shape,
                                     std::vector<S>(gbuf.begin(), gbuf.end())));
        }
        return grads;
    }

    // ---- perturbed partial re-evaluation (gradient checking) --------------

    // Loss value after adding `delta` to one parameter coordinate, touching
    // only nodes downstream of that parameter. Dropout replays the masks of
    // the preceding Train forward; the baseline activations stay intact.
    S loss_after_perturb(int param_id, std::size_t coord, S delta, int loss) {
        if (!forward_done_ || !needed_[idx(loss)])
            throw Error("executor: perturbation requires a prior forward over the loss");
        const std::vector<char>& desc = descendants_cached(param_id);
        if (!desc[idx(loss)]) return bufs_[idx(loss)].v[0];
        if (scratch_.empty()) scratch_.resize(g_->size());

        auto& pv = bufs_[idx(param_id)].v;
        const S saved = pv[coord];
        pv[coord] = saved + delta;

        const Mode mode = mode_ == Mode::Train ? Mode::Replay : mode_;
        // The perturbed parameter reads from its (temporarily modified)
        // baseline buffer; everything downstream reads from scratch.
        auto args = [&](int arg) -> const S* {
            if (arg == param_id || !desc[idx(arg)]) return bufs_[idx(arg)].v.data();
            return scratch_[idx(arg)].data();
        };
        for (std::size_t id = 0; id < g_->size(); ++id) {
            if (!desc[id] || !needed_[id] || static_cast<int>(id) == param_id) continue;
            eval_node(static_cast<int>(id), args, scratch_[id], scratch_argmax_, mode,
                      nullptr);
        }
        pv[coord] = saved;
        return scratch_[idx(loss)][0];
    }

private:
    struct Binding {
        std::size_t batch = 0;
        std::vector<S> values;
    };

    struct NodeBuf {
        std::vector<S> v;
        std::vector<S> g;
        std::vector<std::uint32_t> argmax;
        std::vector<std::uint8_t> mask;
    };

    static std::size_t idx(int id) { return static_cast<std::size_t>(id); }

    std::size_t rows(int id) const { return g_->node(id).batched ? batch_ : 1; }

    std::size_t value_len(int id) const {
        return rows(id) * shape_numel(g_->node(id).shape);
    }

    bool graph_has_dropout() const {
        for (std::size_t id = 0; id < g_->size(); ++id)
            if (needed_[id] && g_->node(id).op == Op::Dropout && g_->node(id).rate > 0.0f)
                return true;
        return false;
    }

    void require_evaluated(int id) const {
        if (!forward_done_ || !needed_[idx(id)])
            throw Error("executor: " + g_->describe(id) + " has not been evaluated");
    }

    const std::vector<char>& needed_for(const std::vector<int>& targets) {
        auto it = anc_cache_.find(targets);
        if (it != anc_cache_.end()) return it->second;
        std::vector<char> mark(g_->size(), 0);
        for (int t : targets) {
            std::vector<char> a = g_->ancestors(t);
            for (std::size_t i = 0; i < mark.size(); ++i) mark[i] |= a[i];
        }
        return anc_cache_.emplace(targets, std::move(mark)).first->second;
    }

    const std::vector<char>& descendants_cached(int source) {
        auto it = desc_cache_.find(source);
        if (it != desc_cache_.end()) return it->second;
        return desc_cache_.emplace(source, g_->descendants(source)).first->second;
    }

    std::size_t resolve_batch() const {
        std::size_t b = 0;
        for (int id : g_->inputs()) {
            if (!needed_[idx(id)]) continue;
            auto it = bindings_.find(id);
            if (it == bindings_.end())
                throw ShapeError("executor: unbound input leaf '" + g_->node(id).name + "'");
            if (b == 0) {
                b = it->second.batch;
            } else if (it->second.batch != b) {
                throw ShapeError("executor: input '" + g_->node(id).name +
                                 "' has batch " + std::to_string(it->second.batch) +
                                 " but an earlier input has batch " + std::to_string(b));
            }
        }
        return b == 0 ? 1 : b;
    }

    auto baseline_args() {
        return [this](int arg) -> const S* { return bufs_[idx(arg)].v.data(); };
    }

    void check_finite(int id, const std::vector<S>& v) const {
        for (const S x : v) {
            if (!std::isfinite(static_cast<double>(x)))
                throw NumericError("non-finite value in forward pass at " + g_->describe(id));
        }
    }

    template <typename ArgV>
    void eval_node(int id, ArgV&& argv, std::vector<S>& out,
                   std::vector<std::uint32_t>& argmax, Mode mode, Rng* rng) {
        const Node& n = g_->node(id);
        const std::size_t m = shape_numel(n.shape);
        const std::size_t r = rows(id);
        switch (n.op) {
            case Op::Input: {
                auto it = bindings_.find(id);
                if (it == bindings_.end())
                    throw ShapeError("executor: unbound input leaf '" + n.name + "'");
                if (it->second.batch != batch_)
                    throw ShapeError("executor: binding for '" + n.name + "' has batch " +
                                     std::to_string(it->second.batch) + ", expected " +
                                     std::to_string(batch_));
                out = it->second.values;
                return;
            }
            case Op::Param:
                return; // values live in the buffer already
            case Op::Add:
            case Op::Mul: {
                const Node& na = g_->node(n.args[0]);
                const Node& nb = g_->node(n.args[1]);
                const S* a = argv(n.args[0]);
                const S* b = argv(n.args[1]);
                out.resize(r * m);
                const bool is_add = n.op == Op::Add;
                if (na.batched == nb.batched) {
                    for (std::size_t i = 0; i < r * m; ++i)
                        out[i] = is_add ? a[i] + b[i] : a[i] * b[i];
                } else {
                    const S* big = na.batched ? a : b;
                    const S* small = na.batched ? b : a;
                    for (std::size_t row = 0; row < r; ++row)
                        for (std::size_t i = 0; i < m; ++i)
                            out[row * m + i] = is_add ? big[row * m + i] + small[i]
                                                      : big[row * m + i] * small[i];
                }
                return;
            }
            case Op::MatMul: {
                const Node& nx = g_->node(n.args[0]);
                const std::size_t in = nx.shape[0];
                const std::size_t on = n.shape[0];
                const std::size_t rx = nx.batched ? r : 1;
                out.resize(rx * on);
                if (n.transpose)
                    kernels::linear_t_fwd(rx, in, on, argv(n.args[0]), argv(n.args[1]),
                                          out.data());
                else
                    kernels::linear_fwd(rx, in, on, argv(n.args[0]), argv(n.args[1]),
                                        out.data());
                return;
            }
            case Op::Bilinear: {
                const Node& nc = g_->node(n.args[2]);
                const std::size_t rb = g_->node(n.args[0]).batched ? r : 1;
                out.resize(rb * nc.shape[2]);
                kernels::bilinear_fwd(rb, nc.shape[0], nc.shape[1], nc.shape[2],
                                      argv(n.args[0]), argv(n.args[1]), argv(n.args[2]),
                                      out.data());
                return;
            }
            case Op::Conv1d: {
                const Node& nx = g_->node(n.args[0]);
                const Node& nk = g_->node(n.args[1]);
                const std::size_t rx = nx.batched ? r : 1;
                out.resize(rx * m);
                kernels::conv1d_fwd(rx, nx.shape[0], nx.shape[1], nk.shape[0], nk.shape[2],
                                    argv(n.args[0]), argv(n.args[1]), argv(n.args[2]),
                                    out.data(), cs1_, cs2_);
                return;
            }
            case Op::MaxPool1d: {
                const Node& nx = g_->node(n.args[0]);
                out.resize(r * m);
                argmax.resize(r * m);
                kernels::maxpool1d_fwd(r, nx.shape[0], nx.shape[1], n.pool,
                                       argv(n.args[0]), out.data(), argmax.data());
                return;
            }
            case Op::Relu:
                out.resize(r * m);
                kernels::relu_fwd(r * m, argv(n.args[0]), out.data());
                return;
            case Op::Sigmoid:
                out.resize(r * m);
                kernels::sigmoid_fwd(r * m, argv(n.args[0]), out.data());
                return;
            case Op::Dropout: {
                out.resize(r * m);
                const S* x = argv(n.args[0]);
                if (mode == Mode::Inference || n.rate == 0.0f) {
                    std::copy(x, x + r * m, out.begin());
                } else if (mode == Mode::Train) {
                    auto& mask = bufs_[idx(id)].mask;
                    mask.resize(r * m);
                    kernels::dropout_sample(r * m, n.rate, x, out.data(), mask.data(), *rng);
                } else {
                    const auto& mask = bufs_[idx(id)].mask;
                    if (mask.size() != r * m)
                        throw Error("executor: no dropout mask to replay at " +
                                    g_->describe(id));
                    kernels::dropout_replay(r * m, n.rate, x, out.data(), mask.data());
                }
                return;
            }
            case Op::Concat: {
                const std::size_t ma = g_->node(n.args[0]).shape[0];
                const std::size_t mb = g_->node(n.args[1]).shape[0];
                const S* a = argv(n.args[0]);
                const S* b = argv(n.args[1]);
                out.resize(r * m);
                for (std::size_t row = 0; row < r; ++row) {
                    std::copy(a + row * ma, a + (row + 1) * ma, out.begin() + row * m);
                    std::copy(b + row * mb, b + (row + 1) * mb, out.begin() + row * m + ma);
                }
                return;
            }
            case Op::Reshape: {
                const S* x = argv(n.args[0]);
                out.assign(x, x + r * m);
                return;
            }
            case Op::ReduceMean: {
                const std::size_t count = value_len(n.args[0]);
                const S* x = argv(n.args[0]);
                S acc = 0;
                for (std::size_t i = 0; i < count; ++i) acc += x[i];
                out.assign(1, acc / static_cast<S>(count));
                return;
            }
            case Op::BceLogits: {
                const std::size_t count = value_len(n.args[0]);
                out.assign(1,
                           kernels::bce_logits_fwd(count, argv(n.args[0]), argv(n.args[1])));
                return;
            }
        }
        throw Error("executor: unhandled op in forward");
    }

    void backprop_node(int id) {
        const Node& n = g_->node(id);
        if (n.op == Op::Input || n.op == Op::Param) return;
        const std::vector<S>& gy = bufs_[idx(id)].g;
        const std::size_t m = shape_numel(n.shape);
        const std::size_t r = rows(id);
        auto val = [this](int arg) -> const S* { return bufs_[idx(arg)].v.data(); };
        auto grad = [this](int arg) -> S* { return bufs_[idx(arg)].g.data(); };
        switch (n.op) {
            case Op::Add:
            case Op::Mul: {
                const Node& na = g_->node(n.args[0]);
                const Node& nb = g_->node(n.args[1]);
                const bool is_add = n.op == Op::Add;
                const S* a = val(n.args[0]);
                const S* b = val(n.args[1]);
                S* da = grad(n.args[0]);
                S* db = grad(n.args[1]);
                if (na.batched == nb.batched) {
                    for (std::size_t i = 0; i < r * m; ++i) {
                        da[i] += is_add ? gy[i] : gy[i] * b[i];
                        db[i] += is_add ? gy[i] : gy[i] * a[i];
                    }
                } else {
                    S* dbig = na.batched ? da : db;
                    S* dsmall = na.batched ? db : da;
                    const S* big = na.batched ? a : b;
                    const S* small = na.batched ? b : a;
                    for (std::size_t row = 0; row < r; ++row)
                        for (std::size_t i = 0; i < m; ++i) {
                            const S g = gy[row * m + i];
                            dbig[row * m + i] += is_add ? g : g * small[i];
                            dsmall[i] += is_add ? g : g * big[row * m + i];
                        }
                }
                return;
            }
            case Op::MatMul: {
                const Node& nx = g_->node(n.args[0]);
                const std::size_t in = nx.shape[0];
                const std::size_t on = n.shape[0];
                const std::size_t rx = nx.batched ? r : 1;
                if (n.transpose)
                    kernels::linear_t_bwd(rx, in, on, val(n.args[0]), val(n.args[1]),
                                          gy.data(), grad(n.args[0]), grad(n.args[1]));
                else
                    kernels::linear_bwd(rx, in, on, val(n.args[0]), val(n.args[1]),
                                        gy.data(), grad(n.args[0]), grad(n.args[1]));
                return;
            }
            case Op::Bilinear: {
                const Node& nc = g_->node(n.args[2]);
                const std::size_t rb = g_->node(n.args[0]).batched ? r : 1;
                kernels::bilinear_bwd(rb, nc.shape[0], nc.shape[1], nc.shape[2],
                                      val(n.args[0]), val(n.args[1]), val(n.args[2]),
                                      gy.data(), grad(n.args[0]), grad(n.args[1]),
                                      grad(n.args[2]));
                return;
            }
            case Op::Conv1d: {
                const Node& nx = g_->node(n.args[0]);
                const Node& nk = g_->node(n.args[1]);
                const std::size_t rx = nx.batched ? r : 1;
                kernels::conv1d_bwd(rx, nx.shape[0], nx.shape[1], nk.shape[0], nk.shape[2],
                                    val(n.args[0]), val(n.args[1]), gy.data(),
                                    grad(n.args[0]), grad(n.args[1]), grad(n.args[2]),
                                    cs1_, cs2_, cs3_);
                return;
            }
            case Op::MaxPool1d: {
                const Node& nx = g_->node(n.args[0]);
                kernels::maxpool1d_bwd(r, nx.shape[0], nx.shape[1], n.pool,
                                       bufs_[idx(id)].argmax.data(), gy.data(),
                                       grad(n.args[0]));
                return;
            }
            case Op::Relu:
                kernels::relu_bwd(r * m, bufs_[idx(id)].v.data(), gy.data(),
                                  grad(n.args[0]));
                return;
            case Op::Sigmoid:
                kernels::sigmoid_bwd(r * m, bufs_[idx(id)].v.data(), gy.data(),
                                     grad(n.args[0]));
                return;
            case Op::Dropout: {
                if (mode_ == Mode::Inference || n.rate == 0.0f) {
                    S* dx = grad(n.args[0]);
                    for (std::size_t i = 0; i < r * m; ++i) dx[i] += gy[i];
                } else {
                    kernels::dropout_bwd(r * m, n.rate, bufs_[idx(id)].mask.data(),
                                         gy.data(), grad(n.args[0]));
                }
                return;
            }
            case Op::Concat: {
                const std::size_t ma = g_->node(n.args[0]).shape[0];
                const std::size_t mb = g_->node(n.args[1]).shape[0];
                S* da = grad(n.args[0]);
                S* db = grad(n.args[1]);
                for (std::size_t row = 0; row < r; ++row) {
                    for (std::size_t i = 0; i < ma; ++i) da[row * ma + i] += gy[row * m + i];
                    for (std::size_t i = 0; i < mb; ++i)
                        db[row * mb + i] += gy[row * m + ma + i];
                }
                return;
            }
            case Op::Reshape: {
                S* dx = grad(n.args[0]);
                for (std::size_t i = 0; i < r * m; ++i) dx[i] += gy[i];
                return;
            }
            case Op::ReduceMean: {
                const std::size_t count = value_len(n.args[0]);
                const S g = gy[0] / static_cast<S>(count);
                S* dx = grad(n.args[0]);
                for (std::size_t i = 0; i < count; ++i) dx[i] += g;
                return;
            }
            case Op::BceLogits: {
                const std::size_t count = value_len(n.args[0]);
                kernels::bce_logits_bwd(count, val(n.args[0]), val(n.args[1]), gy[0],
                                        grad(n.args[0]));
                return;
            }
            default:
                throw Error("executor: unhandled op in backward");
        }
    }

    const Graph* g_;
    std::vector<NodeBuf> bufs_;
    std::map<int, Binding> bindings_;
    std::vector<char> needed_;
    std::size_t batch_ = 1;
    Mode mode_ = Mode::Inference;
    bool forward_done_ = false;

    std::map<std::vector<int>, std::vector<char>> anc_cache_;
    std::map<int, std::vector<char>> desc_cache_;
    std::vector<std::vector<S>> scratch_;
    std::vector<std::uint32_t> scratch_argmax_;
    std::vector<S> cs1_, cs2_, cs3_; // conv lowering workspaces
};

} // namespace thama::ad
