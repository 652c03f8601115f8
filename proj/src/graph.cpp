#include "thama/graph.hpp"

#include <algorithm>

namespace thama::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::MatMul: return "matmul";
        case Op::Bilinear: return "bilinear";
        case Op::Conv1d: return "conv1d";
        case Op::MaxPool1d: return "maxpool1d";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Dropout: return "dropout";
        case Op::Concat: return "concat";
        case Op::Reshape: return "reshape";
        case Op::ReduceMean: return "reduce_mean";
        case Op::BceLogits: return "bce_logits";
    }
    return "?";
}

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ShapeError("graph: node id " + std::to_string(id) + " out of range");
}

int Graph::input(const std::string& name, Shape shape) {
    if (input_by_name_.count(name) || param_by_name_.count(name))
        throw ShapeError("graph: duplicate leaf name '" + name + "'");
    Node n{Op::Input, {}, std::move(shape), true, name};
    const int id = push(std::move(n));
    input_ids_.push_back(id);
    input_by_name_[name] = id;
    return id;
}

int Graph::param(const std::string& name, Shape shape) {
    if (input_by_name_.count(name) || param_by_name_.count(name))
        throw ShapeError("graph: duplicate leaf name '" + name + "'");
    Node n{Op::Param, {}, std::move(shape), false, name};
    const int id = push(std::move(n));
    param_ids_.push_back(id);
    param_by_name_[name] = id;
    return id;
}

int Graph::find_param(const std::string& name) const {
    auto it = param_by_name_.find(name);
    return it == param_by_name_.end() ? -1 : it->second;
}

int Graph::find_input(const std::string& name) const {
    auto it = input_by_name_.find(name);
    return it == input_by_name_.end() ? -1 : it->second;
}

int Graph::add(int a, int b) {
    check_id(a);
    check_id(b);
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape != nb.shape)
        throw ShapeError("add: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
    return push({Op::Add, {a, b}, na.shape, na.batched || nb.batched, {}});
}

int Graph::mul(int a, int b) {
    check_id(a);
    check_id(b);
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape != nb.shape)
        throw ShapeError("mul: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
    return push({Op::Mul, {a, b}, na.shape, na.batched || nb.batched, {}});
}

int Graph::matmul(int x, int w, bool transpose_w) {
    check_id(x);
    check_id(w);
    const Node& nx = node(x);
    const Node& nw = node(w);
    if (nx.shape.size() != 1)
        throw ShapeError("matmul: vector operand must be rank 1, got " + shape_str(nx.shape));
    if (nw.shape.size() != 2)
        throw ShapeError("matmul: weight operand must be rank 2, got " + shape_str(nw.shape));
    if (nw.batched)
        throw ShapeError("matmul: weight operand must be unbatched");
    const std::size_t in = nx.shape[0];
    const std::size_t w_in = transpose_w ? nw.shape[1] : nw.shape[0];
    const std::size_t w_out = transpose_w ? nw.shape[0] : nw.shape[1];
    if (in != w_in)
        throw ShapeError("matmul: inner dimension mismatch, x " + shape_str(nx.shape) +
                         " vs W " + shape_str(nw.shape) +
                         (transpose_w ? " (transposed)" : ""));
    Node n{Op::MatMul, {x, w}, {w_out}, nx.batched, {}};
    n.transpose = transpose_w;
    return push(std::move(n));
}

int Graph::bilinear(int f1, int f2, int core) {
    check_id(f1);
    check_id(f2);
    check_id(core);
    const Node& n1 = node(f1);
    const Node& n2 = node(f2);
    const Node& nc = node(core);
    if (n1.shape.size() != 1 || n2.shape.size() != 1)
        throw ShapeError("bilinear: factor operands must be rank 1");
    if (nc.shape.size() != 3)
        throw ShapeError("bilinear: core must be rank 3, got " + shape_str(nc.shape));
    if (nc.batched) throw ShapeError("bilinear: core must be unbatched");
    if (n1.batched != n2.batched)
        throw ShapeError("bilinear: factor operands must have matching batching");
    if (n1.shape[0] != nc.shape[0] || n2.shape[0] != nc.shape[1])
        throw ShapeError("bilinear: core " + shape_str(nc.shape) + " incompatible with f1 " +
                         shape_str(n1.shape) + ", f2 " + shape_str(n2.shape));
    return push({Op::Bilinear, {f1, f2, core}, {nc.shape[2]}, n1.batched, {}});
}

int Graph::conv1d(int x, int kernels, int bias) {
    check_id(x);
    check_id(kernels);
    check_id(bias);
    const Node& nx = node(x);
    const Node& nk = node(kernels);
    const Node& nb = node(bias);
    if (nx.shape.size() != 2)
        throw ShapeError("conv1d: input must be rank 2 [channels x length], got " +
                         shape_str(nx.shape));
    if (nk.shape.size() != 3)
        throw ShapeError("conv1d: kernels must be rank 3 [out x in x width], got " +
                         shape_str(nk.shape));
    if (nk.batched || nb.batched)
        throw ShapeError("conv1d: kernels and bias must be unbatched");
    if (nk.shape[2] % 2 == 0)
        throw ShapeError("conv1d: kernel width must be odd for same padding");
    if (nx.shape[0] != nk.shape[1])
        throw ShapeError("conv1d: input has " + std::to_string(nx.shape[0]) +
                         " channels but kernels expect " + std::to_string(nk.shape[1]));
    if (nb.shape != Shape{nk.shape[0]})
        throw ShapeError("conv1d: bias shape " + shape_str(nb.shape) +
                         " does not match " + std::to_string(nk.shape[0]) + " output channels");
    return push({Op::Conv1d, {x, kernels, bias}, {nk.shape[0], nx.shape[1]}, nx.batched, {}});
}

int Graph::maxpool1d(int x, std::size_t pool) {
    check_id(x);
    const Node& nx = node(x);
    if (nx.shape.size() != 2)
        throw ShapeError("maxpool1d: input must be rank 2 [channels x length]");
    if (pool < 1) throw ShapeError("maxpool1d: pool size must be positive");
    if (nx.shape[1] < pool)
        throw ShapeError("maxpool1d: length " + std::to_string(nx.shape[1]) +
                         " shorter than pool " + std::to_string(pool));
    Node n{Op::MaxPool1d, {x}, {nx.shape[0], nx.shape[1] / pool}, nx.batched, {}};
    n.pool = pool;
    return push(std::move(n));
}

int Graph::relu(int x) {
    check_id(x);
    return push({Op::Relu, {x}, node(x).shape, node(x).batched, {}});
}

int Graph::sigmoid(int x) {
    check_id(x);
    return push({Op::Sigmoid, {x}, node(x).shape, node(x).batched, {}});
}

int Graph::dropout(int x, float rate) {
    check_id(x);
    if (rate < 0.0f || rate >= 1.0f)
        throw ShapeError("dropout: rate must lie in [0, 1)");
    Node n{Op::Dropout, {x}, node(x).shape, node(x).batched, {}};
    n.rate = rate;
    return push(std::move(n));
}

int Graph::concat(int a, int b) {
    check_id(a);
    check_id(b);
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape.size() != 1 || nb.shape.size() != 1)
        throw ShapeError("concat: operands must be rank 1");
    if (na.batched != nb.batched)
        throw ShapeError("concat: operands must have matching batching");
    return push({Op::Concat, {a, b}, {na.shape[0] + nb.shape[0]}, na.batched, {}});
}

int Graph::reshape(int x, Shape shape) {
    check_id(x);
    const Node& nx = node(x);
    if (shape_numel(shape) != shape_numel(nx.shape))
        throw ShapeError("reshape: cannot view " + shape_str(nx.shape) + " as " +
                         shape_str(shape));
    return push({Op::Reshape, {x}, std::move(shape), nx.batched, {}});
}

int Graph::reduce_mean(int x) {
    check_id(x);
    return push({Op::ReduceMean, {x}, {1}, false, {}});
}

int Graph::bce_logits(int logits, int labels) {
    check_id(logits);
    check_id(labels);
    const Node& nz = node(logits);
    const Node& nl = node(labels);
    if (nz.shape != Shape{1} || nl.shape != Shape{1})
        throw ShapeError("bce_logits: logits and labels must be per-record scalars");
    if (!nz.batched || !nl.batched)
        throw ShapeError("bce_logits: logits and labels must be batched");
    return push({Op::BceLogits, {logits, labels}, {1}, false, {}});
}

void Graph::set_label(int id, const std::string& label) {
    check_id(id);
    nodes_[static_cast<std::size_t>(id)].name = label;
}

std::string Graph::describe(int id) const {
    check_id(id);
    const Node& n = node(id);
    std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
    if (!n.name.empty()) s += " '" + n.name + "'";
    s += ")";
    return s;
}

std::vector<char> Graph::ancestors(int target) const {
    check_id(target);
    std::vector<char> mark(nodes_.size(), 0);
    std::vector<int> stack{target};
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        if (mark[static_cast<std::size_t>(id)]) continue;
        mark[static_cast<std::size_t>(id)] = 1;
        for (int a : node(id).args) stack.push_back(a);
    }
    return mark;
}

std::vector<char> Graph::descendants(int source) const {
    check_id(source);
    std::vector<char> mark(nodes_.size(), 0);
    mark[static_cast<std::size_t>(source)] = 1;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        if (mark[id]) continue;
        for (int a : nodes_[id].args) {
            if (mark[static_cast<std::size_t>(a)]) {
                mark[id] = 1;
                break;
            }
        }
    }
    return mark;
}

} // namespace thama::ad
