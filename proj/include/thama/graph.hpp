// Static compute graph: a DAG of primitive operations over named parameter
// and input leaves. Shapes are per-record; the executor adds the batch axis.
// Every builder method validates operand shapes, so an ill-formed graph is
// rejected at construction time.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thama/tensor.hpp"

namespace thama::ad {

enum class Op : std::uint8_t {
    Input,
    Param,
    Add,        // elementwise; one operand may be unbatched (bias broadcast)
    Mul,        // elementwise Hadamard product, same broadcast rule as Add
    MatMul,     // y = x . W (or x . W^T with transpose set); W unbatched
    Bilinear,   // z[k] = sum_ij core[i][j][k] f1[i] f2[j]
    Conv1d,     // cross-correlation, zero same-padding, odd kernel width
    MaxPool1d,  // non-overlapping windows, trailing remainder dropped
    Relu,
    Sigmoid,
    Dropout,    // inverted dropout; identity outside training
    Concat,     // rank-1 concatenation, first operand leading
    Reshape,    // metadata-only, element count preserved
    ReduceMean, // mean over batch and elements -> unbatched scalar
    BceLogits,  // mean binary cross-entropy taken on logits (softplus form)
};

const char* op_name(Op op);

struct Node {
    Op op;
    std::vector<int> args;
    Shape shape;          // per-record shape
    bool batched = true;  // false for parameters and reduced scalars
    std::string name;     // leaf name or diagnostic label

    // op-specific attributes
    bool transpose = false; // MatMul
    float rate = 0.0f;      // Dropout
    std::size_t pool = 2;   // MaxPool1d
};

class Graph {
public:
    int input(const std::string& name, Shape shape);
    int param(const std::string& name, Shape shape);

    int add(int a, int b);
    int mul(int a, int b);
    int matmul(int x, int w, bool transpose_w = false);
    int bilinear(int f1, int f2, int core);
    int conv1d(int x, int kernels, int bias);
    int maxpool1d(int x, std::size_t pool = 2);
    int relu(int x);
    int sigmoid(int x);
    int dropout(int x, float rate);
    int concat(int a, int b);
    int reshape(int x, Shape shape);
    int reduce_mean(int x);
    int bce_logits(int logits, int labels);

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    const std::vector<int>& params() const { return param_ids_; }
    const std::vector<int>& inputs() const { return input_ids_; }
    int find_param(const std::string& name) const;
    int find_input(const std::string& name) const;

    void set_label(int id, const std::string& label);
    std::string describe(int id) const;

    // Node ids whose value the node `target` depends on (target included).
    std::vector<char> ancestors(int target) const;
    // Node ids influenced by `source` (source included).
    std::vector<char> descendants(int source) const;

private:
    int push(Node n);
    void check_id(int id) const;

    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
    std::vector<int> input_ids_;
    std::map<std::string, int> param_by_name_;
    std::map<std::string, int> input_by_name_;
};

} // namespace thama::ad
