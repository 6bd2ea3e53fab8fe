#pragma once

#include "reanno/common.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace reanno::nn {

/// Dense 2-D tensor in double precision. Vectors are 1 x n rows.
using Tensor = MatrixXd;

/// Named trainable tensors and their accumulated gradients.
class ParamSet {
public:
    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return values_.contains(name); }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;
    void zero_grad();
    std::vector<std::string> names() const;
    std::size_t size() const { return values_.size(); }
    /// Total number of scalar parameters.
    std::size_t numel() const;

    bool operator==(const ParamSet& other) const;

private:
    std::map<std::string, Tensor> values_;
    std::map<std::string, Tensor> grads_;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the reverse of
/// creation order is a valid topological order for backpropagation.
class Graph {
public:
    explicit Graph(std::uint64_t seed = 0, bool training = false) : rng_(seed), training_(training) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Constant input; `requires_grad` marks it as a designated input whose
    /// gradient is kept after backward.
    Var input(Tensor value, bool requires_grad = false);
    /// Leaf bound to a parameter; backward() accumulates into params.grad(name).
    Var param(ParamSet& params, const std::string& name);

    bool training() const { return training_; }
    Rng& rng() { return rng_; }

    /// Backpropagates from a 1x1 loss node and flushes parameter gradients.
    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
    std::size_t size() const { return nodes_.size(); }

    using Backward = std::function<void(Graph&, std::size_t self)>;
    /// Appends a node computed from `parents`; `backward` reads this node's
    /// gradient and adds into the parents' gradients via accumulate().
    Var emplace(Tensor value, std::vector<std::size_t> parents, Backward backward);
    void accumulate(std::size_t id, const Tensor& g);
    bool needs_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const Tensor& node_value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& node_grad(std::size_t id) const { return nodes_.at(id).grad; }

    /// Sign pattern of every ReLU input seen so far; differs between two
    /// evaluations iff a perturbation crossed a kink.
    const std::vector<bool>& relu_signature() const { return relu_signature_; }
    void record_relu(const Tensor& pre);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        Backward backward;
        bool requires_grad = false;
    };
    struct Binding {
        ParamSet* params;
        std::string name;
        std::size_t id;
    };

    std::vector<Node> nodes_;
    std::vector<Binding> bindings_;
    std::vector<bool> relu_signature_;
    Rng rng_;
    bool training_;
};

// ---------------------------------------------------------------------------
// Primitives. Shapes are checked eagerly; violations throw ValidationError.

Var matmul(Var a, Var b);
/// Elementwise sum; `b` may be a 1 x n row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var transpose(Var a);
/// Row-wise layer normalisation with learned gain/bias rows (1 x n).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Inverted dropout using the graph's seeded stream; identity when the graph is
/// not training or rate == 0.
Var dropout(Var a, double rate);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var sum(Var a);
Var mean(Var a);
/// Divides each row by its Euclidean norm.
Var l2_normalize_rows(Var a, double eps = 1e-12);

/// Mean over rows of -sum_t target_t * log softmax(logits)_t. Target rows must
/// be distributions (tolerance 1e-6).
Var softmax_xent(Var logits, const Tensor& targets);
Var softmax_xent(Var logits, std::span<const std::uint32_t> labels);

/// Generic elementwise-style node for tests and one-off ops: y = f(x),
/// dx = df(x, y, dy).
Var custom_unary(Var x, const std::function<Tensor(const Tensor&)>& f,
                 const std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>& df);

}  // namespace reanno::nn
