#include "reanno/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace reanno::nn {

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(const std::string& name, Tensor value) {
    if (values_.contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
    grads_.emplace(name, Tensor::Zero(value.rows(), value.cols()));
    values_.emplace(name, std::move(value));
}

Tensor& ParamSet::value(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw NotFoundError("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamSet::value(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw NotFoundError("unknown parameter '" + name + "'");
    return it->second;
}

Tensor& ParamSet::grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw NotFoundError("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamSet::grad(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw NotFoundError("unknown parameter '" + name + "'");
    return it->second;
}

void ParamSet::zero_grad() {
    for (auto& [name, g] : grads_) g.setZero();
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    for (const auto& [name, v] : values_) out.push_back(name);
    return out;
}

std::size_t ParamSet::numel() const {
    std::size_t n = 0;
    for (const auto& [name, v] : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (values_.size() != other.values_.size()) return false;
    for (const auto& [name, v] : values_) {
        auto it = other.values_.find(name);
        if (it == other.values_.end() || it->second.rows() != v.rows() || it->second.cols() != v.cols()) return false;
        if (std::memcmp(v.data(), it->second.data(), sizeof(double) * static_cast<std::size_t>(v.size())) != 0)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }

Var Graph::input(Tensor value, bool requires_grad) {
    Node n;
    n.grad = Tensor::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::param(ParamSet& params, const std::string& name) {
    Var v = input(params.value(name), true);
    bindings_.push_back({&params, name, v.id});
    return v;
}

Var Graph::emplace(Tensor value, std::vector<std::size_t> parents, Backward backward) {
    Node n;
    n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_.at(p).requires_grad; });
    n.grad = Tensor::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
    auto& n = nodes_.at(id);
    if (!n.requires_grad) return;
    n.grad += g;
}

void Graph::record_relu(const Tensor& pre) {
    for (Eigen::Index i = 0; i < pre.size(); ++i) relu_signature_.push_back(pre.data()[i] > 0.0);
}

void Graph::backward(Var loss) {
    if (loss.graph != this) throw ValidationError("loss belongs to another graph");
    const auto& l = nodes_.at(loss.id);
    if (l.value.rows() != 1 || l.value.cols() != 1) throw ValidationError("backward needs a scalar (1x1) loss");
    for (auto& n : nodes_) n.grad.setZero();
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.requires_grad && n.backward) n.backward(*this, i);
    }
    for (const auto& b : bindings_) b.params->grad(b.name) += nodes_[b.id].grad;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError("shape mismatch: " + what);
}

std::string shape(const Tensor& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Graph& graph_of(Var a, Var b) {
    if (a.graph == nullptr || a.graph != b.graph) throw ValidationError("operands belong to different graphs");
    return *a.graph;
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    require(A.cols() == B.rows(), "matmul " + shape(A) + " * " + shape(B));
    return g.emplace(A * B, {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        if (g.needs_grad(a)) g.accumulate(a, G * g.node_value(b).transpose());
        if (g.needs_grad(b)) g.accumulate(b, g.node_value(a).transpose() * G);
    });
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.rows() == B.rows() && A.cols() == B.cols()) {
        return g.emplace(A + B, {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
            g.accumulate(a, g.node_grad(self));
            g.accumulate(b, g.node_grad(self));
        });
    }
    require(B.rows() == 1 && B.cols() == A.cols(), "add " + shape(A) + " + " + shape(B));
    Tensor out = A.rowwise() + B.row(0);
    return g.emplace(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
        g.accumulate(a, g.node_grad(self));
        if (g.needs_grad(b)) g.accumulate(b, g.node_grad(self).colwise().sum());
    });
}

Var sub(Var a, Var b) {
    return add(a, scale(b, -1.0));
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    require(A.rows() == B.rows() && A.cols() == B.cols(), "mul " + shape(A) + " .* " + shape(B));
    return g.emplace(A.cwiseProduct(B), {a.id, b.id}, [a = a.id, b = b.id](Graph& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        if (g.needs_grad(a)) g.accumulate(a, G.cwiseProduct(g.node_value(b)));
        if (g.needs_grad(b)) g.accumulate(b, G.cwiseProduct(g.node_value(a)));
    });
}

Var scale(Var a, double s) {
    Graph& g = *a.graph;
    return g.emplace(a.value() * s, {a.id}, [a = a.id, s](Graph& g, std::size_t self) {
        g.accumulate(a, g.node_grad(self) * s);
    });
}

Var relu(Var a) {
    Graph& g = *a.graph;
    g.record_relu(a.value());
    return g.emplace(a.value().cwiseMax(0.0), {a.id}, [a = a.id](Graph& g, std::size_t self) {
        const Tensor mask = (g.node_value(a).array() > 0.0).cast<double>();
        g.accumulate(a, g.node_grad(self).cwiseProduct(mask));
    });
}

Var transpose(Var a) {
    Graph& g = *a.graph;
    return g.emplace(a.value().transpose(), {a.id}, [a = a.id](Graph& g, std::size_t self) {
        g.accumulate(a, g.node_grad(self).transpose());
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Graph& g = graph_of(x, gain);
    graph_of(x, bias);
    const auto& X = x.value();
    require(gain.rows() == 1 && gain.cols() == X.cols() && bias.rows() == 1 && bias.cols() == X.cols(),
            "layer_norm gain/bias must be 1x" + std::to_string(X.cols()));
    const Eigen::Index n = X.cols();
    Tensor xhat(X.rows(), n);
    VectorXd inv_std(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double mu = X.row(r).mean();
        const double var = (X.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
    }
    Tensor out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    return g.emplace(std::move(out), {x.id, gain.id, bias.id},
                     [x = x.id, gn = gain.id, b = bias.id, xhat, inv_std, n](Graph& g, std::size_t self) {
                         const auto& G = g.node_grad(self);
                         g.accumulate(b, G.colwise().sum());
                         g.accumulate(gn, G.cwiseProduct(xhat).colwise().sum());
                         if (!g.needs_grad(x)) return;
                         const Tensor gx = G.array().rowwise() * g.node_value(gn).row(0).array();
                         Tensor dx(gx.rows(), gx.cols());
                         const double nd = static_cast<double>(n);
                         for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                             const double s1 = gx.row(r).sum();
                             const double s2 = gx.row(r).dot(xhat.row(r));
                             dx.row(r) = (inv_std(r) / nd) * (nd * gx.row(r).array() - s1 - xhat.row(r).array() * s2);
                         }
                         g.accumulate(x, dx);
                     });
}

Var softmax_rows(Var a) {
    Graph& g = *a.graph;
    Tensor y = reanno::softmax_rows(a.value());
    return g.emplace(std::move(y), {a.id}, [a = a.id](Graph& g, std::size_t self) {
        const auto& Y = g.node_value(self);
        const auto& G = g.node_grad(self);
        const VectorXd dots = G.cwiseProduct(Y).rowwise().sum();
        g.accumulate(a, Y.cwiseProduct(G.colwise() - dots));
    });
}

Var log_softmax_rows(Var a) {
    Graph& g = *a.graph;
    const auto& A = a.value();
    Tensor y(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) y.row(r) = A.row(r).array() - log_sum_exp(A.row(r));
    return g.emplace(std::move(y), {a.id}, [a = a.id](Graph& g, std::size_t self) {
        const Tensor P = g.node_value(self).array().exp();
        const auto& G = g.node_grad(self);
        const VectorXd sums = G.rowwise().sum();
        g.accumulate(a, G - (P.array().colwise() * sums.array()).matrix());
    });
}

Var dropout(Var a, double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
    Graph& g = *a.graph;
    if (!g.training() || rate == 0.0) {
        return g.emplace(a.value(), {a.id}, [a = a.id](Graph& g, std::size_t self) { g.accumulate(a, g.node_grad(self)); });
    }
    Tensor mask(a.rows(), a.cols());
    const double keep = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = g.rng().uniform() < rate ? 0.0 : keep;
    return g.emplace(a.value().cwiseProduct(mask), {a.id}, [a = a.id, mask](Graph& g, std::size_t self) {
        g.accumulate(a, g.node_grad(self).cwiseProduct(mask));
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ValidationError("concat of zero tensors");
    Graph& g = *parts[0].graph;
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        graph_of(parts[0], p);
        require(p.cols() == cols, "concat_rows column mismatch");
        rows += p.rows();
        ids.push_back(p.id);
    }
    Tensor out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        offsets.push_back(off);
        off += p.rows();
    }
    return g.emplace(std::move(out), ids, [ids, offsets](Graph& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (g.needs_grad(ids[i])) g.accumulate(ids[i], G.middleRows(offsets[i], g.node_value(ids[i]).rows()));
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ValidationError("concat of zero tensors");
    Graph& g = *parts[0].graph;
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts[0].rows();
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        graph_of(parts[0], p);
        require(p.rows() == rows, "concat_cols row mismatch");
        cols += p.cols();
        ids.push_back(p.id);
    }
    Tensor out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        offsets.push_back(off);
        off += p.cols();
    }
    return g.emplace(std::move(out), ids, [ids, offsets](Graph& g, std::size_t self) {
        const auto& G = g.node_grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (g.needs_grad(ids[i])) g.accumulate(ids[i], G.middleCols(offsets[i], g.node_value(ids[i]).cols()));
    });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
    Graph& g = *a.graph;
    require(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows out of range");
    return g.emplace(a.value().middleRows(begin, count), {a.id}, [a = a.id, begin, count](Graph& g, std::size_t self) {
        Tensor full = Tensor::Zero(g.node_value(a).rows(), g.node_value(a).cols());
        full.middleRows(begin, count) = g.node_grad(self);
        g.accumulate(a, full);
    });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
    Graph& g = *a.graph;
    require(begin >= 0 && count >= 0 && begin + count <= a.cols(), "slice_cols out of range");
    return g.emplace(a.value().middleCols(begin, count), {a.id}, [a = a.id, begin, count](Graph& g, std::size_t self) {
        Tensor full = Tensor::Zero(g.node_value(a).rows(), g.node_value(a).cols());
        full.middleCols(begin, count) = g.node_grad(self);
        g.accumulate(a, full);
    });
}

Var sum(Var a) {
    Graph& g = *a.graph;
    Tensor out(1, 1);
    out(0, 0) = a.value().sum();
    return g.emplace(std::move(out), {a.id}, [a = a.id](Graph& g, std::size_t self) {
        const auto& v = g.node_value(a);
        g.accumulate(a, Tensor::Constant(v.rows(), v.cols(), g.node_grad(self)(0, 0)));
    });
}

Var mean(Var a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var l2_normalize_rows(Var a, double eps) {
    Graph& g = *a.graph;
    const auto& A = a.value();
    const VectorXd norms = A.rowwise().norm().cwiseMax(eps);
    Tensor y = A.array().colwise() / norms.array();
    return g.emplace(std::move(y), {a.id}, [a = a.id, norms](Graph& g, std::size_t self) {
        const auto& Y = g.node_value(self);
        const auto& G = g.node_grad(self);
        const VectorXd dots = G.cwiseProduct(Y).rowwise().sum();
        Tensor dx = (G - (Y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array();
        g.accumulate(a, dx);
    });
}

Var softmax_xent(Var logits, const Tensor& targets) {
    Graph& g = *logits.graph;
    const auto& L = logits.value();
    require(targets.rows() == L.rows() && targets.cols() == L.cols(),
            "softmax_xent targets " + shape(targets) + " vs logits " + shape(L));
    for (Eigen::Index r = 0; r < targets.rows(); ++r)
        if (std::abs(targets.row(r).sum() - 1.0) > 1e-6 || (targets.row(r).array() < 0.0).any())
            throw ValidationError("softmax_xent target row " + std::to_string(r) + " is not a distribution");
    const double batch = static_cast<double>(L.rows());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < L.rows(); ++r) {
        const double lse = log_sum_exp(L.row(r));
        for (Eigen::Index c = 0; c < L.cols(); ++c)
            if (targets(r, c) != 0.0) loss -= targets(r, c) * (L(r, c) - lse);
    }
    Tensor out(1, 1);
    out(0, 0) = loss / batch;
    return g.emplace(std::move(out), {logits.id}, [l = logits.id, targets, batch](Graph& g, std::size_t self) {
        const Tensor p = reanno::softmax_rows(g.node_value(l));
        g.accumulate(l, (p - targets) * (g.node_grad(self)(0, 0) / batch));
    });
}

Var softmax_xent(Var logits, std::span<const std::uint32_t> labels) {
    const auto& L = logits.value();
    require(static_cast<Eigen::Index>(labels.size()) == L.rows(), "softmax_xent label count");
    Tensor targets = Tensor::Zero(L.rows(), L.cols());
    for (std::size_t r = 0; r < labels.size(); ++r) {
        require(labels[r] < L.cols(), "softmax_xent label index out of range");
        targets(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
    }
    return softmax_xent(logits, targets);
}

Var custom_unary(Var x, const std::function<Tensor(const Tensor&)>& f,
                 const std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>& df) {
    Graph& g = *x.graph;
    return g.emplace(f(x.value()), {x.id}, [x = x.id, df](Graph& g, std::size_t self) {
        g.accumulate(x, df(g.node_value(x), g.node_value(self), g.node_grad(self)));
    });
}

}  // namespace reanno::nn
