#include "peftlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "peftlab/errors.hpp"

namespace peftlab {

namespace {

std::atomic<std::uint64_t> g_next_node_id{1};

std::shared_ptr<TensorNode> new_node(std::vector<int> shape, std::vector<double> values,
                                     bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

}  // namespace

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (const int e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void TensorNode::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void TensorNode::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != values.size()) {
        throw ContractError("gradient size mismatch: " + std::to_string(g.size()) + " vs " +
                            std::to_string(values.size()));
    }
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    for (const int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    for (const int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)), value);
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::numel() const { return node_->numel(); }

std::vector<double>& Tensor::values() { return node_->values; }

const std::vector<double>& Tensor::values() const { return node_->values; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a single-element tensor, got shape " +
                            shape_str(shape()));
    }
    return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!is_leaf()) throw ContractError("requires_grad may only be toggled on leaf tensors");
    node_->requires_grad = flag;
    if (!flag) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_->parents.empty(); }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        throw ContractError("tensor has no gradient; run backward() from a downstream scalar");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;

    // Collect everything reachable through parent links, then replay in
    // descending id order. Ids are assigned at execution, so this order is
    // topological and each node runs its rule once.
    std::vector<TensorNode*> reachable;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        reachable.push_back(n);
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(reachable.begin(), reachable.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });

    // Leaf grads accumulate across calls; interior buffers are per-pass so
    // a repeated backward adds exactly one dL/dx to every ancestor.
    for (TensorNode* n : reachable) {
        if (!n->parents.empty()) n->grad.clear();
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (TensorNode* n : reachable) {
        if (n->backward_fn && n->requires_grad && !n->grad.empty()) n->backward_fn(*n);
    }
}

Tensor Tensor::detach() const {
    return Tensor(new_node(node_->shape, node_->values, false));
}

Tensor make_result(std::vector<int> shape, std::vector<double> values,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void(const TensorNode&)> backward_fn) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    auto node = new_node(std::move(shape), std::move(values), any);
    if (any) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace peftlab
