#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace peftlab {

struct TensorNode;

// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
//
// Tensor is a value handle over a shared node. Executing an op records the
// result node with parent references and a local backward rule; node ids
// grow monotonically with execution order, so walking reachable nodes by
// descending id is a topological traversal of the recorded graph and
// backward() visits each node exactly once. Gradient accumulation is
// additive; the optimizer is responsible for zeroing grads between steps.
//
// Single-threaded execution contract: a recording graph is never shared
// across threads. Detached tensors are plain values.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    std::int64_t numel() const;

    std::vector<double>& values();
    const std::vector<double>& values() const;
    double item() const;  // numel()==1 only

    bool requires_grad() const;
    // Leaf tensors only; flipping trainability on an op result is a
    // contract violation.
    void set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    // Reverse pass from a scalar. Accumulates into every reachable
    // requires_grad ancestor; repeated calls add one dL/dx per call to
    // leaf grads (interior buffers are recomputed per pass).
    void backward() const;

    // Value copy with no graph attachment and no grad requirement.
    Tensor detach() const;

    std::shared_ptr<TensorNode> node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::uint64_t id = 0;  // execution order

    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const TensorNode&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
    void ensure_grad();
    void accumulate_grad(const std::vector<double>& g);
};

// "[2, 3]" style shape rendering for error messages.
std::string shape_str(const std::vector<int>& shape);

std::int64_t shape_numel(const std::vector<int>& shape);

// Internal op-construction helper: result requires grad iff any parent does;
// parentless results are recorded as plain leaves.
Tensor make_result(std::vector<int> shape, std::vector<double> values,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void(const TensorNode&)> backward_fn);

}  // namespace peftlab
