#pragma once

#include "compctl/numerics/tensor.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace compctl {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  [[nodiscard]] bool valid() const noexcept { return id != kInvalid; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers.
///
/// Parameters are recorded by reference: the tape does not copy them, and
/// their gradients accumulate into a caller-owned sink tensor. A tape is
/// single-owner; it is not safe to record on it from several threads.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, nullptr, {}, nullptr});
    return {nodes_.size() - 1};
  }

  /// `grad_sink` may be null for a parameter that should not receive a gradient.
  Var parameter(const Tensor& value, Tensor* grad_sink) {
    if (grad_sink != nullptr && !grad_sink->same_shape(value)) {
      throw std::invalid_argument("Tape::parameter: gradient sink shape mismatch");
    }
    nodes_.push_back(Node{{}, &value, grad_sink, {}, nullptr});
    return {nodes_.size() - 1};
  }

  /// Records an op result. A null `backward` marks a value that does not
  /// depend on anything differentiable.
  Var record(Tensor value, Backward backward) {
    nodes_.push_back(Node{std::move(value), nullptr, nullptr, {}, std::move(backward)});
    return {nodes_.size() - 1};
  }

  [[nodiscard]] const Tensor& value(Var v) const {
    const Node& n = node(v);
    return n.external != nullptr ? *n.external : n.value;
  }

  [[nodiscard]] bool requires_grad(Var v) const {
    const Node& n = node(v);
    return n.sink != nullptr || static_cast<bool>(n.backward);
  }

  /// Gradient accumulator for `v`, zero-initialised on first use.
  Tensor& grad(Var v) {
    Node& n = node(v);
    if (n.sink != nullptr) return *n.sink;
    if (n.grad.empty()) n.grad = Tensor(value(v).shape(), 0.0);
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
    grad(loss)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external;
    Tensor* sink;
    Tensor grad;
    Backward backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
    return nodes_[v.id];
  }
  [[nodiscard]] const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: invalid Var");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

}  // namespace compctl
