#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nestseg/ops.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg {

// Named trainable tensor. Gradients accumulate into `grad` when a tape that
// references the parameter is walked backward; the optimizer consumes and
// clears them between steps.
template <typename T>
struct ParameterT {
  std::string name;
  TensorBase<T> value;
  TensorBase<T> grad;

  ParameterT(std::string n, TensorBase<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.data(), grad.data() + grad.numel(), T(0)); }
};

using Parameter = ParameterT<float>;

// Wengert list: operations are appended in execution order, so the recorded
// sequence is topologically sorted by construction and a single reverse sweep
// visits every node exactly once. Ids always refer to earlier entries, which
// makes cycles unrepresentable; malformed ids are rejected at record time.
template <typename T>
class Tape {
 public:
  using Id = std::int32_t;

  // grad_enabled=false records values only (inference); backward() is then
  // rejected and parameter leaves are treated as constants.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Id leaf(TensorBase<T> value);                // requires_grad read from the tensor flag
  Id leaf_param(ParameterT<T>* p);             // gradient accumulates into p->grad

  Id conv2d(Id x, Id w, Id b);
  Id maxpool2(Id x);
  Id upsample2(Id x);
  Id concat_channels(const std::vector<Id>& xs);
  Id relu(Id x);
  Id sigmoid(Id x);
  Id add(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, T factor);
  Id sum(Id a);  // scalar [1]
  // weighted sum of scalar nodes (deep-supervision aggregate)
  Id weighted_sum(const std::vector<Id>& scalars, const std::vector<T>& weights);

  // Escape hatch for fused ops (the hybrid loss lives in loss.cpp). `back`
  // receives the tape and the node's own id; it must route gradients to
  // `inputs` via grad_buffer()/wants_grad().
  Id custom(std::vector<Id> inputs, TensorBase<T> value,
            std::function<void(Tape&, Id)> back);

  // Reverse-topological gradient accumulation from a scalar root into every
  // reachable parameter. Non-parameter leaf gradients stay readable on the
  // tape via grad_of().
  void backward(Id root);

  const TensorBase<T>& val(Id id) const { return node(id).value; }
  // zeros when the node was not reached by backward()
  TensorBase<T> grad_of(Id id) const;
  bool wants_grad(Id id) const { return node(id).requires_grad; }
  TensorBase<T>& grad_buffer(Id id);  // lazily allocated, zero-initialized
  std::size_t size() const { return nodes_.size(); }

  // For backward closures of custom() nodes, which live outside this class:
  // the node's recorded inputs and its accumulated upstream gradient.
  const std::vector<Id>& node_inputs(Id id) const { return node(id).inputs; }
  const TensorBase<T>& node_grad(Id id) const;

 private:
  struct Node {
    TensorBase<T> value;
    TensorBase<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    ParameterT<T>* param = nullptr;
    std::vector<Id> inputs;
    std::function<void(Tape&, Id)> back;
  };

  Node& node(Id id) { return nodes_[static_cast<std::size_t>(check_id(id))]; }
  const Node& node(Id id) const { return nodes_[static_cast<std::size_t>(check_id(id))]; }
  Id check_id(Id id) const;
  bool any_requires(const std::vector<Id>& ids) const;
  Id push(Node n);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

}  // namespace nestseg
