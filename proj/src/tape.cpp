#include "nestseg/tape.hpp"

#include <algorithm>

namespace nestseg {

template <typename T>
typename Tape<T>::Id Tape<T>::check_id(Id id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    fail("tape: operation references id " + std::to_string(id) +
         " outside the recorded sequence");
  return id;
}

template <typename T>
bool Tape<T>::any_requires(const std::vector<Id>& ids) const {
  for (Id id : ids)
    if (node(id).requires_grad) return true;
  return false;
}

template <typename T>
typename Tape<T>::Id Tape<T>::push(Node n) {
  if (!grad_enabled_) {
    n.requires_grad = false;
    n.back = nullptr;
  }
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
TensorBase<T>& Tape<T>::grad_buffer(Id id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad = TensorBase<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
TensorBase<T> Tape<T>::grad_of(Id id) const {
  const Node& n = node(id);
  return n.has_grad ? n.grad : TensorBase<T>(n.value.shape());
}

template <typename T>
const TensorBase<T>& Tape<T>::node_grad(Id id) const {
  const Node& n = node(id);
  if (!n.has_grad)
    fail("tape: node " + std::to_string(id) + " has no gradient; read it from a backward closure");
  return n.grad;
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(TensorBase<T> value) {
  Node n;
  n.requires_grad = value.requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf_param(ParameterT<T>* p) {
  if (!p) fail("tape: null parameter");
  Node n;
  n.value = p->value;
  n.requires_grad = true;
  n.param = p;
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::conv2d(Id x, Id w, Id b) {
  Node n;
  n.inputs = {check_id(x), check_id(w), check_id(b)};
  n.value = ops::conv2d(val(x), val(w), val(b));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const auto& in = t.node(self).inputs;
      const Id xi = in[0], wi = in[1], bi = in[2];
      TensorBase<T>* gx = t.wants_grad(xi) ? &t.grad_buffer(xi) : nullptr;
      TensorBase<T>* gw = t.wants_grad(wi) ? &t.grad_buffer(wi) : nullptr;
      TensorBase<T>* gb = t.wants_grad(bi) ? &t.grad_buffer(bi) : nullptr;
      ops::conv2d_backward(t.val(xi), t.val(wi), t.node(self).grad, gx, gw, gb);
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::maxpool2(Id x) {
  Node n;
  n.inputs = {check_id(x)};
  n.requires_grad = any_requires(n.inputs);
  if (!n.requires_grad) {
    n.value = ops::maxpool2<T>(val(x), nullptr);
  } else {
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    n.value = ops::maxpool2<T>(val(x), argmax.get());
    n.back = [argmax](Tape& t, Id self) {
      const Id xi = t.node(self).inputs[0];
      if (!t.wants_grad(xi)) return;
      auto gx = ops::maxpool2_backward<T>(*argmax, t.val(xi).shape(), t.node(self).grad);
      ops::axpy(t.grad_buffer(xi), T(1), gx);
    };
  }
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::upsample2(Id x) {
  Node n;
  n.inputs = {check_id(x)};
  n.value = ops::upsample2(val(x));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const Id xi = t.node(self).inputs[0];
      if (!t.wants_grad(xi)) return;
      auto gx = ops::upsample2_backward(t.node(self).grad);
      ops::axpy(t.grad_buffer(xi), T(1), gx);
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::concat_channels(const std::vector<Id>& xs) {
  Node n;
  n.inputs = xs;
  std::vector<const TensorBase<T>*> views;
  views.reserve(xs.size());
  for (Id id : xs) views.push_back(&val(check_id(id)));
  n.value = ops::concat_channels(views);
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const auto& in = t.node(self).inputs;
      const auto& g = t.node(self).grad;
      std::int64_t c0 = 0;
      for (Id xi : in) {
        const std::int64_t c1 = c0 + t.val(xi).dim(1);
        if (t.wants_grad(xi))
          ops::axpy(t.grad_buffer(xi), T(1), ops::slice_channels(g, c0, c1));
        c0 = c1;
      }
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::relu(Id x) {
  Node n;
  n.inputs = {check_id(x)};
  n.value = ops::relu(val(x));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const Id xi = t.node(self).inputs[0];
      if (!t.wants_grad(xi)) return;
      ops::axpy(t.grad_buffer(xi), T(1), ops::relu_backward(t.val(xi), t.node(self).grad));
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::sigmoid(Id x) {
  Node n;
  n.inputs = {check_id(x)};
  n.value = ops::sigmoid(val(x));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const Id xi = t.node(self).inputs[0];
      if (!t.wants_grad(xi)) return;
      ops::axpy(t.grad_buffer(xi), T(1),
                ops::sigmoid_backward(t.node(self).value, t.node(self).grad));
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::add(Id a, Id b) {
  Node n;
  n.inputs = {check_id(a), check_id(b)};
  n.value = ops::add(val(a), val(b));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const auto& g = t.node(self).grad;
      for (Id xi : t.node(self).inputs)
        if (t.wants_grad(xi)) ops::axpy(t.grad_buffer(xi), T(1), g);
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::mul(Id a, Id b) {
  Node n;
  n.inputs = {check_id(a), check_id(b)};
  n.value = ops::mul(val(a), val(b));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const auto& in = t.node(self).inputs;
      const auto& g = t.node(self).grad;
      if (t.wants_grad(in[0])) ops::axpy(t.grad_buffer(in[0]), T(1), ops::mul(g, t.val(in[1])));
      if (t.wants_grad(in[1])) ops::axpy(t.grad_buffer(in[1]), T(1), ops::mul(g, t.val(in[0])));
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::scale(Id a, T factor) {
  Node n;
  n.inputs = {check_id(a)};
  n.value = ops::scale(val(a), factor);
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [factor](Tape& t, Id self) {
      const Id xi = t.node(self).inputs[0];
      if (t.wants_grad(xi)) ops::axpy(t.grad_buffer(xi), factor, t.node(self).grad);
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::sum(Id a) {
  Node n;
  n.inputs = {check_id(a)};
  n.value = ops::sum_all(val(a));
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [](Tape& t, Id self) {
      const Id xi = t.node(self).inputs[0];
      if (!t.wants_grad(xi)) return;
      const T g = t.node(self).grad[0];
      auto& gx = t.grad_buffer(xi);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::weighted_sum(const std::vector<Id>& scalars,
                                           const std::vector<T>& weights) {
  if (scalars.empty()) fail("weighted_sum: empty input list");
  if (scalars.size() != weights.size())
    fail("weighted_sum: " + std::to_string(scalars.size()) + " inputs vs " +
         std::to_string(weights.size()) + " weights");
  T acc = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const auto& v = val(check_id(scalars[i]));
    if (v.numel() != 1) fail("weighted_sum: input " + std::to_string(i) + " is not scalar");
    acc += weights[i] * v[0];
  }
  Node n;
  n.inputs = scalars;
  n.value = TensorBase<T>({1}, {acc});
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad)
    n.back = [weights](Tape& t, Id self) {
      const auto& in = t.node(self).inputs;
      const T g = t.node(self).grad[0];
      for (std::size_t i = 0; i < in.size(); ++i)
        if (t.wants_grad(in[i])) t.grad_buffer(in[i])[0] += weights[i] * g;
    };
  return push(std::move(n));
}

template <typename T>
typename Tape<T>::Id Tape<T>::custom(std::vector<Id> inputs, TensorBase<T> value,
                                     std::function<void(Tape&, Id)> back) {
  Node n;
  for (Id id : inputs) check_id(id);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.requires_grad = any_requires(n.inputs);
  if (n.requires_grad) n.back = std::move(back);
  return push(std::move(n));
}

template <typename T>
void Tape<T>::backward(Id root) {
  if (!grad_enabled_) fail("tape: backward() on a value-only tape");
  if (val(root).numel() != 1)
    fail("tape: backward root must be scalar, got " + val(root).shape_str());
  grad_buffer(root)[0] = T(1);
  for (Id id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.back) n.back(*this, id);
  }
  for (auto& n : nodes_)
    if (n.param && n.has_grad) ops::axpy(n.param->grad, T(1), n.grad);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace nestseg
