#pragma once

// Define-by-run reverse-mode differentiation. A Tape records every operation
// of one forward pass in creation order, which is already a topological order,
// so backward() is a single reverse sweep.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "salcar/tensor.hpp"

namespace salcar {

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool grad_ready = false;
};

/// Ordered, named collection of trainable tensors. Addresses of entries are
/// stable for the lifetime of the set.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(std::string name, BasicTensor<T> value);
  bool contains(const std::string& name) const;
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *entries_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : entries_) out.add(p->name, p->value.template cast<U>());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(BasicTensor<T> value);
  // Differentiable input that is not a parameter (used by gradient checks).
  Var<T> input(BasicTensor<T> value);
  Var<T> bind(Parameter<T>& param);

  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Seeds d(out)/d(out) = 1 for a single-element output and sweeps once in
  /// reverse creation order. Bound parameters receive their accumulated
  /// gradient (exactly zero when unreachable) and are marked ready.
  void backward(Var<T> out);

  const BasicTensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  const BasicTensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  // Gradient of a node after backward(); zeros if the node was never reached.
  BasicTensor<T> grad(Var<T> v) const;

  // Accumulation target for the backward rule of node `id`'s input. Returns
  // nullptr when that input does not require a gradient.
  std::span<T> grad_slot(std::size_t id);
  std::span<const T> grad_of(std::size_t id) const { return nodes_[id].grad.data(); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

/// Maps parameter names to their leaves on one tape.
template <typename T>
class Binding {
 public:
  Binding(Tape<T>& tape, ParameterSet<T>& params);
  Var<T> operator[](const std::string& name) const;
  Tape<T>& tape() const { return *tape_; }

 private:
  Tape<T>* tape_;
  std::unordered_map<std::string, Var<T>> vars_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives.

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad);

// shared: every group sees all input channels. split: group g sees the g-th
// equal slice of the input channels. Group outputs are concatenated.
enum class GroupInput { shared, split };
template <typename T>
Var<T> grouped_conv2d(Var<T> x, std::span<const Var<T>> ws, std::span<const Var<T>> bs, std::size_t stride,
                      std::size_t pad, GroupInput mode);
template <typename T>
Var<T> maxpool2(Var<T> x);
template <typename T>
Var<T> leaky_relu(Var<T> x, double slope);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> softplus(Var<T> x);
template <typename T>
Var<T> exponential(Var<T> x);
template <typename T>
Var<T> abs(Var<T> x);
template <typename T>
Var<T> global_avg_pool(Var<T> x);
template <typename T>
Var<T> fully_connected(Var<T> x, Var<T> w, Var<T> bias);
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs);
template <typename T>
Var<T> mul_broadcast(Var<T> x, Var<T> s);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, double factor);
template <typename T>
Var<T> add_scalar(Var<T> x, double offset);
// Divides every element of x by the single-element tensor s.
template <typename T>
Var<T> div_scalar(Var<T> x, Var<T> s);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
// Element i of a flattened tensor, shape [1].
template <typename T>
Var<T> select(Var<T> x, std::size_t i);
// Stacks single-element tensors into shape [k].
template <typename T>
Var<T> stack(std::span<const Var<T>> xs);

}  // namespace salcar
