#include "salcar/autodiff.hpp"

namespace salcar {

template <typename T>
ParameterSet<T>::ParameterSet(const ParameterSet& other) {
  for (const auto& p : other.entries_) {
    auto& copy = add(p->name, p->value);
    copy.grad = p->grad;
    copy.grad_ready = p->grad_ready;
  }
}

template <typename T>
ParameterSet<T>& ParameterSet<T>::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, BasicTensor<T> value) {
  if (name.empty()) throw ShapeError("parameter name must be non-empty");
  if (index_.contains(name)) throw ShapeError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  auto p = std::make_unique<Parameter<T>>();
  p->name = std::move(name);
  p->grad = BasicTensor<T>(value.shape());
  p->value = std::move(value);
  entries_.push_back(std::move(p));
  return *entries_.back();
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return index_.contains(name);
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return *entries_[it->second];
}

template <typename T>
const Parameter<T>& ParameterSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return *entries_[it->second];
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p->value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : entries_) {
    if (p->grad.shape() != p->value.shape()) {
      p->grad = BasicTensor<T>(p->value.shape());
    } else {
      p->grad.fill(T{});
    }
    p->grad_ready = false;
  }
}

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::input(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::bind(Parameter<T>& param) {
  Node n;
  n.value = param.value;
  n.requires_grad = true;
  n.param = &param;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
std::span<T> Tape<T>::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad.data();
}

template <typename T>
BasicTensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> out) {
  if (out.tape != this) throw ShapeError("backward: variable belongs to another tape");
  if (nodes_[out.id].value.size() != 1) {
    throw ShapeError("backward: output must have one element, got " +
                     shape_string(nodes_[out.id].value.shape()));
  }
  if (auto slot = grad_slot(out.id); !slot.empty()) slot[0] += T{1};
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (!n.param) continue;
    Parameter<T>& p = *n.param;
    if (p.grad.shape() != p.value.shape()) p.grad = BasicTensor<T>(p.value.shape());
    if (!n.grad.empty()) {
      auto g = n.grad.data();
      auto dst = p.grad.data();
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
    }
    p.grad_ready = true;
  }
}

template <typename T>
Binding<T>::Binding(Tape<T>& tape, ParameterSet<T>& params) : tape_(&tape) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars_.emplace(params[i].name, tape.bind(params[i]));
  }
}

template <typename T>
Var<T> Binding<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ShapeError("parameter '" + name + "' is not bound");
  return it->second;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template struct Var<float>;
template struct Var<double>;
template class Tape<float>;
template class Tape<double>;
template class Binding<float>;
template class Binding<double>;

}  // namespace salcar
