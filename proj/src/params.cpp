// SPDX-License-Identifier: Apache-2.0

#include "super/params.hpp"

#include <stdexcept>

namespace super {

template <typename T>
Param<T>& ParamStore<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, items_.size());
  Tensor<T> grad(value.shape());
  items_.push_back(Param<T>{std::move(name), std::move(value), std::move(grad)});
  return items_.back();
}

template <typename T>
Param<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second];
}

template <typename T>
const Param<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : items_) p.grad.fill(T(0));
}

template <typename T>
BoundParams<T>::BoundParams(Tape<T>& tape, ParamStore<T>& store) {
  for (auto& p : store.items()) vars_.emplace(p.name, tape.parameter(p.value, p.grad));
}

template <typename T>
const Var<T>& BoundParams<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + name);
  return it->second;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class BoundParams<float>;
template class BoundParams<double>;

}  // namespace super
