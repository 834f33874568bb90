// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "super/autodiff.hpp"
#include "super/tensor.hpp"

namespace super {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named learnable tensors in a fixed canonical order. Every name is unique.
template <typename T>
class ParamStore {
 public:
  /// Adds a tensor; throws if the name already exists.
  Param<T>& add(std::string name, Tensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Param<T>& at(const std::string& name);
  const Param<T>& at(const std::string& name) const;

  std::vector<Param<T>>& items() { return items_; }
  const std::vector<Param<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t total_elements() const;

  void zero_grad();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : items_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Param<T>> items_;
  std::map<std::string, std::size_t> index_;
};

/// The parameters registered on one tape, looked up by canonical name.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, ParamStore<T>& store);
  const Var<T>& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

 private:
  std::map<std::string, Var<T>> vars_;
};

}  // namespace super
