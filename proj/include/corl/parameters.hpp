#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "corl/autograd.hpp"

namespace corl {

/// Named parameter tensors in insertion order.
template <typename Scalar>
class ParameterSet {
 public:
  void add(std::string name, Tensor<Scalar> value) {
    if (index_.contains(name)) throw InputError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<Scalar>& at(const std::string& name) { return entries_[lookup(name)].second; }
  const Tensor<Scalar>& at(const std::string& name) const { return entries_[lookup(name)].second; }

  std::size_t size() const noexcept { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<Other>());
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape, looked up by name.
template <typename Scalar>
class BoundParameters {
 public:
  BoundParameters() = default;

  /// Places every parameter on `tape`; those accepted by `trainable` become variables.
  BoundParameters(Tape<Scalar>& tape, const ParameterSet<Scalar>& params,
                  const std::function<bool(const std::string&)>& trainable = {}) {
    for (const auto& [name, value] : params) {
      const bool grad = trainable ? trainable(name) : false;
      vars_.emplace_back(name, grad ? tape.variable(value) : tape.constant(value));
      index_.emplace(name, vars_.size() - 1);
    }
  }

  /// Pairs names with already-recorded variables (names[i] <-> vars[i]).
  BoundParameters(std::span<const std::string> names, std::span<const Var<Scalar>> vars) {
    if (vars.size() < names.size()) throw DimensionError("fewer variables than parameter names");
    for (std::size_t i = 0; i < names.size(); ++i) {
      vars_.emplace_back(names[i], vars[i]);
      index_.emplace(names[i], i);
    }
  }

  const Var<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unbound parameter " + name);
    return vars_[it->second].second;
  }

  auto begin() const { return vars_.begin(); }
  auto end() const { return vars_.end(); }

 private:
  std::vector<std::pair<std::string, Var<Scalar>>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace corl
