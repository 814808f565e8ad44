#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pdarts/tensor.hpp"

namespace pdarts {

/// Named parameters plus everything an optimizer keeps per parameter.
/// Names are stable paths ("cell3/edge2/sep_conv_3x3/dw1") so checkpoints
/// written by one build load into another.
template <typename T>
class ParamStore {
 public:
  /// Registers a trainable tensor; names must be unique.
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (params_.count(name) || buffers_.count(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    params_.emplace(name, t);
    return t;
  }

  /// Registers non-trainable state (batch-norm running statistics).
  Tensor<T> add_buffer(const std::string& name, Tensor<T> t) {
    if (params_.count(name) || buffers_.count(name)) throw InvalidArgument("duplicate buffer name '" + name + "'");
    buffers_.emplace(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor<T>>& params() const { return params_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

  /// Optimizer moment buffer `kind` for parameter `name`, zero-filled on first use.
  std::vector<T>& slot(const std::string& kind, const std::string& name) {
    auto& s = slots_[kind][name];
    if (s.empty()) s.assign(static_cast<std::size_t>(get(name).numel()), T(0));
    return s;
  }
  const std::map<std::string, std::map<std::string, std::vector<T>>>& slots() const { return slots_; }
  std::map<std::string, std::map<std::string, std::vector<T>>>& mutable_slots() { return slots_; }

  /// Per-parameter update counters (Adam bias correction).
  std::int64_t& step(const std::string& name) { return steps_[name]; }
  const std::map<std::string, std::int64_t>& steps() const { return steps_; }
  std::map<std::string, std::int64_t>& mutable_steps() { return steps_; }

  void zero_grad() {
    for (auto& [name, t] : params_) {
      Tensor<T> h = t;
      h.zero_grad();
    }
  }

  void set_requires_grad(bool value) {
    for (auto& [name, t] : params_) {
      Tensor<T> h = t;
      h.set_requires_grad(value);
    }
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, Tensor<T>> buffers_;
  std::map<std::string, std::map<std::string, std::vector<T>>> slots_;
  std::map<std::string, std::int64_t> steps_;
};

}  // namespace pdarts
