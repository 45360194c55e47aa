#pragma once

#include <string>
#include <utility>
#include <vector>

#include "brmil/tensor.hpp"

namespace brmil {

/// Ordered collection of named trainable tensors. Registration order is the
/// checkpoint order; names must be unique.
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t) {
    for (const auto& [n, unused] : items_)
      if (n == name) throw ShapeError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    items_.emplace_back(name, t);
    return t;
  }

  Tensor get(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw ShapeError("unknown parameter: " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, unused] : items_)
      if (n == name) return true;
    return false;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [unused, t] : items_) out.push_back(t);
    return out;
  }

  void zero_grads() {
    for (auto& [unused, t] : items_) t.zero_grad();
  }

  std::size_t count() const { return items_.size(); }

  int scalar_count() const {
    int n = 0;
    for (const auto& [unused, t] : items_) n += t.numel();
    return n;
  }

  /// Appends every item of other under prefix + its name.
  void adopt(const std::string& prefix, const ParamSet& other) {
    for (const auto& [n, t] : other.items_) {
      for (const auto& [mine, unused] : items_)
        if (mine == prefix + n) throw ShapeError("duplicate parameter name: " + mine);
      items_.emplace_back(prefix + n, t);
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace brmil
