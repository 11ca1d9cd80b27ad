#pragma once

#include <map>
#include <string>
#include <vector>

#include "stytr/error.hpp"
#include "stytr/tensor.hpp"

namespace stytr {

// Named tensors in insertion order. Names are unique.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<T> tensor) {
    if (index_.contains(name)) {
      throw Error("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(tensor));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Tensor<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw LoadError("missing tensor '" + name + "'");
    return tensors_[it->second];
  }

  Tensor<T>& at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw LoadError("missing tensor '" + name + "'");
    return tensors_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return tensors_.size(); }

  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }

  void zero_grad() const {
    for (const auto& t : tensors_) t.zero_grad();
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  // Deep copy: fresh leaves with the same values and requires_grad flags.
  ParamStore clone() const {
    ParamStore out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& t = tensors_[i];
      out.add(names_[i],
              Tensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()),
                        t.requires_grad()));
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace stytr
