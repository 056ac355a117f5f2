#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alcfcn/errors.hpp"
#include "alcfcn/tensor.hpp"

namespace alcfcn {

// Named trainable tensors in insertion order.
template <typename T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
  }

  const Tensor<T>& get(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
    return entries_[it->second].second;
  }
  Tensor<T>& get(std::string_view name) {
    return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).get(name));
  }
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>(true));
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment optimizer with bias correction. State is laid out in the
// parameter store's entry order.
template <typename T>
class Adam {
 public:
  Adam(const ParamStore<T>& params, AdamOptions options) : options_(options) {
    for (const auto& e : params.entries()) {
      first_.emplace_back(e.second.numel(), 0.0);
      second_.emplace_back(e.second.numel(), 0.0);
    }
  }

  void step(ParamStore<T>& params) {
    if (params.size() != first_.size()) throw ContractError("Adam: parameter store changed since construction");
    ++step_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& tensor = params.entries()[p].second;
      if (!tensor.has_grad()) continue;
      auto grad = tensor.grad();
      auto value = tensor.mutable_data();
      if (value.size() != first_[p].size()) throw ContractError("Adam: state shape mismatch");
      auto& m = first_[p];
      auto& v = second_[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
        v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
        const double update = options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
        value[i] = static_cast<T>(value[i] - update);
      }
    }
  }

  long steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long step_ = 0;
};

}  // namespace alcfcn
