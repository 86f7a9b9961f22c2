#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mugen/core/tensor.hpp"

namespace mugen::nn {

/// Weight initialization scheme.
struct Init {
  enum class Kind { constant, normal, truncated_normal };
  Kind kind = Kind::constant;
  double value = 0.0;  // fill value or standard deviation

  static Init zeros() { return {Kind::constant, 0.0}; }
  static Init ones() { return {Kind::constant, 1.0}; }
  static Init normal(double stddev) { return {Kind::normal, stddev}; }
  static Init truncated_normal(double stddev) { return {Kind::truncated_normal, stddev}; }
  /// He initialization for ReLU networks.
  static Init kaiming(std::size_t fan_in) {
    return {Kind::normal, std::sqrt(2.0 / static_cast<double>(fan_in))};
  }
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// Owns every named parameter and buffer of a model, in registration order.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Tensor<T> parameter(const std::string& name, Shape dims, Init init) {
    Tensor<T> t(std::move(dims), T(0), true);
    fill(t, init);
    add(name, t, true);
    return t;
  }

  Tensor<T> buffer(const std::string& name, Shape dims, T value) {
    Tensor<T> t(std::move(dims), value, false);
    add(name, t, false);
    return t;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) {
      if (e.trainable) out.push_back(e.tensor);
    }
    return out;
  }

  const std::vector<NamedTensor<T>>& entries() const { return entries_; }

  const NamedTensor<T>* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  Tensor<T> at(const std::string& name) const {
    const auto* e = find(name);
    if (!e) throw ContractError("no parameter or buffer named '" + name + "'");
    return e->tensor;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.trainable ? e.tensor.numel() : 0;
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  void add(const std::string& name, const Tensor<T>& t, bool trainable) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    entries_.push_back({name, t, trainable});
  }

  void fill(Tensor<T>& t, const Init& init) {
    auto data = t.data();
    switch (init.kind) {
      case Init::Kind::constant:
        std::fill(data.begin(), data.end(), static_cast<T>(init.value));
        break;
      case Init::Kind::normal: {
        std::normal_distribution<double> dist(0.0, init.value);
        for (auto& v : data) v = static_cast<T>(dist(rng_));
        break;
      }
      case Init::Kind::truncated_normal: {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : data) {
          double z = dist(rng_);
          while (std::abs(z) > 2.0) z = dist(rng_);
          v = static_cast<T>(z * init.value);
        }
        break;
      }
    }
  }

  std::mt19937_64 rng_;
  std::vector<NamedTensor<T>> entries_;
};

}  // namespace mugen::nn
