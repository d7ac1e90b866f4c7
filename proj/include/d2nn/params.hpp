#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "d2nn/tensor.hpp"

namespace d2nn {

/// Owns named parameters in creation order. Addresses are stable for the
/// store's lifetime, which graphs rely on when binding leaves.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    index_.emplace(name, params_.size() - 1);
    return *params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named " + name);
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data) v = u(rng);
  return t;
}

enum class InitScheme { Glorot, Uniform };

/// Glorot: uniform with bound sqrt(6 / (fan_in + fan_out)), where fan_out is
/// the leading dimension and fan_in the product of the rest. Uniform: +-0.1,
/// except convolution kernels (rank 3) at 1 / sqrt(fan_in).
inline Tensor init_weight(Shape shape, InitScheme scheme, std::mt19937_64& rng) {
  const std::size_t fan_out = shape.at(0);
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  double bound = 0.1;
  if (scheme == InitScheme::Glorot)
    bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  else if (shape.size() == 3)
    bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(std::move(shape), bound, rng);
}

/// Bound for randomly initialised embedding rows. The Glorot scheme uses the
/// scale of pretrained word vectors.
inline double embedding_init_bound(InitScheme scheme) { return scheme == InitScheme::Glorot ? 0.5 : 0.1; }

}  // namespace d2nn
