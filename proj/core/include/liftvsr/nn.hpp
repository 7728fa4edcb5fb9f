#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "liftvsr/tensor.hpp"

namespace liftvsr::nn {

enum class Init {
  kZeros,
  kOnes,
  kXavier,  // uniform, fan-in/fan-out from the last two axes (times kernel area)
};

// Owns every parameter of a model under unique names. Initial values depend
// only on (seed, name), never on registration order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  ad::Tensor add(const std::string& name, ad::Shape shape, Init init, bool trainable = true);

  const std::vector<ad::Parameter>& params() const { return params_; }
  std::vector<ad::Parameter> trainable() const;
  const ad::Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Total scalar count over all registered parameters.
  std::size_t scalar_count() const;

 private:
  std::uint64_t seed_;
  std::vector<ad::Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Dense layer: x W + b.
struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         Init weight_init = Init::kXavier);
  ad::Tensor operator()(const ad::Tensor& x) const;
};

// Scaled dot-product attention with heads split from the last axis.
// q [B,L,d], k/v [B,S,d] -> [B,L,d].
ad::Tensor multihead_attention(const ad::Tensor& q, const ad::Tensor& k, const ad::Tensor& v,
                               std::size_t heads);

// Fixed sinusoidal embedding of scalar positions -> [count, dim] (dim even).
std::vector<double> sinusoidal_embedding(const std::vector<double>& positions, std::size_t dim,
                                         double max_period = 10000.0);

// Fixed 2-D sin/cos table for an h x w token grid -> [h*w, dim] (dim % 4 == 0).
std::vector<double> grid_embedding(std::size_t h, std::size_t w, std::size_t dim);

}  // namespace liftvsr::nn
