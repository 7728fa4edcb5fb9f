#pragma once

#include <cstdint>
#include <string>

#include "liftvsr/dta.hpp"
#include "liftvsr/nn.hpp"
#include "liftvsr/tensor.hpp"

// Attention memory cache: l pooled feature slots carried across segments,
// read by cross-attention and refreshed by a sigmoid-gated convex update.
namespace liftvsr::amc {

struct MemoryCache {
  ad::Tensor slots;  // [l, h, w, d]
  std::size_t block_id = 0;
  bool initialized = false;

  static MemoryCache zeros(std::size_t length, std::size_t h, std::size_t w, std::size_t d,
                           std::size_t block_id = 0);

  std::size_t length() const { return slots.dim(0); }
  std::size_t bytes() const { return slots.numel() * sizeof(double); }
  MemoryCache detached() const { return {slots.detach(), block_id, initialized}; }
};

struct GateParams {
  ad::Tensor w_gate;  // [2d, d]
  ad::Tensor bias;    // [d]
};

// Cross-attention from every token of f_out [n,h,w,d] to the l cache slots at
// the same location, using the DTA projections. Returns the queried tokens
// [n,h,w,d] before fusion.
ad::Tensor cache_attention(const ad::Tensor& f_out, const MemoryCache& cache,
                           const dta::DynamicTemporalAttention& dta);

// f_out + fusion_scale * cache_attention(...). fusion_scale holds one value.
ad::Tensor cache_query(const ad::Tensor& f_out, const MemoryCache& cache,
                       const dta::DynamicTemporalAttention& dta, const ad::Tensor& fusion_scale);

// g = sigmoid([pool(f), cache] W_gate + b); cache' = (1 - g) * cache + g * pool(f).
MemoryCache cache_update(const ad::Tensor& f, const MemoryCache& cache, const GateParams& gate);

// Gate and fusion parameters of one hosting block.
class AttentionMemoryCache {
 public:
  AttentionMemoryCache(std::size_t cache_length, std::size_t dim, nn::ParameterStore& store,
                       const std::string& prefix);

  std::size_t cache_length() const { return cache_length_; }
  const GateParams& gate() const { return gate_; }
  const ad::Tensor& fusion_scale() const { return fusion_scale_; }

 private:
  std::size_t cache_length_;
  GateParams gate_;
  ad::Tensor fusion_scale_;
};

}  // namespace liftvsr::amc
