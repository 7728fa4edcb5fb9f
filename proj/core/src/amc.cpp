#include "liftvsr/amc.hpp"

#include <cmath>

#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"

namespace liftvsr::amc {

MemoryCache MemoryCache::zeros(std::size_t length, std::size_t h, std::size_t w, std::size_t d,
                               std::size_t block_id) {
  if (length == 0) throw ConfigError("memory cache: length must be >= 1");
  return {ad::Tensor::zeros({length, h, w, d}), block_id, false};
}

namespace {

void check_cache_matches(const char* op, const ad::Tensor& f, const MemoryCache& cache) {
  const auto& s = cache.slots.shape();
  if (f.rank() != 4 || s.size() != 4 || f.dim(1) != s[1] || f.dim(2) != s[2] || f.dim(3) != s[3]) {
    throw DimensionError(std::string(op) + ": features " + ad::shape_str(f.shape()) +
                         " do not match cache " + ad::shape_str(s));
  }
}

}  // namespace

ad::Tensor cache_attention(const ad::Tensor& f_out, const MemoryCache& cache,
                           const dta::DynamicTemporalAttention& dta) {
  check_cache_matches("cache_query", f_out, cache);
  const auto& cfg = dta.config();
  if (f_out.dim(3) != cfg.dim) {
    throw DimensionError("cache_query: feature width " + std::to_string(f_out.dim(3)) +
                         " vs attention width " + std::to_string(cfg.dim));
  }
  const std::size_t n = f_out.dim(0), h = f_out.dim(1), w = f_out.dim(2);
  const std::size_t l = cache.length(), H = cfg.num_heads, dh = cfg.head_dim();
  const std::size_t B = h * w * H;
  auto to_tokens = [&](const ad::Tensor& t, std::size_t len) {
    return ad::reshape(ad::permute(ad::reshape(t, {len, h, w, H, dh}), {1, 2, 3, 0, 4}),
                       {B, len, dh});
  };
  auto q = to_tokens(ad::linear(ad::layer_norm(f_out), dta.w_q()), n);
  auto k = to_tokens(ad::linear(cache.slots, dta.w_k()), l);
  auto v = to_tokens(ad::linear(cache.slots, dta.w_v()), l);
  auto probs = ad::softmax(
      ad::scale(ad::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))));  // [B,n,l]
  auto out = ad::bmm(probs, v);                                                    // [B,n,dh]
  return ad::reshape(ad::permute(ad::reshape(out, {h, w, H, n, dh}), {3, 0, 1, 2, 4}),
                     {n, h, w, cfg.dim});
}

ad::Tensor cache_query(const ad::Tensor& f_out, const MemoryCache& cache,
                       const dta::DynamicTemporalAttention& dta, const ad::Tensor& fusion_scale) {
  return ad::add(f_out, ad::mul_scalar(cache_attention(f_out, cache, dta), fusion_scale));
}

MemoryCache cache_update(const ad::Tensor& f, const MemoryCache& cache, const GateParams& gate) {
  check_cache_matches("cache_update", f, cache);
  const std::size_t l = cache.length();
  if (f.dim(0) < l) {
    throw ConfigError("cache_update: segment of " + std::to_string(f.dim(0)) +
                      " frames cannot fill " + std::to_string(l) + " cache slots");
  }
  const std::size_t d = f.dim(3);
  if (gate.w_gate.rank() != 2 || gate.w_gate.dim(0) != 2 * d || gate.w_gate.dim(1) != d) {
    throw DimensionError("cache_update: gate weight " + ad::shape_str(gate.w_gate.shape()) +
                         " must be [2d, d] with d = " + std::to_string(d));
  }
  auto pooled = ad::mean_pool_temporal(f, l);
  auto g = ad::sigmoid(
      ad::add_bias(ad::linear(ad::concat({pooled, cache.slots}, 3), gate.w_gate), gate.bias));
  auto next = ad::add(ad::mul(ad::affine(g, -1.0, 1.0), cache.slots), ad::mul(g, pooled));
  return {next, cache.block_id, true};
}

AttentionMemoryCache::AttentionMemoryCache(std::size_t cache_length, std::size_t dim,
                                           nn::ParameterStore& store, const std::string& prefix)
    : cache_length_(cache_length) {
  if (cache_length == 0) throw ConfigError("amc: cache length must be >= 1");
  gate_.w_gate = store.add(prefix + ".w_gate", {2 * dim, dim}, nn::Init::kXavier);
  gate_.bias = store.add(prefix + ".gate_bias", {dim}, nn::Init::kZeros);
  fusion_scale_ = store.add(prefix + ".fusion_scale", {1}, nn::Init::kZeros);
}

}  // namespace liftvsr::amc
