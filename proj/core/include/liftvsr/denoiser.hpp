#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "liftvsr/amc.hpp"
#include "liftvsr/dta.hpp"
#include "liftvsr/nn.hpp"
#include "liftvsr/tensor.hpp"

namespace liftvsr::model {

struct DenoiserConfig {
  std::size_t blocks = 6;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t patch = 2;
  // DTA + AMC sit in blocks with index % interval == interval - 1; 0 disables
  // them entirely (per-frame image denoiser).
  std::size_t dta_interval = 3;
  std::size_t dta_heads = 0;  // 0: same as heads
  std::vector<std::size_t> flow_channels;
  bool rope = true;
  bool dta_flow = true;  // false: hosting blocks use plain temporal attention
  bool amc = true;
  std::size_t cache_length = 2;
  std::size_t segment_length = 8;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 3;
  std::size_t ffn_mult = 4;
  bool zero_init_output = true;
  std::uint64_t init_seed = 0;

  bool hosts_temporal(std::size_t block) const;
  std::vector<std::size_t> hosting_blocks() const;
  std::size_t temporal_heads() const { return dta_heads == 0 ? heads : dta_heads; }
  void validate() const;
};

// Cache plumbing for one segment-level forward pass. `read` holds one cache
// per hosting block (nullptr: zero caches); when `write` is set it receives
// the gated update computed from this pass.
struct CacheIo {
  const std::vector<amc::MemoryCache>* read = nullptr;
  std::vector<amc::MemoryCache>* write = nullptr;
};

// Noise-prediction backbone: patchified per-frame transformer blocks with
// adaptive scale/shift timestep modulation, temporal blocks at a fixed
// interval, and the upsampled low-quality frames concatenated to the input.
class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig config);

  const DenoiserConfig& config() const { return config_; }
  nn::ParameterStore& store() { return *store_; }
  const nn::ParameterStore& store() const { return *store_; }
  std::vector<ad::Parameter> trainable_parameters() const { return store_->trainable(); }

  // z, cond: [n, H, W, channels]; returns the predicted noise, same shape.
  ad::Tensor denoise(const ad::Tensor& z, std::size_t t, const ad::Tensor& cond,
                     CacheIo caches = {}) const;

  // Fresh zero caches for a token grid of the given pixel size.
  std::vector<amc::MemoryCache> zero_caches(std::size_t height, std::size_t width) const;

  std::size_t hosting_block_count() const { return temporal_.size(); }
  const dta::DynamicTemporalAttention& temporal_attention(std::size_t k) const {
    return *temporal_[k].dta;
  }

  // Scalar parameter count implied by a configuration.
  static std::size_t expected_parameter_count(const DenoiserConfig& config);

 private:
  struct Block {
    nn::Linear ada;  // silu(temb) -> [shift, scale]
    ad::Tensor w_q, w_k, w_v;
    nn::Linear attn_out;
    nn::Linear ffn_in, ffn_out;
    int temporal = -1;  // index into temporal_ or -1
  };
  struct Temporal {
    std::size_t block;
    std::unique_ptr<dta::DynamicTemporalAttention> dta;
    std::unique_ptr<amc::AttentionMemoryCache> amc;
  };

  DenoiserConfig config_;
  std::unique_ptr<nn::ParameterStore> store_;
  nn::Linear embed_;
  nn::Linear t_mlp_in_, t_mlp_out_;
  std::vector<Block> blocks_;
  std::vector<Temporal> temporal_;
  nn::Linear final_ada_;
  nn::Linear head_;
};

}  // namespace liftvsr::model
