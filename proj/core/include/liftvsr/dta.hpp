#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "liftvsr/nn.hpp"
#include "liftvsr/tensor.hpp"

// Dynamic temporal attention: for a reference frame i, every frame's keys and
// values are warped onto frame i's grid by a learned per-head token flow, then
// each spatial location attends over the n aligned tokens at that location.
namespace liftvsr::dta {

struct DtaConfig {
  std::size_t num_heads = 4;
  std::size_t dim = 64;
  // Hidden widths of the flow-estimation trunk; empty means {dim/heads, dim/heads}.
  std::vector<std::size_t> flow_net_channels;
  std::size_t segment_length = 8;
  bool rope_enabled = true;
  // When false the flow net is not built and keys/values stay co-located,
  // i.e. plain temporal attention.
  bool flow_enabled = true;
  std::size_t ffn_mult = 4;

  std::size_t head_dim() const { return dim / num_heads; }
  std::vector<std::size_t> resolved_flow_channels() const;
  void validate() const;
};

// Flow for every (reference, frame) pair: flows is [R*n, h, w, 2*heads], row
// r*n + j maps frame j's tokens onto reference r's grid. Head k owns channels
// (2k, 2k+1) = (dx, dy) in feature-grid pixels.
struct TokenFlowField {
  ad::Tensor flows;
  std::size_t heads = 0;

  // [R*n, h, w, 2] field of one head.
  ad::Tensor head(std::size_t k) const;
};

struct DtaOutput {
  // [R, h, w, d]: one output frame per requested reference.
  ad::Tensor features;
  // Softmax weights [R, heads, h, w, n], filled when recording was requested.
  std::vector<double> attention;
  // Score-matrix entries actually computed, and keys attended per query.
  std::uint64_t score_entries = 0;
  std::size_t keys_per_query = 0;
};

struct HeadProjection {
  ad::Tensor query;  // [h, w, dh] from the reference frame only
  ad::Tensor key;    // [n, h, w, dh]
  ad::Tensor value;  // [n, h, w, dh]
};

class DynamicTemporalAttention {
 public:
  DynamicTemporalAttention(DtaConfig config, nn::ParameterStore& store, const std::string& prefix);

  const DtaConfig& config() const { return config_; }

  HeadProjection project_qkv(const ad::Tensor& features, std::size_t head,
                             std::size_t reference) const;

  // queries [R,h,w,d] (projected reference frames), keys [n,h,w,d].
  TokenFlowField estimate_flow(const ad::Tensor& queries, const ad::Tensor& keys) const;

  // Output for a single reference frame: features are [1,h,w,d].
  DtaOutput forward(const ad::Tensor& features, std::size_t reference,
                    bool record_attention = false) const;

  // Every frame as reference: features are [n,h,w,d].
  DtaOutput segment(const ad::Tensor& features, bool record_attention = false) const;

  // Replaces the flow-net output by zeros (keys/values are then co-located).
  void set_force_zero_flow(bool on) { force_zero_flow_ = on; }

  const ad::Tensor& w_q() const { return w_q_; }
  const ad::Tensor& w_k() const { return w_k_; }
  const ad::Tensor& w_v() const { return w_v_; }

  static std::uint64_t dta_score_entries(std::size_t n, std::size_t h, std::size_t w,
                                         std::size_t heads);
  static std::uint64_t full_attention_score_entries(std::size_t n, std::size_t h, std::size_t w,
                                                    std::size_t heads);

 private:
  DtaOutput attend(const ad::Tensor& features, const std::vector<std::size_t>& refs,
                   bool record_attention) const;

  DtaConfig config_;
  std::string prefix_;
  ad::Tensor w_q_, w_k_, w_v_;
  struct ConvLayer {
    ad::Tensor kernel;
    ad::Tensor bias;
  };
  std::vector<ConvLayer> flow_net_;
  nn::Linear ffn_in_, ffn_out_;
  bool force_zero_flow_ = false;
};

}  // namespace liftvsr::dta
