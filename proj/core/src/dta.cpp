#include "liftvsr/dta.hpp"

#include <cmath>
#include <numeric>

#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"

namespace liftvsr::dta {

namespace {

void check_finite(const ad::Tensor& t, const std::string& where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(where + ": non-finite activation");
  }
}

}  // namespace

std::vector<std::size_t> DtaConfig::resolved_flow_channels() const {
  if (!flow_net_channels.empty()) return flow_net_channels;
  return {head_dim(), head_dim()};
}

void DtaConfig::validate() const {
  if (num_heads == 0 || dim == 0 || dim % num_heads != 0) {
    throw ConfigError("dta: feature dim " + std::to_string(dim) + " must be a positive multiple of " +
                      std::to_string(num_heads) + " heads");
  }
  if (segment_length == 0) throw ConfigError("dta: segment length must be >= 1");
  if (rope_enabled && head_dim() % 2 != 0) {
    throw ConfigError("dta: RoPE needs an even head dim, got " + std::to_string(head_dim()));
  }
  if (ffn_mult == 0) throw ConfigError("dta: ffn multiplier must be >= 1");
}

ad::Tensor TokenFlowField::head(std::size_t k) const {
  if (k >= heads) throw IndexError("token flow: head " + std::to_string(k) + " out of range");
  return ad::slice(flows, 3, 2 * k, 2);
}

DynamicTemporalAttention::DynamicTemporalAttention(DtaConfig config, nn::ParameterStore& store,
                                                   const std::string& prefix)
    : config_(std::move(config)), prefix_(prefix) {
  config_.validate();
  const std::size_t d = config_.dim;
  w_q_ = store.add(prefix + ".w_q", {d, d}, nn::Init::kXavier);
  w_k_ = store.add(prefix + ".w_k", {d, d}, nn::Init::kXavier);
  w_v_ = store.add(prefix + ".w_v", {d, d}, nn::Init::kXavier);
  if (config_.flow_enabled) {
    std::size_t in = 2 * d;
    const auto hidden = config_.resolved_flow_channels();
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      const std::string name = prefix + ".flow" + std::to_string(l);
      flow_net_.push_back({store.add(name + ".kernel", {3, 3, in, hidden[l]}, nn::Init::kXavier),
                           store.add(name + ".bias", {hidden[l]}, nn::Init::kZeros)});
      in = hidden[l];
    }
    // Zero-initialized head: training starts from co-located attention.
    const std::string name = prefix + ".flow_out";
    flow_net_.push_back({store.add(name + ".kernel", {1, 1, in, 2 * config_.num_heads}, nn::Init::kZeros),
                         store.add(name + ".bias", {2 * config_.num_heads}, nn::Init::kZeros)});
  }
  const std::size_t hidden = config_.ffn_mult * d;
  ffn_in_ = nn::Linear(store, prefix + ".ffn_in", d, hidden);
  ffn_out_ = nn::Linear(store, prefix + ".ffn_out", hidden, d);
}

HeadProjection DynamicTemporalAttention::project_qkv(const ad::Tensor& features, std::size_t head,
                                                     std::size_t reference) const {
  if (features.rank() != 4 || features.dim(3) != config_.dim) {
    throw DimensionError("dta.project_qkv: expected [n,h,w," + std::to_string(config_.dim) +
                         "], got " + ad::shape_str(features.shape()));
  }
  if (head >= config_.num_heads) {
    throw IndexError("dta.project_qkv: head " + std::to_string(head) + " >= " +
                     std::to_string(config_.num_heads));
  }
  if (reference >= features.dim(0)) {
    throw IndexError("dta.project_qkv: reference " + std::to_string(reference) + " >= " +
                     std::to_string(features.dim(0)) + " frames");
  }
  const std::size_t dh = config_.head_dim();
  const std::size_t h = features.dim(1), w = features.dim(2);
  auto ref = ad::slice(features, 0, reference, 1);
  HeadProjection out;
  out.query = ad::reshape(ad::slice(ad::linear(ref, w_q_), 3, head * dh, dh), {h, w, dh});
  out.key = ad::slice(ad::linear(features, w_k_), 3, head * dh, dh);
  out.value = ad::slice(ad::linear(features, w_v_), 3, head * dh, dh);
  return out;
}

TokenFlowField DynamicTemporalAttention::estimate_flow(const ad::Tensor& queries,
                                                       const ad::Tensor& keys) const {
  if (queries.rank() != 4 || keys.rank() != 4 || queries.dim(1) != keys.dim(1) ||
      queries.dim(2) != keys.dim(2) || queries.dim(3) != config_.dim ||
      keys.dim(3) != config_.dim) {
    throw DimensionError("dta.estimate_flow: queries " + ad::shape_str(queries.shape()) +
                         " and keys " + ad::shape_str(keys.shape()) + " are incompatible");
  }
  const std::size_t R = queries.dim(0), n = keys.dim(0);
  const std::size_t h = keys.dim(1), w = keys.dim(2);
  TokenFlowField field;
  field.heads = config_.num_heads;
  if (!config_.flow_enabled || force_zero_flow_) {
    field.flows = ad::Tensor::zeros({R * n, h, w, 2 * config_.num_heads});
    return field;
  }
  // The first layer sees concat(query_r, key_j) per (r, j) pair. Its kernel
  // splits over the two channel halves, so each half is convolved once per
  // frame and the pair sums are broadcast afterwards.
  std::vector<std::size_t> q_idx(R * n), k_idx(R * n);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      q_idx[r * n + j] = r;
      k_idx[r * n + j] = j;
    }
  }
  const std::size_t d = config_.dim;
  const auto& first = flow_net_.front().kernel;
  auto from_q = ad::conv2d(queries, ad::slice(first, 2, 0, d));
  auto from_k = ad::conv2d(keys, ad::slice(first, 2, d, d));
  auto x = ad::add_bias(
      ad::add(ad::gather_leading(from_q, q_idx), ad::gather_leading(from_k, k_idx)),
      flow_net_.front().bias);
  for (std::size_t l = 1; l < flow_net_.size(); ++l) {
    x = ad::add_bias(ad::conv2d(ad::silu(x), flow_net_[l].kernel), flow_net_[l].bias);
  }
  field.flows = x;
  return field;
}

DtaOutput DynamicTemporalAttention::attend(const ad::Tensor& features,
                                           const std::vector<std::size_t>& refs,
                                           bool record_attention) const {
  if (features.rank() != 4 || features.dim(3) != config_.dim) {
    throw DimensionError("dta: expected [n,h,w," + std::to_string(config_.dim) + "], got " +
                         ad::shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), h = features.dim(1), w = features.dim(2);
  const std::size_t d = config_.dim, H = config_.num_heads, dh = config_.head_dim();
  const std::size_t R = refs.size();
  for (auto i : refs) {
    if (i >= n) {
      throw IndexError("dta: reference frame " + std::to_string(i) + " >= " + std::to_string(n));
    }
  }

  auto x = ad::layer_norm(features);
  auto q = ad::linear(ad::gather_leading(x, refs), w_q_);  // [R,h,w,d]
  auto k = ad::linear(x, w_k_);                              // [n,h,w,d]
  auto v = ad::linear(x, w_v_);

  std::vector<std::size_t> rep(R * n);
  for (std::size_t r = 0; r < R; ++r) std::iota(rep.begin() + r * n, rep.begin() + (r + 1) * n, 0);
  auto k_rep = ad::gather_leading(k, rep);  // [R*n,h,w,d]
  auto v_rep = ad::gather_leading(v, rep);
  if (config_.flow_enabled && !force_zero_flow_) {
    auto field = estimate_flow(q, k);
    k_rep = ad::bilinear_warp(k_rep, field.flows);
    v_rep = ad::bilinear_warp(v_rep, field.flows);
  }

  // Location-major token layout: one attention call per (ref, y, x, head).
  const std::size_t B = R * h * w * H;
  auto to_tokens = [&](const ad::Tensor& t) {
    return ad::reshape(ad::permute(ad::reshape(t, {R, n, h, w, H, dh}), {0, 2, 3, 4, 1, 5}),
                       {B, n, dh});
  };
  auto q_tok = ad::reshape(q, {B, 1, dh});
  auto k_tok = to_tokens(k_rep);
  auto v_tok = to_tokens(v_rep);
  if (config_.rope_enabled) {
    std::vector<double> q_pos(B), k_pos(B * n);
    const std::size_t per_ref = h * w * H;
    for (std::size_t b = 0; b < B; ++b) {
      q_pos[b] = static_cast<double>(refs[b / per_ref]);
      for (std::size_t j = 0; j < n; ++j) k_pos[b * n + j] = static_cast<double>(j);
    }
    q_tok = ad::rope(q_tok, q_pos);
    k_tok = ad::rope(k_tok, k_pos);
  }
  auto scores = ad::scale(ad::bmm(q_tok, k_tok, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto probs = ad::softmax(scores);  // [B,1,n]
  auto attn = ad::reshape(ad::bmm(probs, v_tok), {R, h, w, d});

  DtaOutput out;
  out.score_entries = scores.numel();
  out.keys_per_query = n;
  if (record_attention) {
    // [R,h,w,H,n] -> [R,H,h,w,n]
    out.attention.resize(probs.numel());
    const auto& pv = probs.values();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          for (std::size_t hd = 0; hd < H; ++hd)
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t src = ((((r * h + y) * w + xx) * H + hd) * n) + j;
              const std::size_t dst = ((((r * H + hd) * h + y) * w + xx) * n) + j;
              out.attention[dst] = pv[src];
            }
  }

  auto y = ad::add(ad::gather_leading(features, refs), attn);
  check_finite(y, prefix_ + ".attention");
  auto z = ad::add(y, ffn_out_(ad::silu(ffn_in_(ad::layer_norm(y)))));
  check_finite(z, prefix_ + ".ffn");
  out.features = z;
  return out;
}

DtaOutput DynamicTemporalAttention::forward(const ad::Tensor& features, std::size_t reference,
                                            bool record_attention) const {
  return attend(features, {reference}, record_attention);
}

DtaOutput DynamicTemporalAttention::segment(const ad::Tensor& features,
                                            bool record_attention) const {
  if (features.rank() == 0) throw DimensionError("dta.segment: scalar input");
  std::vector<std::size_t> refs(features.dim(0));
  std::iota(refs.begin(), refs.end(), 0);
  return attend(features, refs, record_attention);
}

std::uint64_t DynamicTemporalAttention::dta_score_entries(std::size_t n, std::size_t h,
                                                          std::size_t w, std::size_t heads) {
  return static_cast<std::uint64_t>(h) * w * n * n * heads;
}

std::uint64_t DynamicTemporalAttention::full_attention_score_entries(std::size_t n, std::size_t h,
                                                                     std::size_t w,
                                                                     std::size_t heads) {
  const std::uint64_t tokens = static_cast<std::uint64_t>(h) * w * n;
  return tokens * tokens * heads;
}

}  // namespace liftvsr::dta
