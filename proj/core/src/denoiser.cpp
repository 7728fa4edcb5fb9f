#include "liftvsr/denoiser.hpp"

#include <cmath>

#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"

namespace liftvsr::model {

bool DenoiserConfig::hosts_temporal(std::size_t block) const {
  return dta_interval != 0 && block % dta_interval == dta_interval - 1;
}

std::vector<std::size_t> DenoiserConfig::hosting_blocks() const {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (hosts_temporal(b)) out.push_back(b);
  }
  return out;
}

void DenoiserConfig::validate() const {
  if (blocks == 0) throw ConfigError("denoiser: need at least one block");
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("denoiser: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (width % 4 != 0) throw ConfigError("denoiser: width must be a multiple of 4");
  if (patch == 0 || image_height % patch != 0 || image_width % patch != 0) {
    throw ConfigError("denoiser: patch size " + std::to_string(patch) + " must divide " +
                      std::to_string(image_height) + "x" + std::to_string(image_width));
  }
  if (channels == 0) throw ConfigError("denoiser: channels must be >= 1");
  if (cache_length == 0) throw ConfigError("denoiser: cache length must be >= 1");
  if (segment_length == 0) throw ConfigError("denoiser: segment length must be >= 1");
  if (amc && dta_interval != 0 && cache_length > segment_length) {
    throw ConfigError("denoiser: cache length exceeds segment length");
  }
}

Denoiser::Denoiser(DenoiserConfig config)
    : config_(std::move(config)), store_(std::make_unique<nn::ParameterStore>(config_.init_seed)) {
  config_.validate();
  auto& s = *store_;
  const std::size_t d = config_.width, p = config_.patch, c = config_.channels;
  const std::size_t hidden = config_.ffn_mult * d;
  embed_ = nn::Linear(s, "embed", p * p * 2 * c, d);
  t_mlp_in_ = nn::Linear(s, "t_mlp.in", d, d);
  t_mlp_out_ = nn::Linear(s, "t_mlp.out", d, d);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string pre = "blocks." + std::to_string(b);
    Block blk;
    blk.ada = nn::Linear(s, pre + ".ada", d, 2 * d, nn::Init::kZeros);
    blk.w_q = s.add(pre + ".attn.w_q", {d, d}, nn::Init::kXavier);
    blk.w_k = s.add(pre + ".attn.w_k", {d, d}, nn::Init::kXavier);
    blk.w_v = s.add(pre + ".attn.w_v", {d, d}, nn::Init::kXavier);
    blk.attn_out = nn::Linear(s, pre + ".attn.out", d, d);
    blk.ffn_in = nn::Linear(s, pre + ".ffn_in", d, hidden);
    blk.ffn_out = nn::Linear(s, pre + ".ffn_out", hidden, d);
    if (config_.hosts_temporal(b)) {
      dta::DtaConfig dc;
      dc.num_heads = config_.temporal_heads();
      dc.dim = d;
      dc.flow_net_channels = config_.flow_channels;
      dc.segment_length = config_.segment_length;
      dc.rope_enabled = config_.rope;
      dc.flow_enabled = config_.dta_flow;
      dc.ffn_mult = config_.ffn_mult;
      Temporal tm;
      tm.block = b;
      tm.dta = std::make_unique<dta::DynamicTemporalAttention>(dc, s, pre + ".dta");
      if (config_.amc) {
        tm.amc = std::make_unique<amc::AttentionMemoryCache>(config_.cache_length, d, s, pre + ".amc");
      }
      blk.temporal = static_cast<int>(temporal_.size());
      temporal_.push_back(std::move(tm));
    }
    blocks_.push_back(std::move(blk));
  }
  final_ada_ = nn::Linear(s, "final.ada", d, 2 * d, nn::Init::kZeros);
  head_ = nn::Linear(s, "final.head", d, p * p * c,
                     config_.zero_init_output ? nn::Init::kZeros : nn::Init::kXavier);
}

std::vector<amc::MemoryCache> Denoiser::zero_caches(std::size_t height, std::size_t width) const {
  std::vector<amc::MemoryCache> out;
  if (!config_.amc) return out;
  for (std::size_t k = 0; k < temporal_.size(); ++k) {
    out.push_back(amc::MemoryCache::zeros(config_.cache_length, height / config_.patch,
                                          width / config_.patch, config_.width, temporal_[k].block));
  }
  return out;
}

namespace {

ad::Tensor modulate(const ad::Tensor& x, const ad::Tensor& shift, const ad::Tensor& scale) {
  return ad::add_bias(ad::mul_bias(x, ad::affine(scale, 1.0, 1.0)), shift);
}

}  // namespace

ad::Tensor Denoiser::denoise(const ad::Tensor& z, std::size_t t, const ad::Tensor& cond,
                             CacheIo caches) const {
  const std::size_t c = config_.channels, p = config_.patch, d = config_.width;
  if (z.rank() != 4 || z.dim(3) != c) {
    throw DimensionError("denoise: expected [n,H,W," + std::to_string(c) + "] input, got " +
                         ad::shape_str(z.shape()));
  }
  if (cond.shape() != z.shape()) {
    throw DimensionError("denoise: condition " + ad::shape_str(cond.shape()) +
                         " does not match input " + ad::shape_str(z.shape()));
  }
  const std::size_t n = z.dim(0), H = z.dim(1), W = z.dim(2);
  if (H % p != 0 || W % p != 0) {
    throw DimensionError("denoise: frame " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by patch " + std::to_string(p));
  }
  const std::size_t gh = H / p, gw = W / p, L = gh * gw;

  // Patchify [n,H,W,2c] -> [n,gh,gw,p*p*2c].
  auto x = ad::concat({z, cond}, 3);
  x = ad::reshape(ad::permute(ad::reshape(x, {n, gh, p, gw, p, 2 * c}), {0, 1, 3, 2, 4, 5}),
                  {n, gh, gw, p * p * 2 * c});
  x = embed_(x);
  {
    const auto grid = nn::grid_embedding(gh, gw, d);
    std::vector<double> pos(n * grid.size());
    for (std::size_t f = 0; f < n; ++f) std::copy(grid.begin(), grid.end(), pos.begin() + f * grid.size());
    x = ad::add(x, ad::Tensor({n, gh, gw, d}, std::move(pos)));
  }

  auto temb = ad::Tensor({1, d}, nn::sinusoidal_embedding({static_cast<double>(t)}, d));
  temb = t_mlp_out_(ad::silu(t_mlp_in_(temb)));
  const auto temb_act = ad::silu(temb);
  auto split_mod = [&](const nn::Linear& ada) {
    auto m = ada(temb_act);  // [1, 2d]
    return std::pair{ad::reshape(ad::slice(m, 1, 0, d), {d}), ad::reshape(ad::slice(m, 1, d, d), {d})};
  };

  if (config_.amc && !temporal_.empty()) {
    const auto* read = caches.read;
    if (read && read->size() != temporal_.size()) {
      throw DimensionError("denoise: got " + std::to_string(read->size()) + " caches for " +
                           std::to_string(temporal_.size()) + " hosting blocks");
    }
  }
  std::vector<amc::MemoryCache> fresh;
  if (config_.amc && !temporal_.empty() && !caches.read) fresh = zero_caches(H, W);
  if (caches.write) caches.write->clear();

  for (const auto& blk : blocks_) {
    auto [shift, scale] = split_mod(blk.ada);
    {
      auto a = ad::reshape(modulate(ad::layer_norm(x), shift, scale), {n, L, d});
      auto attn = nn::multihead_attention(ad::linear(a, blk.w_q), ad::linear(a, blk.w_k),
                                          ad::linear(a, blk.w_v), config_.heads);
      x = ad::add(x, ad::reshape(blk.attn_out(attn), {n, gh, gw, d}));
    }
    if (blk.temporal >= 0) {
      const auto& tm = temporal_[static_cast<std::size_t>(blk.temporal)];
      auto f_out = tm.dta->segment(x).features;
      if (tm.amc) {
        const auto k = static_cast<std::size_t>(blk.temporal);
        const amc::MemoryCache& cache = caches.read ? (*caches.read)[k] : fresh[k];
        if (caches.write) {
          // Stop-gradient into the activations; the gate still trains
          // through the segment that reads this cache.
          caches.write->push_back(amc::cache_update(f_out.detach(), cache.detached(), tm.amc->gate()));
        }
        x = amc::cache_query(f_out, cache, *tm.dta, tm.amc->fusion_scale());
      } else {
        x = f_out;
      }
    }
    x = ad::add(x, blk.ffn_out(ad::silu(blk.ffn_in(modulate(ad::layer_norm(x), shift, scale)))));
  }

  auto [shift, scale] = split_mod(final_ada_);
  auto out = head_(modulate(ad::layer_norm(x), shift, scale));  // [n,gh,gw,p*p*c]
  out = ad::reshape(ad::permute(ad::reshape(out, {n, gh, gw, p, p, c}), {0, 1, 3, 2, 4, 5}),
                    {n, H, W, c});
  for (double v : out.values()) {
    if (!std::isfinite(v)) throw NumericError("denoise.head: non-finite activation");
  }
  return out;
}

std::size_t Denoiser::expected_parameter_count(const DenoiserConfig& cfg) {
  const std::size_t d = cfg.width, p = cfg.patch, c = cfg.channels;
  const std::size_t hidden = cfg.ffn_mult * d;
  const std::size_t ffn = d * hidden + hidden + hidden * d + d;
  std::size_t count = (p * p * 2 * c) * d + d;  // embed
  count += 2 * (d * d + d);                     // timestep MLP
  count += cfg.blocks * ((d * 2 * d + 2 * d) + 3 * d * d + (d * d + d) + ffn);
  std::size_t temporal = 3 * d * d + ffn;
  if (cfg.dta_flow) {
    std::vector<std::size_t> hidden_flow = cfg.flow_channels;
    const std::size_t dh = d / cfg.temporal_heads();
    if (hidden_flow.empty()) hidden_flow = {dh, dh};
    std::size_t in = 2 * d;
    for (auto ch : hidden_flow) {
      temporal += 9 * in * ch + ch;
      in = ch;
    }
    temporal += in * 2 * cfg.temporal_heads() + 2 * cfg.temporal_heads();
  }
  if (cfg.amc) temporal += 2 * d * d + d + 1;
  count += cfg.hosting_blocks().size() * temporal;
  count += (d * 2 * d + 2 * d) + (d * p * p * c + p * p * c);  // final modulation + head
  return count;
}

}  // namespace liftvsr::model
