#include "liftvsr/nn.hpp"

#include <cmath>

#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"
#include "liftvsr/rng.hpp"

namespace liftvsr::nn {

ad::Tensor ParameterStore::add(const std::string& name, ad::Shape shape, Init init,
                               bool trainable) {
  if (contains(name)) throw ConfigError("parameter store: duplicate name '" + name + "'");
  ad::Tensor t(shape, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(t.data().begin(), t.data().end(), 1.0);
      break;
    case Init::kXavier: {
      std::size_t fan_in = 1, fan_out = 1;
      if (shape.size() >= 2) {
        std::size_t area = 1;
        for (std::size_t i = 0; i + 2 < shape.size(); ++i) area *= shape[i];
        fan_in = area * shape[shape.size() - 2];
        fan_out = area * shape.back();
      } else if (shape.size() == 1) {
        fan_in = fan_out = shape[0];
      }
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Rng rng(seed_, hash_name(name));
      for (auto& v : t.data()) v = rng.uniform(-limit, limit);
      break;
    }
  }
  t.set_requires_grad(trainable);
  index_[name] = params_.size();
  params_.push_back(ad::Parameter{name, t, trainable});
  return t;
}

std::vector<ad::Parameter> ParameterStore::trainable() const {
  std::vector<ad::Parameter> out;
  for (const auto& p : params_) {
    if (p.trainable) out.push_back(p);
  }
  return out;
}

const ad::Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("parameter store: no parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               Init weight_init)
    : weight(store.add(name + ".weight", {in, out}, weight_init)),
      bias(store.add(name + ".bias", {out}, Init::kZeros)) {}

ad::Tensor Linear::operator()(const ad::Tensor& x) const {
  return ad::add_bias(ad::linear(x, weight), bias);
}

ad::Tensor multihead_attention(const ad::Tensor& q, const ad::Tensor& k, const ad::Tensor& v,
                               std::size_t heads) {
  const std::size_t B = q.dim(0), L = q.dim(1), d = q.dim(2), S = k.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  auto split = [&](const ad::Tensor& x, std::size_t len) {
    return ad::reshape(ad::permute(ad::reshape(x, {B, len, heads, dh}), {0, 2, 1, 3}),
                       {B * heads, len, dh});
  };
  auto scores = ad::scale(ad::bmm(split(q, L), split(k, S), true),
                          1.0 / std::sqrt(static_cast<double>(dh)));
  auto out = ad::bmm(ad::softmax(scores), split(v, S));
  return ad::reshape(ad::permute(ad::reshape(out, {B, heads, L, dh}), {0, 2, 1, 3}), {B, L, d});
}

std::vector<double> sinusoidal_embedding(const std::vector<double>& positions, std::size_t dim,
                                         double max_period) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal embedding: odd width");
  const std::size_t half = dim / 2;
  std::vector<double> out(positions.size() * dim);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const double freq =
          std::exp(-std::log(max_period) * static_cast<double>(j) / static_cast<double>(half));
      out[r * dim + j] = std::cos(positions[r] * freq);
      out[r * dim + half + j] = std::sin(positions[r] * freq);
    }
  }
  return out;
}

std::vector<double> grid_embedding(std::size_t h, std::size_t w, std::size_t dim) {
  if (dim % 4 != 0) throw ConfigError("grid embedding: width must be a multiple of 4");
  std::vector<double> ys, xs;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      ys.push_back(static_cast<double>(y));
      xs.push_back(static_cast<double>(x));
    }
  }
  const auto ey = sinusoidal_embedding(ys, dim / 2);
  const auto ex = sinusoidal_embedding(xs, dim / 2);
  std::vector<double> out(h * w * dim);
  for (std::size_t t = 0; t < h * w; ++t) {
    std::copy_n(ey.data() + t * dim / 2, dim / 2, out.data() + t * dim);
    std::copy_n(ex.data() + t * dim / 2, dim / 2, out.data() + t * dim + dim / 2);
  }
  return out;
}

}  // namespace liftvsr::nn
