#include "liftvsr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "liftvsr/error.hpp"

namespace liftvsr::ad {

using detail::Node;
using detail::parent_grad;
using detail::parent_value;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(x.shape()));
  }
}

std::size_t last_dim(const Tensor& x) { return x.shape().empty() ? 1 : x.shape().back(); }

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      (*gx)[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    }
  });
}

}  // namespace

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto p = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * p));
  MapM(out.data(), m, p).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, p);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, p](Node& self) {
    MapC dc(self.grad.data(), m, p);
    if (auto* ga = parent_grad(self, 0)) {
      MapM(ga->data(), m, k).noalias() += dc * MapC(parent_value(self, 1).data(), k, p).transpose();
    }
    if (auto* gb = parent_grad(self, 1)) {
      MapM(gb->data(), k, p).noalias() += MapC(parent_value(self, 0).data(), m, k).transpose() * dc;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.rank() == 0 || last_dim(x) != w.dim(0)) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  const auto k = static_cast<Eigen::Index>(w.dim(0));
  const auto p = static_cast<Eigen::Index>(w.dim(1));
  const auto m = static_cast<Eigen::Index>(x.numel() / w.dim(0));
  Shape shape = x.shape();
  shape.back() = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * p));
  MapM(out.data(), m, p).noalias() = MapC(x.data().data(), m, k) * MapC(w.data().data(), k, p);
  return make_result(std::move(shape), std::move(out), {x, w}, [m, k, p](Node& self) {
    MapC dc(self.grad.data(), m, p);
    if (auto* gx = parent_grad(self, 0)) {
      MapM(gx->data(), m, k).noalias() += dc * MapC(parent_value(self, 1).data(), k, p).transpose();
    }
    if (auto* gw = parent_grad(self, 1)) {
      MapM(gw->data(), k, p).noalias() += MapC(parent_value(self, 0).data(), m, k).transpose() * dc;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t batch = a.dim(0);
  const std::size_t inner_b = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || a.dim(2) != inner_b) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto p = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(2));
  const std::size_t sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2);
  const std::size_t sc = static_cast<std::size_t>(m * p);
  std::vector<double> out(batch * sc);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    MapM c(out.data() + i * sc, m, p);
    MapC am(av + i * sa, m, k);
    if (transpose_b) {
      c.noalias() = am * MapC(bv + i * sb, p, k).transpose();
    } else {
      c.noalias() = am * MapC(bv + i * sb, k, p);
    }
  }
  return make_result({batch, a.dim(1), static_cast<std::size_t>(p)}, std::move(out), {a, b},
                     [=](Node& self) {
                       auto* ga = parent_grad(self, 0);
                       auto* gb = parent_grad(self, 1);
                       const double* av = parent_value(self, 0).data();
                       const double* bv = parent_value(self, 1).data();
                       for (std::size_t i = 0; i < batch; ++i) {
                         MapC dc(self.grad.data() + i * sc, m, p);
                         if (transpose_b) {
                           // C = A B^T: dA = dC B, dB = dC^T A
                           if (ga) MapM(ga->data() + i * sa, m, k).noalias() += dc * MapC(bv + i * sb, p, k);
                           if (gb) MapM(gb->data() + i * sb, p, k).noalias() += dc.transpose() * MapC(av + i * sa, m, k);
                         } else {
                           if (ga) MapM(ga->data() + i * sa, m, k).noalias() += dc * MapC(bv + i * sb, k, p).transpose();
                           if (gb) MapM(gb->data() + i * sb, k, p).noalias() += MapC(av + i * sa, m, k).transpose() * dc;
                         }
                       }
                     });
}

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

Tensor affine(const Tensor& x, double a, double b) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b;
  return make_result(x.shape(), std::move(out), {x}, [a](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += a * self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || last_dim(x) != bias.dim(0)) {
    throw DimensionError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(bias.shape()));
  }
  const std::size_t k = bias.dim(0);
  std::vector<double> out(x.values());
  const auto& bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % k];
  return make_result(x.shape(), std::move(out), {x, bias}, [k](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % k] += self.grad[i];
    }
  });
}

Tensor mul_bias(const Tensor& x, const Tensor& s) {
  if (s.rank() != 1 || x.rank() == 0 || last_dim(x) != s.dim(0)) {
    throw DimensionError("mul_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(s.shape()));
  }
  const std::size_t k = s.dim(0);
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  const auto& sv = s.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv[i % k];
  return make_result(x.shape(), std::move(out), {x, s}, [k](Node& self) {
    const auto& xv = parent_value(self, 0);
    const auto& sv = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * sv[i % k];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % k] += self.grad[i] * xv[i];
    }
  });
}

Tensor mul_scalar(const Tensor& x, const Tensor& alpha) {
  if (alpha.numel() != 1) {
    throw DimensionError("mul_scalar: alpha must hold one value, got " + shape_str(alpha.shape()));
  }
  const double a = alpha.item();
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i];
  return make_result(x.shape(), std::move(out), {x, alpha}, [](Node& self) {
    const auto& xv = parent_value(self, 0);
    const double a = parent_value(self, 1)[0];
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += a * self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        // Split on sign so exp never overflows.
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  auto sig = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(
      x, [sig](double v) { return v * sig(v); },
      [sig](double v, double) {
        const double s = sig(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor layer_norm(const Tensor& x, double eps) {
  const std::size_t k = last_dim(x);
  if (k == 0) throw DimensionError("layer_norm: empty last axis");
  const std::size_t rows = x.numel() / k;
  std::vector<double> out(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * k;
    double mu = 0.0;
    for (std::size_t j = 0; j < k; ++j) mu += row[j];
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t j = 0; j < k; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(k);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = (row[j] - mu) * is;
  }
  return make_result(x.shape(), std::move(out), {x}, [k, rows, inv_std](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const double kd = static_cast<double>(k);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * k;
      const double* y = self.value.data() + r * k;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        mg += g[j];
        mgy += g[j] * y[j];
      }
      mg /= kd;
      mgy /= kd;
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < k; ++j) (*gx)[r * k + j] += is * (g[j] - mg - y[j] * mgy);
    }
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t k = last_dim(x);
  if (k == 0) throw DimensionError("softmax: empty last axis");
  const std::size_t rows = x.numel() / k;
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * k;
    double* o = out.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= total;
  }
  return make_result(x.shape(), std::move(out), {x}, [k, rows](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * k;
      const double* s = self.value.data() + r * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[j] * s[j];
      for (std::size_t j = 0; j < k; ++j) (*gx)[r * k + j] += s[j] * (g[j] - dot);
    }
  });
}

Tensor mean_pool_temporal(const Tensor& x, std::size_t groups) {
  if (x.rank() == 0) throw DimensionError("mean_pool_temporal: scalar input");
  const std::size_t n = x.dim(0);
  if (groups == 0 || groups > n) {
    throw ConfigError("mean_pool_temporal: cannot pool " + std::to_string(n) + " frames into " +
                      std::to_string(groups) + " groups");
  }
  const std::size_t frame = x.numel() / n;
  const std::size_t base = n / groups;
  std::vector<std::size_t> begin(groups + 1);
  for (std::size_t g = 0; g < groups; ++g) begin[g] = g * base;
  begin[groups] = n;
  Shape shape = x.shape();
  shape[0] = groups;
  std::vector<double> out(groups * frame, 0.0);
  const auto& xv = x.values();
  for (std::size_t g = 0; g < groups; ++g) {
    const double inv = 1.0 / static_cast<double>(begin[g + 1] - begin[g]);
    double* o = out.data() + g * frame;
    for (std::size_t f = begin[g]; f < begin[g + 1]; ++f) {
      const double* row = xv.data() + f * frame;
      for (std::size_t j = 0; j < frame; ++j) o[j] += row[j];
    }
    for (std::size_t j = 0; j < frame; ++j) o[j] *= inv;
  }
  return make_result(std::move(shape), std::move(out), {x}, [groups, frame, begin](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t g = 0; g < groups; ++g) {
      const double inv = 1.0 / static_cast<double>(begin[g + 1] - begin[g]);
      const double* go = self.grad.data() + g * frame;
      for (std::size_t f = begin[g]; f < begin[g + 1]; ++f) {
        double* gi = gx->data() + f * frame;
        for (std::size_t j = 0; j < frame; ++j) gi[j] += inv * go[j];
      }
    }
  });
}

// --- layout -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  return make_result(std::move(shape), x.values(), {x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

namespace {

// Maps each output linear index of a permutation to its source index.
std::vector<std::size_t> permutation_sources(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  const std::size_t total = shape_numel(in);
  std::vector<std::size_t> src(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < total; ++o) {
    src[o] = offset;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        offset += step[d];
        break;
      }
      offset -= step[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
  return src;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for " +
                         shape_str(x.shape()));
  }
  std::vector<bool> seen(r, false);
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw DimensionError("permute: invalid axis order");
    seen[axes[i]] = true;
    shape[i] = x.dim(axes[i]);
  }
  auto src = std::make_shared<std::vector<std::size_t>>(permutation_sources(x.shape(), axes));
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*src)[o]];
  return make_result(std::move(shape), std::move(out), {x}, [src](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < self.grad.size(); ++o) (*g)[(*src)[o]] += self.grad[o];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range");
  Shape shape = ref;
  shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) {
      throw DimensionError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(s));
    }
    shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t row = shape[axis] * inner;
  std::vector<double> out(shape_numel(shape));
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].values();
    const std::size_t w = widths[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * w, w, out.data() + o * row + col);
    }
    col += w;
  }
  return make_result(std::move(shape), std::move(out), parts, [widths, outer, inner, row](Node& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k] * inner;
      if (auto* g = parent_grad(self, k)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * row + col;
          double* dst = g->data() + o * w;
          for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      col += w;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) throw DimensionError("slice: axis out of range for " + shape_str(x.shape()));
  if (start + length > x.dim(axis)) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis size " +
                     std::to_string(x.dim(axis)));
  }
  const Shape& in = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t in_row = in[axis] * inner;
  const std::size_t w = length * inner;
  const std::size_t off = start * inner;
  Shape shape = in;
  shape[axis] = length;
  std::vector<double> out(outer * w);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * in_row + off, w, out.data() + o * w);
  return make_result(std::move(shape), std::move(out), {x}, [outer, in_row, w, off](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = self.grad.data() + o * w;
      double* dst = g->data() + o * in_row + off;
      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

Tensor gather_leading(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() == 0) throw DimensionError("gather_leading: scalar input");
  const std::size_t n = x.dim(0);
  const std::size_t frame = x.numel() / std::max<std::size_t>(n, 1);
  for (auto i : indices) {
    if (i >= n) {
      throw IndexError("gather_leading: index " + std::to_string(i) + " out of range for " +
                       std::to_string(n) + " slices");
    }
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * frame);
  const auto& xv = x.values();
  for (std::size_t j = 0; j < indices.size(); ++j) {
    std::copy_n(xv.data() + indices[j] * frame, frame, out.data() + j * frame);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result(std::move(shape), std::move(out), {x}, [idx = std::move(idx), frame](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const double* src = self.grad.data() + j * frame;
      double* dst = g->data() + idx[j] * frame;
      for (std::size_t e = 0; e < frame; ++e) dst[e] += src[e];
    }
  });
}

// --- spatial ------------------------------------------------------------------

Tensor bilinear_warp(const Tensor& src, const Tensor& flow) {
  require_rank("bilinear_warp", src, 4);
  require_rank("bilinear_warp", flow, 4);
  const std::size_t n = src.dim(0), h = src.dim(1), w = src.dim(2), c = src.dim(3);
  if (flow.dim(0) != n || flow.dim(1) != h || flow.dim(2) != w || flow.dim(3) == 0 ||
      flow.dim(3) % 2 != 0 || c % (flow.dim(3) / 2) != 0) {
    throw DimensionError("bilinear_warp: src " + shape_str(src.shape()) + " and flow " +
                         shape_str(flow.shape()) + " are incompatible");
  }
  const std::size_t groups = flow.dim(3) / 2;
  const std::size_t cg = c / groups;
  const auto& sv = src.values();
  const auto& fv = flow.values();
  std::vector<double> out(sv.size());
  const auto hi_x = static_cast<long>(w) - 1;
  const auto hi_y = static_cast<long>(h) - 1;

  struct Tap {
    std::size_t i00, i01, i10, i11;
    double ax, ay;
  };
  // Per (frame, y, x, group) sampling taps, shared by forward and backward.
  auto taps = std::make_shared<std::vector<Tap>>(n * h * w * groups);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t pix = (b * h + y) * w + x;
        for (std::size_t g = 0; g < groups; ++g) {
          double sx = static_cast<double>(x) + fv[pix * 2 * groups + 2 * g];
          double sy = static_cast<double>(y) + fv[pix * 2 * groups + 2 * g + 1];
          if (!std::isfinite(sx) || !std::isfinite(sy)) {
            throw NumericError("bilinear_warp: non-finite flow");
          }
          // Past one pixel outside the frame every tap clamps to the edge, so
          // this changes nothing except keeping the integer casts in range.
          sx = std::clamp(sx, -1.0, static_cast<double>(w));
          sy = std::clamp(sy, -1.0, static_cast<double>(h));
          const double fx = std::floor(sx), fy = std::floor(sy);
          const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
          const long cx0 = std::clamp(x0, 0L, hi_x), cx1 = std::clamp(x0 + 1, 0L, hi_x);
          const long cy0 = std::clamp(y0, 0L, hi_y), cy1 = std::clamp(y0 + 1, 0L, hi_y);
          const std::size_t base = b * h * w;
          Tap t;
          t.i00 = (base + static_cast<std::size_t>(cy0) * w + static_cast<std::size_t>(cx0)) * c + g * cg;
          t.i01 = (base + static_cast<std::size_t>(cy0) * w + static_cast<std::size_t>(cx1)) * c + g * cg;
          t.i10 = (base + static_cast<std::size_t>(cy1) * w + static_cast<std::size_t>(cx0)) * c + g * cg;
          t.i11 = (base + static_cast<std::size_t>(cy1) * w + static_cast<std::size_t>(cx1)) * c + g * cg;
          t.ax = sx - fx;
          t.ay = sy - fy;
          (*taps)[pix * groups + g] = t;
          double* o = out.data() + pix * c + g * cg;
          for (std::size_t ch = 0; ch < cg; ++ch) {
            const double v00 = sv[t.i00 + ch], v01 = sv[t.i01 + ch];
            const double v10 = sv[t.i10 + ch], v11 = sv[t.i11 + ch];
            const double top = v00 + t.ax * (v01 - v00);
            const double bot = v10 + t.ax * (v11 - v10);
            o[ch] = top + t.ay * (bot - top);
          }
        }
      }
    }
  }
  const std::size_t pixels = n * h * w;
  return make_result(src.shape(), std::move(out), {src, flow},
                     [taps, pixels, groups, cg, c](Node& self) {
                       auto* gs = parent_grad(self, 0);
                       auto* gf = parent_grad(self, 1);
                       const auto& sv = parent_value(self, 0);
                       for (std::size_t pix = 0; pix < pixels; ++pix) {
                         for (std::size_t g = 0; g < groups; ++g) {
                           const Tap& t = (*taps)[pix * groups + g];
                           const double* go = self.grad.data() + pix * c + g * cg;
                           double dax = 0.0, day = 0.0;
                           for (std::size_t ch = 0; ch < cg; ++ch) {
                             const double gv = go[ch];
                             if (gs) {
                               (*gs)[t.i00 + ch] += gv * (1 - t.ax) * (1 - t.ay);
                               (*gs)[t.i01 + ch] += gv * t.ax * (1 - t.ay);
                               (*gs)[t.i10 + ch] += gv * (1 - t.ax) * t.ay;
                               (*gs)[t.i11 + ch] += gv * t.ax * t.ay;
                             }
                             if (gf) {
                               const double v00 = sv[t.i00 + ch], v01 = sv[t.i01 + ch];
                               const double v10 = sv[t.i10 + ch], v11 = sv[t.i11 + ch];
                               dax += gv * ((1 - t.ay) * (v01 - v00) + t.ay * (v11 - v10));
                               day += gv * ((v10 + t.ax * (v11 - v10)) - (v00 + t.ax * (v01 - v00)));
                             }
                           }
                           if (gf) {
                             (*gf)[pix * 2 * groups + 2 * g] += dax;
                             (*gf)[pix * 2 * groups + 2 * g + 1] += day;
                           }
                         }
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", kernel, 4);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv2d: kernel size " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " must be odd");
  }
  if (kernel.dim(2) != x.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(kernel.shape()));
  }
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t cout = kernel.dim(3);
  const std::size_t patch = kh * kw * cin;
  const std::size_t rows = n * h * w;
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const auto& xv = x.values();

  const bool pointwise = kh == 1 && kw == 1;
  std::shared_ptr<std::vector<double>> cols;
  if (!pointwise) {
    cols = std::make_shared<std::vector<double>>(rows * patch, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          double* dst = cols->data() + ((b * h + y) * w + xx) * patch;
          for (std::size_t i = 0; i < kh; ++i) {
            const long sy = static_cast<long>(y) + static_cast<long>(i) - ph;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              const long sx = static_cast<long>(xx) + static_cast<long>(j) - pw;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              const double* s = xv.data() + ((b * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)) * cin;
              std::copy_n(s, cin, dst + (i * kw + j) * cin);
            }
          }
        }
      }
    }
  }
  const double* colp = pointwise ? xv.data() : cols->data();
  const auto R = static_cast<Eigen::Index>(rows), P = static_cast<Eigen::Index>(patch),
             C = static_cast<Eigen::Index>(cout);
  std::vector<double> out(rows * cout);
  MapM(out.data(), R, C).noalias() = MapC(colp, R, P) * MapC(kernel.data().data(), P, C);

  return make_result({n, h, w, cout}, std::move(out), {x, kernel},
                     [=](Node& self) {
                       MapC dy(self.grad.data(), R, C);
                       const double* colp = pointwise ? parent_value(self, 0).data() : cols->data();
                       if (auto* gk = parent_grad(self, 1)) {
                         MapM(gk->data(), P, C).noalias() += MapC(colp, R, P).transpose() * dy;
                       }
                       auto* gx = parent_grad(self, 0);
                       if (!gx) return;
                       MapC kmat(parent_value(self, 1).data(), P, C);
                       if (pointwise) {
                         MapM(gx->data(), R, P).noalias() += dy * kmat.transpose();
                         return;
                       }
                       RowMat dcols = dy * kmat.transpose();
                       for (std::size_t b = 0; b < n; ++b) {
                         for (std::size_t y = 0; y < h; ++y) {
                           for (std::size_t xx = 0; xx < w; ++xx) {
                             const double* src = dcols.data() + ((b * h + y) * w + xx) * patch;
                             for (std::size_t i = 0; i < kh; ++i) {
                               const long sy = static_cast<long>(y) + static_cast<long>(i) - ph;
                               if (sy < 0 || sy >= static_cast<long>(h)) continue;
                               for (std::size_t j = 0; j < kw; ++j) {
                                 const long sx = static_cast<long>(xx) + static_cast<long>(j) - pw;
                                 if (sx < 0 || sx >= static_cast<long>(w)) continue;
                                 double* d = gx->data() + ((b * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)) * cin;
                                 const double* s = src + (i * kw + j) * cin;
                                 for (std::size_t ch = 0; ch < cin; ++ch) d[ch] += s[ch];
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor rope(const Tensor& x, std::span<const double> positions, double base) {
  require_rank("rope", x, 3);
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (D % 2 != 0) throw DimensionError("rope: feature size must be even, got " + std::to_string(D));
  if (positions.size() != B * T) {
    throw DimensionError("rope: expected " + std::to_string(B * T) + " positions, got " +
                         std::to_string(positions.size()));
  }
  const std::size_t half = D / 2;
  auto cs = std::make_shared<std::vector<double>>(B * T * D);
  for (std::size_t r = 0; r < B * T; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(D));
      const double ang = positions[r] * theta;
      (*cs)[r * D + 2 * j] = std::cos(ang);
      (*cs)[r * D + 2 * j + 1] = std::sin(ang);
    }
  }
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < B * T; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const std::size_t i = r * D + 2 * j;
      const double c = (*cs)[i], s = (*cs)[i + 1];
      out[i] = xv[i] * c - xv[i + 1] * s;
      out[i + 1] = xv[i] * s + xv[i + 1] * c;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [cs](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); i += 2) {
      const double c = (*cs)[i], s = (*cs)[i + 1];
      const double g0 = self.grad[i], g1 = self.grad[i + 1];
      (*gx)[i] += g0 * c + g1 * s;
      (*gx)[i + 1] += -g0 * s + g1 * c;
    }
  });
}

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  return make_result({1}, {total}, {x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  const double inv = 1.0 / static_cast<double>(av.size());
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  return make_result({1}, {total * inv}, {a, b}, [inv](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    const double g = self.grad[0] * 2.0 * inv;
    if (auto* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g * (av[i] - bv[i]);
    }
    if (auto* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] -= g * (av[i] - bv[i]);
    }
  });
}

}  // namespace liftvsr::ad
