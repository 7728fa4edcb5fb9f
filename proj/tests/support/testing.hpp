#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "liftvsr/ops.hpp"
#include "liftvsr/rng.hpp"
#include "liftvsr/tensor.hpp"

namespace liftvsr::testing {

inline ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double lo = -1.0,
                                double hi = 1.0) {
  Rng rng(seed, 99);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ||a - b|| / max(||a||, ||b||), with 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(num) / denom;
}

struct GradCheck {
  double worst = 0.0;                    // max relative error over inputs
  std::vector<double> per_input;
};

// Central finite differences of the scalar sum(f(inputs) * probe) against the
// reverse-mode gradient, for every input with requires_grad. The fixed random
// probe keeps reductions like softmax rows from collapsing to constants.
// With max_elements set, only an evenly strided subset of each input is probed.
inline GradCheck grad_check(const std::function<ad::Tensor(std::vector<ad::Tensor>&)>& f,
                            std::vector<ad::Tensor> inputs, double step = 1e-5,
                            std::size_t max_elements = 0) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  auto out = f(inputs);
  const auto probe = random_tensor(out.shape(), 4242);
  auto loss = [&](std::vector<ad::Tensor>& in) {
    ad::NoGradGuard guard;
    const auto y = f(in);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += y.values()[i] * probe.values()[i];
    return acc;
  };
  ad::backward(ad::sum(ad::mul(out, probe)));
  GradCheck result;
  for (auto& x : inputs) {
    if (!x.requires_grad() || !x.has_grad()) {
      result.per_input.push_back(0.0);
      continue;
    }
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    std::size_t count = x.numel();
    std::size_t stride = 1;
    if (max_elements != 0 && count > max_elements) stride = (count + max_elements - 1) / max_elements;
    std::vector<double> a, num;
    for (std::size_t i = 0; i < count; i += stride) {
      const double saved = x.data()[i];
      x.data()[i] = saved + step;
      const double up = loss(inputs);
      x.data()[i] = saved - step;
      const double down = loss(inputs);
      x.data()[i] = saved;
      num.push_back((up - down) / (2.0 * step));
      a.push_back(analytic[i]);
    }
    const double err = relative_error(a, num);
    result.per_input.push_back(err);
    result.worst = std::max(result.worst, err);
  }
  return result;
}

}  // namespace liftvsr::testing
