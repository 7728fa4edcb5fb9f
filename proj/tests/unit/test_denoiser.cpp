#include <doctest.h>

#include "liftvsr/denoiser.hpp"
#include "liftvsr/error.hpp"
#include "liftvsr/ops.hpp"
#include "testing.hpp"

using namespace liftvsr;
using ad::Tensor;

namespace {

model::DenoiserConfig tiny(std::size_t interval = 2) {
  model::DenoiserConfig c;
  c.blocks = 2;
  c.width = 16;
  c.heads = 2;
  c.patch = 2;
  c.dta_interval = interval;
  c.cache_length = 2;
  c.segment_length = 4;
  c.image_height = 8;
  c.image_width = 8;
  c.ffn_mult = 2;
  c.init_seed = 3;
  return c;
}

// Zero-initialized modulation, flow and output layers make most paths
// inert at construction; fill everything with small random values.
void randomize(model::Denoiser& net, std::uint64_t seed, double scale = 0.2) {
  std::uint64_t k = 0;
  for (const auto& p : net.store().params()) {
    auto t = p.tensor;
    const auto r = testing::random_tensor(t.shape(), seed + 17 * ++k, -scale, scale);
    std::copy(r.values().begin(), r.values().end(), t.data().begin());
  }
}

}  // namespace

TEST_CASE("hosting blocks follow the interval") {
  model::DenoiserConfig c;
  c.blocks = 6;
  c.dta_interval = 3;
  CHECK(c.hosting_blocks() == std::vector<std::size_t>{2, 5});
  c.dta_interval = 1;
  CHECK(c.hosting_blocks().size() == 6);
  c.dta_interval = 0;
  CHECK(c.hosting_blocks().empty());
  c.dta_interval = 3;
  c.width = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter count matches the closed form and a hand count") {
  const auto c = tiny();
  model::Denoiser net(c);
  CHECK(net.store().scalar_count() == model::Denoiser::expected_parameter_count(c));
  // embed 400, timestep mlp 544, two blocks 2*2656, one temporal block 5301,
  // final modulation and head 748.
  CHECK(net.store().scalar_count() == 12305);

  auto bare = c;
  bare.amc = false;
  bare.dta_flow = false;
  CHECK(model::Denoiser(bare).store().scalar_count() == 12305 - 529 - 2932);
  CHECK(model::Denoiser::expected_parameter_count(bare) == 12305 - 529 - 2932);
}

TEST_CASE("output shape, zero output at initialization, determinism") {
  const auto c = tiny();
  model::Denoiser a(c), b(c);
  const auto z = testing::random_tensor({4, 8, 8, 3}, 1);
  const auto cond = testing::random_tensor({4, 8, 8, 3}, 2);
  const auto out = a.denoise(z, 500, cond);
  CHECK(out.shape() == z.shape());
  for (double v : out.values()) CHECK(v == 0.0);

  randomize(a, 9);
  randomize(b, 9);
  CHECK(a.denoise(z, 500, cond).values() == b.denoise(z, 500, cond).values());
  const auto t1 = a.denoise(z, 10, cond);
  const auto t2 = a.denoise(z, 900, cond);
  CHECK(testing::max_abs_diff(t1.values(), t2.values()) > 1e-6);
}

TEST_CASE("input shape errors") {
  model::Denoiser net(tiny());
  CHECK_THROWS_AS(net.denoise(Tensor({4, 8, 8, 1}), 1, Tensor({4, 8, 8, 1})), DimensionError);
  CHECK_THROWS_AS(net.denoise(Tensor({4, 8, 8, 3}), 1, Tensor({4, 8, 6, 3})), DimensionError);
  CHECK_THROWS_AS(net.denoise(Tensor({4, 7, 8, 3}), 1, Tensor({4, 7, 8, 3})), DimensionError);
}

TEST_CASE("frames are independent without temporal blocks and coupled with them") {
  const auto z = testing::random_tensor({4, 8, 8, 3}, 3);
  const auto cond = testing::random_tensor({4, 8, 8, 3}, 4);
  auto z2 = z.clone();
  for (std::size_t i = 3 * 64 * 3; i < 4 * 64 * 3; ++i) z2.data()[i] += 0.5;  // last frame only

  auto first_frame_shift = [&](model::Denoiser& net) {
    const auto a = ad::slice(net.denoise(z, 300, cond), 0, 0, 1);
    const auto b = ad::slice(net.denoise(z2, 300, cond), 0, 0, 1);
    return testing::max_abs_diff(a.values(), b.values());
  };
  model::Denoiser per_frame(tiny(0));
  randomize(per_frame, 5);
  CHECK(first_frame_shift(per_frame) == 0.0);

  model::Denoiser temporal(tiny(2));
  randomize(temporal, 5);
  CHECK(first_frame_shift(temporal) > 1e-6);
}

TEST_CASE("cache plumbing: zero caches equal no caches, writes one cache per hosting block") {
  auto c = tiny(1);
  model::Denoiser net(c);
  randomize(net, 6);
  const auto z = testing::random_tensor({4, 8, 8, 3}, 7);
  const auto cond = testing::random_tensor({4, 8, 8, 3}, 8);
  const auto zeros = net.zero_caches(8, 8);
  REQUIRE(zeros.size() == 2);
  CHECK(zeros[0].slots.shape() == ad::Shape{2, 4, 4, 16});
  CHECK(zeros[1].block_id == 1);

  std::vector<amc::MemoryCache> written;
  const auto a = net.denoise(z, 100, cond);
  const auto b = net.denoise(z, 100, cond, {&zeros, &written});
  CHECK(a.values() == b.values());
  REQUIRE(written.size() == 2);
  CHECK(written[0].initialized);
  CHECK(written[1].block_id == 1);

  // A populated cache changes the prediction once the fusion scale is non-zero.
  const auto with_cache = net.denoise(z, 100, cond, {&written, nullptr});
  CHECK(testing::max_abs_diff(with_cache.values(), a.values()) > 1e-8);

  const std::vector<amc::MemoryCache> one(zeros.begin(), zeros.begin() + 1);
  CHECK_THROWS_AS(net.denoise(z, 100, cond, {&one, nullptr}), DimensionError);
}

TEST_CASE("denoiser gradient matches finite differences") {
  model::Denoiser net(tiny());
  randomize(net, 10);
  std::vector<Tensor> inputs = {testing::random_tensor({4, 8, 8, 3}, 11),
                                testing::random_tensor({4, 8, 8, 3}, 12)};
  for (const auto& p : net.trainable_parameters()) inputs.push_back(p.tensor);
  // A few warp samples land within 1e-5 of a grid line, where bilinear
  // interpolation has a kink; a smaller step stays on one side of it.
  const auto r = testing::grad_check(
      [&](std::vector<Tensor>& in) { return net.denoise(in[0], 250, in[1]); }, inputs, 1e-6, 6);
  CHECK(r.worst <= 1e-4);
}
