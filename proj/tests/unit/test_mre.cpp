#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "mrsv/mre.hpp"

using namespace mrsv;

namespace {

MREConfig tiny(std::vector<int> shifts = {25, 50, 100, 200}, int frame_shift = 200) {
  MREConfig c;
  c.shifts = std::move(shifts);
  c.frame_shift = frame_shift;
  c.encoder_kernels = 6;
  c.tcn_channels = 5;
  c.out_channels = 3;
  return c;
}

nn::Tensor wave(std::size_t n, std::uint64_t seed, int batch = 1) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<double> v(n * batch);
  for (auto& x : v) x = g(rng);
  return nn::Tensor::from({batch, 1, static_cast<int>(n)}, std::move(v));
}

}  // namespace

TEST_CASE("validate_config derives the aligner kernels") {
  const MREConfig c = validate_config(tiny());
  CHECK(c.aligner_kernels == std::vector<int>{16, 8, 4, 2});
  for (int n = 0; n < c.num_encoders(); ++n)
    CHECK(c.shifts[n] * c.aligner_kernels[n] / 2 == c.frame_shift);

  CHECK(validate_config(tiny({100}, 100)).aligner_kernels == std::vector<int>{2});
  CHECK_THROWS_WITH_AS(validate_config(tiny({25}, 160)),
                       doctest::Contains("window/2 * aligner_kernel/2 must equal frame_shift"),
                       ConfigError);
  CHECK_THROWS_AS(validate_config(tiny({100}, 50)), ConfigError);   // M = 1, odd
  CHECK_THROWS_AS(validate_config(tiny({25, 50, 100, 200}, 160)), ConfigError);
  CHECK_THROWS_AS(validate_config(tiny({}, 200)), ConfigError);
  CHECK_THROWS_AS(validate_config(tiny({0}, 200)), ConfigError);
}

TEST_CASE("frame shifts 25..200 map to the quoted resolutions") {
  const auto ms = temporal_resolutions_ms(tiny());
  const std::vector<double> expect{1.5625, 3.125, 6.25, 12.5};
  REQUIRE(ms.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(ms[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("every single-resolution encoder lands on L / frame_shift frames") {
  const MREConfig c = validate_config(tiny());
  Rng rng(1);
  for (std::size_t len : {16000u, 24000u, 32000u}) {
    const nn::Tensor x = wave(len, len);
    for (int n = 0; n < c.num_encoders(); ++n) {
      const SingleResolutionEncoder e(c, n, rng);
      CHECK(e.encode(x).dim(2) == static_cast<int>(2 * len / (2 * c.shifts[n])));
      const nn::Tensor y = e.forward(x);
      CHECK(y.shape() == nn::Shape{1, c.out_channels, static_cast<int>(len / 200)});
    }
  }
  const SingleResolutionEncoder e25(c, 0, rng);
  CHECK(e25.encode(wave(32000, 1)).dim(2) == 1280);
}

TEST_CASE("MRE output") {
  Rng rng(2);
  const MultiResolutionEncoder mre(tiny(), rng);
  const nn::Tensor x = wave(8000, 3, 2);
  const nn::Tensor z = mre.forward(x);
  CHECK(z.shape() == nn::Shape{2, 4 * 3, 40});

  SUBCASE("gLN at identity affine gives zero mean and unit variance per item") {
    const std::size_t per = static_cast<std::size_t>(12) * 40;
    for (int b = 0; b < 2; ++b) {
      double mu = 0.0, var = 0.0;
      for (std::size_t i = 0; i < per; ++i) mu += z[b * per + i] / per;
      for (std::size_t i = 0; i < per; ++i) var += std::pow(z[b * per + i] - mu, 2) / per;
      CHECK(std::abs(mu) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
  SUBCASE("deterministic") {
    const nn::Tensor again = mre.forward(x);
    CHECK(std::equal(z.data().begin(), z.data().end(), again.data().begin()));
  }
  SUBCASE("length must be a multiple of the frame shift") {
    CHECK_THROWS_WITH_AS(check_input_length(32100, mre.config()),
                         doctest::Contains("input not a multiple of frame shift"), Error);
    CHECK_NOTHROW(check_input_length(32000, mre.config()));
    CHECK_THROWS_AS(mre.forward(wave(32100, 4)), Error);
  }
}

TEST_CASE("MRE gradients match finite differences") {
  MREConfig c = tiny({50, 100}, 100);
  c.encoder_kernels = 3;
  c.tcn_channels = 3;
  c.out_channels = 2;
  c.tcn_blocks = 1;
  Rng rng(5);
  const MultiResolutionEncoder mre(c, rng);
  nn::TensorList params;
  mre.collect("mre", params);
  std::vector<nn::Tensor> leaves;
  for (const auto& p : params) leaves.push_back(p.tensor);
  const nn::Tensor x = wave(400, 6);
  const nn::Tensor probe = testutil::random_param({1, 4, 4}, rng);
  testutil::check_gradients([&] { return nn::sum_all(nn::mul(mre.forward(x), probe)); }, leaves,
                            1e-5);
}

TEST_CASE("gln examples") {
  const nn::Tensor one = nn::Tensor::from({1}, {1.0}), zero = nn::Tensor::from({1}, {0.0});
  SUBCASE("constant input") {
    const nn::Tensor y = gln(nn::Tensor::from({1, 3}, {5, 5, 5}), one, zero);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("[[0, 2]] -> [[-1, 1]]") {
    const nn::Tensor y = gln(nn::Tensor::from({1, 2}, {0, 2}), one, zero);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-7));
  }
  SUBCASE("zero gain gives the bias") {
    const nn::Tensor y = gln(nn::Tensor::from({2, 2}, {1, 4, 9, 16}),
                             nn::Tensor::from({2}, {0, 0}), nn::Tensor::from({2}, {0.5, -2}));
    CHECK(y.data()[0] == 0.5);
    CHECK(y.data()[1] == 0.5);
    CHECK(y.data()[2] == -2.0);
    CHECK(y.data()[3] == -2.0);
  }
}

TEST_CASE("downsample") {
  Rng rng(7);
  const nn::Tensor z = testutil::random_param({3, 160}, rng);
  SUBCASE("identity at equal length") {
    const nn::Tensor y = downsample(z, 160);
    CHECK(std::equal(z.data().begin(), z.data().end(), y.data().begin()));
  }
  SUBCASE("constant in, constant out") {
    const nn::Tensor c = nn::Tensor::from({2, 160}, std::vector<double>(320, 1.25));
    const nn::Tensor y = downsample(c, 99);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));
  }
  SUBCASE("160 -> 99 uses the adaptive pooling windows") {
    const nn::Tensor y = downsample(z, 99);
    REQUIRE(y.shape() == nn::Shape{3, 99});
    for (int ch = 0; ch < 3; ++ch)
      for (int t = 0; t < 99; ++t) {
        const int lo = (t * 160) / 99, hi = ((t + 1) * 160 + 98) / 99;
        double acc = 0.0;
        for (int k = lo; k < hi; ++k) acc += z[ch * 160 + k];
        CHECK(y[ch * 99 + t] == doctest::Approx(acc / (hi - lo)).epsilon(1e-12));
      }
  }
  SUBCASE("time mean preserved when the length divides") {
    const nn::Tensor y = downsample(z, 80);
    for (int ch = 0; ch < 3; ++ch) {
      double a = 0.0, b = 0.0;
      for (int t = 0; t < 160; ++t) a += z[ch * 160 + t] / 160;
      for (int t = 0; t < 80; ++t) b += y[ch * 80 + t] / 80;
      CHECK(std::abs(a - b) < 1e-5);
    }
  }
  SUBCASE("upsampling is rejected") { CHECK_THROWS_AS(downsample(z, 161), Error); }
}
