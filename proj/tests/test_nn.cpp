#include <doctest.h>

#include <cmath>

#include "monalab/errors.hpp"
#include "monalab/nn.hpp"
#include "test_util.hpp"

using namespace monalab;
using testutil::random_tensor;
using testutil::values;

namespace {

// Direct loop over taps with explicit bounds checks in place of padding.
std::vector<double> depthwise_oracle(const Tensor& x, const Tensor& k) {
  const std::size_t b = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::size_t ks = k.extent(1);
  const long r = static_cast<long>(ks / 2);
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (long i = 0; i < static_cast<long>(h); ++i)
      for (long j = 0; j < static_cast<long>(w); ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (long di = -r; di <= r; ++di)
            for (long dj = -r; dj <= r; ++dj) {
              const long ii = i + di, jj = j + dj;
              if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
              acc += x.at(((n * h + ii) * w + jj) * c + ch) *
                     k.at((ch * ks + static_cast<std::size_t>(di + r)) * ks + static_cast<std::size_t>(dj + r));
            }
          out[((n * h + i) * w + j) * c + ch] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("linear matches a hand computation") {
  Tensor x = Tensor::from_data({1, 2}, {1, 2});
  Tensor w = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2}, {0.5, -0.5});
  CHECK(values(nn::linear(x, w, b)) == std::vector<double>{7.5, 9.5});
  CHECK(values(nn::linear(x, w)) == std::vector<double>{7, 10});
}

TEST_CASE("layer norm zero-mean unit-variance rows") {
  Tensor x = random_tensor({3, 6}, 11, 3.0);
  auto y = values(nn::layer_norm(x, Tensor::ones({6}), Tensor::zeros({6}), 0.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 6; ++j) mean += y[r * 6 + j] / 6.0;
    for (std::size_t j = 0; j < 6; ++j) var += (y[r * 6 + j] - mean) * (y[r * 6 + j] - mean) / 6.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  }
  // A constant row normalizes to beta.
  auto c = values(nn::layer_norm(Tensor::full({1, 4}, 3.0), Tensor::ones({4}),
                                 Tensor::full({4}, 0.25)));
  CHECK(c == std::vector<double>(4, 0.25));
}

TEST_CASE("gelu reference values") {
  auto y = values(nn::gelu(Tensor::from_data({3}, {-1.0, 0.0, 1.0})));
  CHECK(y[0] == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
  CHECK(y[1] == 0.0);
  CHECK(y[2] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("depthwise conv matches a direct loop for 3/5/7 and odd grids") {
  for (std::size_t k : {3, 5, 7}) {
    Tensor x = random_tensor({2, 4, 3, 2}, 20 + k);
    Tensor kern = random_tensor({2, k, k}, 30 + k);
    auto got = values(nn::depthwise_conv2d(nn::TokenGrid(x), kern).tensor());
    CHECK(testutil::max_abs_diff(got, depthwise_oracle(x, kern)) < 1e-12);
  }
  CHECK_THROWS_AS(nn::depthwise_conv2d(nn::TokenGrid(random_tensor({1, 2, 2, 2}, 1)),
                                       random_tensor({2, 2, 2}, 2)),
                  Error);
}

TEST_CASE("1x1 grid: depthwise conv reduces to the centre tap") {
  Tensor x = Tensor::from_data({1, 1, 1, 1}, {2.0});
  Tensor k = random_tensor({1, 5, 5}, 3);
  CHECK(nn::depthwise_conv2d(nn::TokenGrid(x), k).tensor().item() ==
        doctest::Approx(2.0 * k.at(12)));
}

TEST_CASE("pointwise conv mixes channels with weights[out, in]") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::from_data({2, 2}, {1, 0, 1, 1});
  CHECK(values(nn::pointwise_conv2d(nn::TokenGrid(x), w).tensor()) ==
        std::vector<double>{1, 3, 3, 7});
}

TEST_CASE("cross entropy value and label checks") {
  Tensor logits = Tensor::from_data({2, 3}, {0, 0, 0, 1, 2, 3});
  const std::vector<int> labels{0, 2};
  const double row2 = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(nn::cross_entropy(logits, labels).item() ==
        doctest::Approx((std::log(3.0) + row2) / 2.0).epsilon(1e-14));
  const std::vector<int> bad{0, 3};
  CHECK_THROWS_AS(nn::cross_entropy(logits, bad), Error);
}

TEST_CASE("window attention equals full attention run per window") {
  Tensor x = random_tensor({1, 4, 4, 4}, 40);
  nn::AttentionWeights w{random_tensor({4, 4}, 41, 0.5), random_tensor({4}, 42),
                         random_tensor({4, 4}, 43, 0.5), random_tensor({4}, 44),
                         random_tensor({4, 4}, 45, 0.5), random_tensor({4}, 46),
                         random_tensor({4, 4}, 47, 0.5), random_tensor({4}, 48)};
  nn::TokenGrid grid(x);
  auto windowed = values(nn::multihead_attention(grid, w, 2, 2).tensor());
  // Window (1, 0) covers rows 2..3, cols 0..1.
  std::vector<double> win;
  for (std::size_t i = 2; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c = 0; c < 4; ++c) win.push_back(x.at((i * 4 + j) * 4 + c));
  auto alone = values(nn::multihead_attention(Tensor::from_data({1, 4, 4}, win), w, 2));
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t i = 2 + t / 2, j = t % 2;
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(windowed[(i * 4 + j) * 4 + c] == doctest::Approx(alone[t * 4 + c]).epsilon(1e-12));
    }
  }
  // A window covering the grid is plain global attention.
  auto global = values(nn::multihead_attention(grid, w, 2, std::nullopt).tensor());
  auto covering = values(nn::multihead_attention(grid, w, 2, 4).tensor());
  CHECK(testutil::max_abs_diff(global, covering) < 1e-12);
}

TEST_CASE("window partition and reverse are inverse") {
  Tensor x = random_tensor({2, 4, 6, 3}, 50);
  Tensor parts = nn::window_partition(nn::TokenGrid(x), 2);
  CHECK(parts.shape() == Shape{12, 4, 3});
  CHECK(values(nn::window_reverse(parts, 2, 4, 6, 2).tensor()) == values(x));
}

TEST_CASE("patch embed flattens (row, col, channel) tiles") {
  // 2x2 image, 1 channel, one 2x2 patch, identity projection.
  Tensor img = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 4});
  Tensor w = Tensor::from_data({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  nn::TokenGrid g = nn::patch_embed(img, w, Tensor::zeros({4}), 2);
  CHECK(g.tensor().shape() == Shape{1, 1, 1, 4});
  CHECK(values(g.tensor()) == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(nn::patch_embed(Tensor::zeros({1, 3, 3, 1}), w, Tensor::zeros({4}), 2), Error);
}

TEST_CASE("space_to_depth2 concatenates 2x2 neighbourhoods") {
  Tensor x = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 4});
  nn::TokenGrid y = nn::space_to_depth2(nn::TokenGrid(x));
  CHECK(y.tensor().shape() == Shape{1, 1, 1, 4});
  auto v = values(y.tensor());
  std::sort(v.begin(), v.end());
  CHECK(v == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("kaiming uniform stays inside 1/sqrt(fan_in)") {
  Rng rng(3);
  Tensor w = nn::kaiming_uniform({16, 9}, 16, rng);
  for (double v : w.data()) CHECK(std::abs(v) <= 0.25);
  Rng again(3);
  CHECK(values(nn::kaiming_uniform({16, 9}, 16, again)) == values(w));
}
