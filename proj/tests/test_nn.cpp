#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "depscreen/nn.hpp"

using namespace depscreen;
using namespace depscreen::nn;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed,
                     double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return randn(std::move(shape), scale, rng);
}

double projected_loss(Layer& layer, const Tensor& x, const Tensor& w) {
  const Tensor y = layer.forward(x, /*train=*/true);
  EXPECT_EQ(y.numel(), w.numel());
  double s = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) s += w.data[i] * y.data[i];
  return s;
}

// Finite-difference check of both input gradients and parameter gradients
// under the projected loss sum(w * layer(x)).
void gradcheck_layer(Layer& layer, Tensor x, std::uint64_t seed, double tol = 1e-6) {
  const Tensor y0 = layer.forward(x, true);
  const Tensor w = random_tensor(y0.shape, seed ^ 0xabcdef, 1.0);

  std::vector<Param*> params;
  layer.collect_params("p", params);
  for (Param* p : params) p->grad.zero();
  layer.forward(x, true);
  const Tensor dx = layer.backward(w);

  std::mt19937_64 rng(seed);
  const double h = 1e-6;

  // input grads
  std::uniform_int_distribution<std::int64_t> pick_x(0, x.numel() - 1);
  for (int s = 0; s < 12; ++s) {
    const std::int64_t k = pick_x(rng);
    const double orig = x.data[k];
    x.data[k] = orig + h;
    const double up = projected_loss(layer, x, w);
    x.data[k] = orig - h;
    const double down = projected_loss(layer, x, w);
    x.data[k] = orig;
    const double fd = (up - down) / (2.0 * h);
    EXPECT_NEAR(dx.data[k], fd, tol * std::max(1.0, std::fabs(fd)))
        << "input grad at " << k;
  }

  // parameter grads
  for (Param* p : params) {
    std::uniform_int_distribution<std::int64_t> pick_p(0, p->value.numel() - 1);
    for (int s = 0; s < 10; ++s) {
      const std::int64_t k = pick_p(rng);
      const double orig = p->value.data[k];
      p->value.data[k] = orig + h;
      const double up = projected_loss(layer, x, w);
      p->value.data[k] = orig - h;
      const double down = projected_loss(layer, x, w);
      p->value.data[k] = orig;
      const double fd = (up - down) / (2.0 * h);
      EXPECT_NEAR(p->grad.data[k], fd, tol * std::max(1.0, std::fabs(fd)))
          << "param grad " << p->name << " at " << k;
    }
  }
}

}  // namespace

TEST(Conv2d, MatchesDirectConvolutionOracle) {
  std::mt19937_64 rng(1);
  Conv2d conv(2, 3, 3, 2, 1, true, rng);
  std::vector<Param*> params;
  conv.collect_params("conv", params);
  const Tensor& w = params[0]->value;
  const Tensor& b = params[1]->value;

  const Tensor x = random_tensor({2, 2, 5, 7}, 2);
  const Tensor y = conv.forward(x, false);
  ASSERT_EQ(y.shape, (std::vector<std::int64_t>{2, 3, 3, 4}));

  const int stride = 2, pad = 1, k = 3, IC = 2, OC = 3, H = 5, W = 7, OH = 3, OW = 4;
  for (int n = 0; n < 2; ++n) {
    for (int o = 0; o < OC; ++o) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b.data[o];
          for (int ci = 0; ci < IC; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int sy = oy * stride - pad + ky;
                const int sx = ox * stride - pad + kx;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += w.data[((o * IC + ci) * k + ky) * k + kx] *
                       x.data[((n * IC + ci) * H + sy) * W + sx];
              }
            }
          }
          EXPECT_NEAR(y.data[((n * OC + o) * OH + oy) * OW + ox], acc, 1e-12);
        }
      }
    }
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  Conv2d conv(3, 4, 3, 1, 1, true, rng);
  gradcheck_layer(conv, random_tensor({2, 3, 6, 6}, 4), 5);
}

TEST(Conv2d, StridedGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  Conv2d conv(2, 5, 3, 2, 1, false, rng);
  gradcheck_layer(conv, random_tensor({2, 2, 7, 7}, 7), 8);
}

TEST(BatchNorm2d, NormalizesBatchInTrainMode) {
  BatchNorm2d bn(3);
  const Tensor x = random_tensor({4, 3, 5, 5}, 9, 2.0);
  const Tensor y = bn.forward(x, true);
  // per-channel mean ~0, var ~1
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (int b = 0; b < 4; ++b) {
      for (int i = 0; i < 25; ++i) {
        const double v = y.data[(b * 3 + c) * 25 + i];
        sum += v;
        sq += v * v;
        ++n;
      }
    }
    EXPECT_NEAR(sum / n, 0.0, 1e-10);
    EXPECT_NEAR(sq / n, 1.0, 1e-3);
  }
}

TEST(BatchNorm2d, GradientsMatchFiniteDifferences) {
  BatchNorm2d bn(3);
  gradcheck_layer(bn, random_tensor({3, 3, 4, 4}, 10), 11, 1e-5);
}

TEST(BatchNorm2d, EvalModeUsesRunningStats) {
  BatchNorm2d bn(2);
  const Tensor x = random_tensor({4, 2, 6, 6}, 12, 1.5);
  for (int i = 0; i < 100; ++i) bn.forward(x, true);
  const Tensor y_eval = bn.forward(x, false);
  const Tensor y_train = bn.forward(x, true);
  // after many updates the running stats approach the batch stats
  for (std::int64_t i = 0; i < y_eval.numel(); ++i) {
    EXPECT_NEAR(y_eval.data[i], y_train.data[i], 0.05);
  }
}

TEST(ReLU, GradientsMatchFiniteDifferences) {
  ReLU relu;
  // offset inputs away from the kink
  Tensor x = random_tensor({2, 3, 4, 4}, 13);
  for (double& v : x.data) {
    if (std::fabs(v) < 0.05) v += 0.1;
  }
  gradcheck_layer(relu, x, 14);
}

TEST(MaxPool2d, GradientsMatchFiniteDifferences) {
  MaxPool2d pool(3, 2, 1);
  gradcheck_layer(pool, random_tensor({2, 2, 7, 7}, 15), 16);
}

TEST(GlobalAvgPool, GradientsMatchFiniteDifferences) {
  GlobalAvgPool gap;
  gradcheck_layer(gap, random_tensor({3, 4, 5, 5}, 17), 18);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(19);
  Linear fc(10, 7, rng);
  gradcheck_layer(fc, random_tensor({4, 10}, 20), 21);
}

TEST(Bottleneck, IdentitySkipGradients) {
  std::mt19937_64 rng(22);
  Bottleneck block(8, 4, 8, 1, rng);  // in == out, stride 1: identity skip
  gradcheck_layer(block, random_tensor({2, 8, 6, 6}, 23), 24, 1e-5);
}

TEST(Bottleneck, ProjectionSkipGradients) {
  std::mt19937_64 rng(25);
  Bottleneck block(6, 4, 12, 2, rng);  // projection path
  gradcheck_layer(block, random_tensor({2, 6, 7, 7}, 26), 27, 1e-5);
}

TEST(Sequential, CollectsPrefixedParamNames) {
  std::mt19937_64 rng(28);
  Sequential seq;
  seq.add("conv1", std::make_unique<Conv2d>(3, 8, 3, 1, 1, false, rng));
  seq.add("bn1", std::make_unique<BatchNorm2d>(8));
  std::vector<Param*> params;
  seq.collect_params("backbone", params);
  ASSERT_EQ(params.size(), 3u);
  EXPECT_EQ(params[0]->name, "backbone.conv1.weight");
  EXPECT_EQ(params[1]->name, "backbone.bn1.weight");
  EXPECT_EQ(params[2]->name, "backbone.bn1.bias");
}

TEST(Layers, SeededInitIsReproducible) {
  std::mt19937_64 rng_a(31), rng_b(31);
  Conv2d a(3, 8, 3, 1, 1, false, rng_a);
  Conv2d b(3, 8, 3, 1, 1, false, rng_b);
  std::vector<Param*> pa, pb;
  a.collect_params("a", pa);
  b.collect_params("b", pb);
  EXPECT_EQ(pa[0]->value.data, pb[0]->value.data);
}

TEST(Layers, BackwardWithoutTrainForwardThrows) {
  std::mt19937_64 rng(32);
  Conv2d conv(2, 2, 3, 1, 1, false, rng);
  const Tensor x = random_tensor({1, 2, 4, 4}, 33);
  const Tensor y = conv.forward(x, /*train=*/false);
  EXPECT_THROW(conv.backward(y), InvalidInputError);
}
