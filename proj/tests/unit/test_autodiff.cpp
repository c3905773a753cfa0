// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tfsed/autodiff.hpp"

using namespace tfsed;
using tfsed::testing::grad_check;
using tfsed::testing::random_tensor;
using Vd = ad::Var<double>;
using Vf = ad::Var<float>;

namespace {

template <typename T>
ad::Var<T> cst(Shape s, std::vector<T> v) {
  return ad::Var<T>::constant(Tensor<T>(std::move(s), std::move(v)));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_SUITE("matmul") {
  TEST_CASE("identity and annihilator") {
    auto a = cst<float>({2, 2}, {1, 2, 3, 4});
    auto id = ad::Var<float>::constant(Tensor<float>::identity(2));
    CHECK(ad::matmul(a, id).value().storage() == AlignedVector<float>{1, 2, 3, 4});
    auto z = ad::Var<float>::constant(Tensor<float>::zeros({2, 2}));
    CHECK(ad::matmul(a, z).value().storage() == AlignedVector<float>{0, 0, 0, 0});
  }

  TEST_CASE("random 4x3 by 3x5 matches triple loop") {
    Rng rng(11);
    auto a = random_tensor<float>({4, 3}, rng);
    auto b = random_tensor<float>({3, 5}, rng);
    auto out = ad::matmul(Vf::constant(a), Vf::constant(b));
    CHECK(max_abs_diff(out.value(), testing::naive_matmul(a, b)) < 1e-6);
  }

  TEST_CASE("inner dimension mismatch") {
    Rng rng(1);
    auto a = Vf::constant(random_tensor<float>({2, 3}, rng));
    auto b = Vf::constant(random_tensor<float>({2, 3}, rng));
    CHECK_THROWS_AS(ad::matmul(a, b), Error);
  }

  TEST_CASE("gradient") {
    Rng rng(2);
    auto r = grad_check([](const std::vector<Vd>& v) { return ad::matmul(v[0], v[1]); },
                        {random_tensor<double>({3, 4}, rng), random_tensor<double>({4, 2}, rng)},
                        1e-4);
    CHECK(r.max_rel_error < 1e-3);
    auto l = grad_check(
        [](const std::vector<Vd>& v) { return ad::linear(v[0], v[1], v[2]); },
        {random_tensor<double>({3, 4}, rng), random_tensor<double>({5, 4}, rng),
         random_tensor<double>({5}, rng)},
        1e-4);
    CHECK(l.max_rel_error < 1e-3);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("1x1 identity kernel leaves input unchanged") {
    Rng rng(3);
    auto x = random_tensor<float>({1, 5, 6}, rng);
    auto k = Vf::constant(Tensor<float>::ones({1, 1, 1, 1}));
    auto y = ad::conv2d(Vf::constant(x), k, Vf{});
    CHECK(y.value().storage() == x.storage());
  }

  TEST_CASE("ones kernel counts overlap") {
    auto x = Vf::constant(Tensor<float>::ones({1, 4, 4}));
    auto k = Vf::constant(Tensor<float>::ones({1, 1, 3, 3}));
    auto y = ad::conv2d(x, k, Vf{});
    REQUIRE(y.shape() == Shape{1, 4, 4});
    CHECK(y.value()[1 * 4 + 1] == doctest::Approx(9));
    CHECK(y.value()[0] == doctest::Approx(4));
    CHECK(y.value()[1] == doctest::Approx(6));
  }

  TEST_CASE("random input matches naive loops") {
    Rng rng(4);
    auto x = random_tensor<float>({2, 8, 8}, rng);
    auto k = random_tensor<float>({3, 2, 3, 3}, rng);
    auto y = ad::conv2d(Vf::constant(x), Vf::constant(k), Vf{});
    CHECK(max_abs_diff(y.value(), testing::naive_conv_same(x, k)) < 1e-5);
  }

  TEST_CASE("zero stride is a dimension error") {
    auto x = Vf::constant(Tensor<float>::ones({1, 4, 4}));
    auto k = Vf::constant(Tensor<float>::ones({1, 1, 3, 3}));
    CHECK_THROWS_AS(ad::conv2d(x, k, Vf{}, {0, 1, ad::Padding::kSame}), Error);
    CHECK_THROWS_AS(Tensor<float>({1, 0, 3, 3}), Error);
  }

  TEST_CASE("strided and valid geometry") {
    auto x = Vf::constant(Tensor<float>::ones({1, 7, 9}));
    auto k = Vf::constant(Tensor<float>::ones({2, 1, 3, 3}));
    CHECK(ad::conv2d(x, k, Vf{}, {2, 2, ad::Padding::kSame}).shape() == Shape{2, 4, 5});
    CHECK(ad::conv2d(x, k, Vf{}, {1, 1, ad::Padding::kValid}).shape() == Shape{2, 5, 7});
    auto big = Vf::constant(Tensor<float>::ones({1, 1, 9, 3}));
    CHECK_THROWS_AS(ad::conv2d(x, big, Vf{}, {1, 1, ad::Padding::kValid}), Error);
  }

  TEST_CASE("gradient, batched with bias and stride") {
    Rng rng(5);
    auto r = grad_check(
        [](const std::vector<Vd>& v) {
          return ad::conv2d(v[0], v[1], v[2], {1, 2, ad::Padding::kSame});
        },
        {random_tensor<double>({2, 2, 5, 6}, rng), random_tensor<double>({3, 2, 3, 3}, rng),
         random_tensor<double>({3}, rng)},
        1e-4);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_SUITE("maxpool2d") {
  TEST_CASE("2x2 window") {
    auto x = cst<float>({1, 2, 2}, {1, 2, 3, 4});
    auto y = ad::maxpool2d(x, 2, 2);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y.value()[0] == 4);
  }

  TEST_CASE("constant input") {
    auto x = ad::Var<float>::constant(Tensor<float>({2, 5, 7}, 3.5f));
    auto y = ad::maxpool2d(x, 2, 3);
    CHECK(y.shape() == Shape{2, 3, 3});
    for (float v : y.data()) CHECK(v == 3.5f);
  }

  TEST_CASE("random input matches scan oracle") {
    Rng rng(6);
    auto x = random_tensor<float>({1, 8, 8}, rng);
    CHECK(max_abs_diff(ad::maxpool2d(Vf::constant(x), 2, 2).value(),
                       testing::naive_maxpool(x, 2, 2)) == 0.0);
  }

  TEST_CASE("ties route gradient to the first maximum") {
    auto x = Vf::parameter(Tensor<float>({1, 2, 2}, 1.0f));
    ad::backward(ad::sum(ad::maxpool2d(x, 2, 2)));
    CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1, 0, 0, 0});
  }

  TEST_CASE("gradient") {
    Rng rng(7);
    auto r = grad_check([](const std::vector<Vd>& v) { return ad::maxpool2d(v[0], 2, 3); },
                        {random_tensor<double>({2, 2, 6, 7}, rng)}, 1e-4);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_SUITE("batchnorm") {
  TEST_CASE("train mode normalizes each channel") {
    Rng rng(8);
    auto x = Vd::constant(random_tensor<double>({3, 2, 4, 5}, rng, -3, 7));
    ad::BatchNormStats<double> stats(2);
    auto y = ad::batchnorm(x, Vd::constant(Tensor<double>::ones({2})),
                           Vd::constant(Tensor<double>::zeros({2})), stats, ad::Mode::kTrain);
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0, ss = 0;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < 20; ++i) {
          const double v = y.value()[(b * 2 + c) * 20 + i];
          s += v;
          ss += v * v;
        }
      CHECK(std::abs(s / 60) < 1e-4);
      CHECK(std::abs(ss / 60 - 1.0) < 1e-4);
    }
    CHECK(stats.updates == 1);
  }

  TEST_CASE("constant input gives zeros") {
    auto x = Vf::constant(Tensor<float>({2, 3, 3}, 4.0f));
    ad::BatchNormStats<float> stats(2);
    auto y = ad::batchnorm(x, Vf::constant(Tensor<float>::ones({2})),
                           Vf::constant(Tensor<float>::zeros({2})), stats, ad::Mode::kTrain);
    for (float v : y.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("eval before any training update is an error") {
    auto x = Vf::constant(Tensor<float>({2, 3, 3}, 4.0f));
    ad::BatchNormStats<float> stats(2);
    auto g = Vf::constant(Tensor<float>::ones({2}));
    auto b = Vf::constant(Tensor<float>::zeros({2}));
    CHECK_THROWS_AS(ad::batchnorm(x, g, b, stats, ad::Mode::kEval), Error);
    ad::batchnorm(x, g, b, stats, ad::Mode::kTrain);
    CHECK_NOTHROW(ad::batchnorm(x, g, b, stats, ad::Mode::kEval));
  }

  TEST_CASE("running statistics follow momentum 0.9") {
    ad::BatchNormStats<double> stats(1);
    auto g = Vd::constant(Tensor<double>::ones({1}));
    auto b = Vd::constant(Tensor<double>::zeros({1}));
    ad::batchnorm(Vd::constant(Tensor<double>({1, 1, 2}, {0.0, 2.0})), g, b, stats,
                  ad::Mode::kTrain);
    CHECK(stats.mean[0] == doctest::Approx(1.0));
    CHECK(stats.var[0] == doctest::Approx(2.0));
    ad::batchnorm(Vd::constant(Tensor<double>({1, 1, 2}, {4.0, 6.0})), g, b, stats,
                  ad::Mode::kTrain);
    CHECK(stats.mean[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 5.0));
  }

  TEST_CASE("train-mode gradient matches finite differences") {
    Rng rng(9);
    ad::BatchNormStats<double> stats(3);
    auto r = grad_check(
        [&](const std::vector<Vd>& v) {
          return ad::batchnorm(v[0], v[1], v[2], stats, ad::Mode::kTrain);
        },
        {random_tensor<double>({2, 3, 4, 4}, rng), random_tensor<double>({3}, rng, 0.5, 1.5),
         random_tensor<double>({3}, rng)},
        1e-4);
    CHECK(r.max_rel_error < 1e-3);
    auto e = grad_check(
        [&](const std::vector<Vd>& v) {
          return ad::batchnorm(v[0], v[1], v[2], stats, ad::Mode::kEval);
        },
        {random_tensor<double>({2, 3, 4, 4}, rng), random_tensor<double>({3}, rng, 0.5, 1.5),
         random_tensor<double>({3}, rng)},
        1e-4);
    CHECK(e.max_rel_error < 1e-3);
  }
}

TEST_SUITE("activations") {
  TEST_CASE("reference values") {
    auto r = ad::relu(cst<float>({3}, {-1, 0, 2}));
    CHECK(r.value().storage() == AlignedVector<float>{0, 0, 2});
    CHECK(ad::sigmoid(cst<float>({1}, {0})).value()[0] == 0.5f);
    auto s = ad::softmax(cst<double>({3}, {0, 0, 0}), 0);
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(ad::softmax(cst<double>({3}, {0, 0, 0}), 1), Error);
  }

  TEST_CASE("gradients") {
    Rng rng(10);
    const std::vector<Tensor<double>> in{random_tensor<double>({3, 4, 5}, rng, -2, 2)};
    CHECK(grad_check([](const std::vector<Vd>& v) { return ad::sigmoid(v[0]); }, in, 1e-4)
              .max_rel_error < 1e-3);
    CHECK(grad_check([](const std::vector<Vd>& v) { return ad::tanh(v[0]); }, in, 1e-4)
              .max_rel_error < 1e-3);
    CHECK(grad_check([](const std::vector<Vd>& v) { return ad::relu(v[0]); }, in, 1e-4)
              .max_rel_error < 1e-3);
    for (std::size_t axis = 0; axis < 3; ++axis)
      CHECK(grad_check([axis](const std::vector<Vd>& v) { return ad::softmax(v[0], axis); }, in,
                       1e-4)
                .max_rel_error < 1e-3);
  }
}

TEST_SUITE("gru_cell") {
  ad::GruWeights<float> zero_weights(std::size_t d, std::size_t u) {
    return {Vf::parameter(Tensor<float>::zeros({3 * u, d})),
            Vf::parameter(Tensor<float>::zeros({3 * u, u})),
            Vf::parameter(Tensor<float>::zeros({3 * u}))};
  }

  TEST_CASE("zero parameters halve the previous state") {
    auto w = zero_weights(4, 3);
    auto x = cst<float>({4}, {1, -2, 3, 0.5});
    auto h = cst<float>({3}, {0.2f, -0.8f, 1.0f});
    auto out = ad::gru_cell(x, h, w);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out.value()[i] == doctest::Approx(0.5 * h.value()[i]));
    auto zero = ad::gru_cell(x, Vf::constant(Tensor<float>::zeros({3})), w);
    for (float v : zero.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("dimension mismatch") {
    auto w = zero_weights(4, 3);
    CHECK_THROWS_AS(ad::gru_cell(cst<float>({3}, {1, 2, 3}), cst<float>({3}, {0, 0, 0}), w), Error);
    CHECK_THROWS_AS(ad::gru_cell(cst<float>({4}, {1, 2, 3, 4}), cst<float>({2}, {0, 0}), w), Error);
  }

  TEST_CASE("gradient with random parameters") {
    Rng rng(12);
    auto r = grad_check(
        [](const std::vector<Vd>& v) {
          ad::GruWeights<double> w{v[2], v[3], v[4]};
          return ad::gru_cell(v[0], v[1], w);
        },
        {random_tensor<double>({2, 5}, rng), random_tensor<double>({2, 4}, rng),
         random_tensor<double>({12, 5}, rng), random_tensor<double>({12, 4}, rng),
         random_tensor<double>({12}, rng)},
        1e-4);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_SUITE("dropout") {
  TEST_CASE("identity cases") {
    Rng rng(13);
    auto x = Vf::constant(random_tensor<float>({100}, rng));
    CHECK(ad::dropout(x, 0.0, ad::Mode::kTrain, rng).value().storage() == x.value().storage());
    CHECK(ad::dropout(x, 0.7, ad::Mode::kEval, rng).value().storage() == x.value().storage());
  }

  TEST_CASE("invalid probability") {
    Rng rng(14);
    auto x = Vf::constant(Tensor<float>::ones({4}));
    CHECK_THROWS_AS(ad::dropout(x, 1.0, ad::Mode::kTrain, rng), Error);
    CHECK_THROWS_AS(ad::dropout(x, -0.1, ad::Mode::kTrain, rng), Error);
  }

  TEST_CASE("train mode preserves the mean") {
    Rng rng(15);
    auto x = Vf::constant(Tensor<float>::ones({1000000}));
    auto y = ad::dropout(x, 0.5, ad::Mode::kTrain, rng);
    double s = 0;
    std::size_t zeros = 0;
    for (float v : y.data()) {
      s += v;
      zeros += v == 0.0f;
    }
    CHECK(std::abs(s / 1e6 - 1.0) < 0.01);
    CHECK(zeros > 490000);
    CHECK(zeros < 510000);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum of squares") {
    auto x = Vd::parameter(Tensor<double>({3}, {1.0, -2.0, 0.5}));
    ad::backward(ad::sum(ad::mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == -4.0);
    CHECK(x.grad()[2] == 1.0);
  }

  TEST_CASE("detached constant produces no gradient") {
    auto x = Vd::parameter(Tensor<double>({3}, {1.0, 2.0, 3.0}));
    auto c = ad::sum(ad::detach(ad::mul(x, x)));
    ad::backward(c);
    CHECK((!x.has_grad() || std::all_of(x.grad().begin(), x.grad().end(),
                                        [](double g) { return g == 0.0; })));
  }

  TEST_CASE("shared nodes sum their gradients") {
    auto x = Vd::parameter(Tensor<double>({2}, {3.0, 4.0}));
    auto y = ad::add(x, ad::scale(x, 2.0));
    ad::backward(ad::sum(ad::mul(y, x)));  // 3 x^2
    CHECK(x.grad()[0] == doctest::Approx(18.0));
    CHECK(x.grad()[1] == doctest::Approx(24.0));
  }

  TEST_CASE("second backward on the same graph fails") {
    auto x = Vd::parameter(Tensor<double>({2}, {1.0, 2.0}));
    auto loss = ad::sum(ad::mul(x, x));
    ad::backward(loss);
    CHECK_THROWS_AS(ad::backward(loss), Error);
  }

  TEST_CASE("non-scalar loss") {
    auto x = Vd::parameter(Tensor<double>({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(ad::backward(ad::mul(x, x)), Error);
  }

  TEST_CASE("no-grad guard records nothing") {
    auto x = Vd::parameter(Tensor<double>({2}, {1.0, 2.0}));
    ad::NoGradGuard guard;
    auto y = ad::sum(ad::mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("structural op gradients") {
    Rng rng(16);
    auto r = grad_check(
        [](const std::vector<Vd>& v) {
          auto c = ad::channels_to_features(v[0]);
          std::vector<Vd> steps{ad::select_step(c, 2), ad::select_step(c, 0)};
          return ad::stack_steps(steps);
        },
        {random_tensor<double>({2, 3, 4, 5}, rng)}, 1e-4);
    CHECK(r.max_rel_error < 1e-3);
    auto m = grad_check([](const std::vector<Vd>& v) { return ad::max_last(v[0]); },
                        {random_tensor<double>({3, 7}, rng)}, 1e-4);
    CHECK(m.max_rel_error < 1e-3);
    auto n = grad_check(
        [](const std::vector<Vd>& v) { return ad::rescale_to_sum(v[0], 5.0, 1e-8, false); },
        {random_tensor<double>({3, 5}, rng, 0.1, 1.0)}, 1e-4);
    CHECK(n.max_rel_error < 1e-3);
  }

  TEST_CASE("rescale_to_sum uniform fallback") {
    auto y = ad::rescale_to_sum(cst<double>({2, 3}, {0, 0, 0, 1, 1, 2}), 3.0, 1e-8, true);
    CHECK(y.value()[0] == 1.0);
    CHECK(y.value()[2] == 1.0);
    CHECK(y.value()[5] == doctest::Approx(1.5));
  }
}

TEST_SUITE("adam") {
  TEST_CASE("first step moves by the learning rate") {
    std::vector<Vf> params{Vf::parameter(Tensor<float>({4}, 0.5f))};
    for (auto& g : params[0].node()->value.ensure_grad()) g = 1.0f;
    ad::AdamState state;
    ad::adam_step(params, state);
    for (float v : params[0].data()) CHECK(v == doctest::Approx(0.5 - 0.001).epsilon(1e-6));
    CHECK(state.step_count == 1);
  }

  TEST_CASE("zero gradient leaves parameters unchanged") {
    std::vector<Vf> params{Vf::parameter(Tensor<float>({3}, {1.0f, -2.0f, 3.0f}))};
    params[0].node()->value.ensure_grad();
    ad::AdamState state;
    ad::adam_step(params, state);
    CHECK(params[0].value().storage() == AlignedVector<float>{1.0f, -2.0f, 3.0f});
    CHECK(state.step_count == 1);
    ad::adam_step(params, state);
    CHECK(state.step_count == 2);
  }

  TEST_CASE("missing gradient is a state error") {
    std::vector<Vf> params{Vf::parameter(Tensor<float>({3}, 1.0f))};
    ad::AdamState state;
    CHECK_THROWS_AS(ad::adam_step(params, state), Error);
  }

  TEST_CASE("converges on a scalar quadratic") {
    std::vector<Vd> params{Vd::parameter(Tensor<double>({1}, 0.0))};
    ad::AdamState state;
    state.learning_rate = 0.1;
    auto three = Vd::constant(Tensor<double>({1}, 3.0));
    for (int i = 0; i < 200; ++i) {
      ad::zero_grads(params);
      auto d = ad::sub(params[0], three);
      ad::backward(ad::sum(ad::mul(d, d)));
      ad::adam_step(params, state);
    }
    CHECK(std::abs(params[0].data()[0] - 3.0) < 0.05);
  }
}

TEST_CASE("loop oracles agree on random shapes up to 8 per dimension") {
  Rng rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), n = 1 + rng.below(8);
    auto a = random_tensor<float>({m, k}, rng);
    auto b = random_tensor<float>({k, n}, rng);
    CHECK(max_abs_diff(ad::matmul(Vf::constant(a), Vf::constant(b)).value(),
                       testing::naive_matmul(a, b)) < 1e-5);

    const std::size_t ci = 1 + rng.below(4), co = 1 + rng.below(4);
    const std::size_t t = 1 + rng.below(8), f = 1 + rng.below(8);
    const std::size_t kt = 2 * rng.below(2) + 1, kf = 2 * rng.below(2) + 1;
    auto x = random_tensor<float>({ci, t, f}, rng);
    auto w = random_tensor<float>({co, ci, kt, kf}, rng);
    CHECK(max_abs_diff(ad::conv2d(Vf::constant(x), Vf::constant(w), Vf{}).value(),
                       testing::naive_conv_same(x, w)) < 1e-5);

    const std::size_t wt = 1 + rng.below(3), wf = 1 + rng.below(3);
    CHECK(max_abs_diff(ad::maxpool2d(Vf::constant(x), wt, wf).value(),
                       testing::naive_maxpool(x, wt, wf)) == 0.0);
  }
}
