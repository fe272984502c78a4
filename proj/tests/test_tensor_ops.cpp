#include "doctest.h"

#include <cmath>

#include "volreg/ops.hpp"
#include "volreg/rng.hpp"

#include "oracles.hpp"

using namespace volreg;
using oracles::random_tensor;

namespace {

template <typename T>
double max_rel_err(std::span<const T> got, const std::vector<T>& expected) {
    REQUIRE(got.size() == expected.size());
    double worst = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        const double g = static_cast<double>(got[i]);
        const double e = static_cast<double>(expected[i]);
        worst = std::max(worst, std::abs(g - e) / std::max(1.0, std::abs(e)));
    }
    return worst;
}

// scalar loss = sum(out * fixed random vector), the usual probe for checking
// an op's backward against finite differences
template <typename MakeOut>
void check_op_gradient(std::vector<Tensor64> inputs, MakeOut&& make_out, Rng& rng,
                       int64_t samples = 40, double tol = 1e-4) {
    Tensor64 probe;
    {
        NoGradGuard guard;
        probe = random_tensor<double>(make_out().shape(), rng);
    }
    auto loss_fn = [&]() { return sum_all(mul(make_out(), probe)); };
    auto result = oracles::finite_diff_check(std::move(inputs), loss_fn, samples, 1e-5, rng);
    CHECK(result.checked >= samples);
    CHECK(result.max_rel_err <= tol);
}

}  // namespace

TEST_SUITE("tensor_ops") {

TEST_CASE("conv2d matches the hand examples") {
    // 3x3 ones against a 3x3 ones kernel sums to 9
    auto input = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto weight = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto bias = Tensor::zeros({1});
    auto out = conv2d(input, weight, bias, 1, 0);
    CHECK(out.shape() == std::vector<int64_t>{1, 1, 1, 1});
    CHECK(out.values()[0] == doctest::Approx(9.0f));

    // 1x1 identity kernel passes the input through
    Rng rng(7);
    auto x = random_tensor<float>({2, 1, 4, 5}, rng);
    auto id_w = Tensor::full({1, 1, 1, 1}, 1.0f);
    auto id = conv2d(x, id_w, bias, 1, 0);
    for (size_t i = 0; i < x.values().size(); ++i) CHECK(id.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d matches the nested-loop oracle on random shapes") {
    Rng rng(11);
    for (auto [stride, pad] : {std::pair{1L, 0L}, {1L, 1L}, {2L, 1L}}) {
        auto input = random_tensor<float>({2, 3, 8, 8}, rng);
        auto weight = random_tensor<float>({4, 3, 3, 3}, rng);
        auto bias = random_tensor<float>({4}, rng);
        auto got = conv2d(input, weight, bias, stride, pad);
        auto expected = oracles::conv2d_ref(
            std::vector<float>(input.values().begin(), input.values().end()), 2, 3, 8, 8,
            std::vector<float>(weight.values().begin(), weight.values().end()), 4, 3, 3,
            std::vector<float>(bias.values().begin(), bias.values().end()), stride, pad);
        CHECK(max_rel_err(got.values(), expected) <= 1e-6);
    }
}

TEST_CASE("conv2d rejects mismatched channels") {
    auto input = Tensor::zeros({1, 2, 4, 4});
    auto weight = Tensor::zeros({1, 3, 3, 3});
    auto bias = Tensor::zeros({1});
    CHECK_THROWS_AS(conv2d(input, weight, bias, 1, 1), ConfigError);
}

TEST_CASE("conv3d matches the hand examples and the loop oracle") {
    auto input = Tensor::full({1, 1, 2, 2, 2}, 1.0f);
    auto weight = Tensor::full({1, 1, 2, 2, 2}, 1.0f);
    auto bias = Tensor::zeros({1});
    auto out = conv3d(input, weight, bias, 1, 0);
    CHECK(out.values()[0] == doctest::Approx(8.0f));

    Rng rng(13);
    auto x = random_tensor<float>({1, 2, 3, 4, 5}, rng);
    auto id_w = Tensor::full({1, 1, 1, 1, 1}, 1.0f);
    auto idx = random_tensor<float>({1, 1, 3, 4, 4}, rng);
    auto id = conv3d(idx, id_w, bias, 1, 0);
    for (size_t i = 0; i < idx.values().size(); ++i) CHECK(id.values()[i] == idx.values()[i]);

    auto w = random_tensor<float>({3, 2, 2, 2, 2}, rng);
    auto b = random_tensor<float>({3}, rng);
    auto got = conv3d(x, w, b, 1, 1);
    auto expected = oracles::conv3d_ref(
        std::vector<float>(x.values().begin(), x.values().end()), 1, 2, 3, 4, 5,
        std::vector<float>(w.values().begin(), w.values().end()), 3, 2, 2, 2,
        std::vector<float>(b.values().begin(), b.values().end()), 1, 1);
    CHECK(max_rel_err(got.values(), expected) <= 1e-6);
}

TEST_CASE("max_pool hand examples, oracle and window guard") {
    auto x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
    auto pooled = max_pool2d(x, 2, 2);
    CHECK(pooled.values()[0] == 4.0f);

    Rng rng(17);
    auto y = random_tensor<float>({1, 2, 5, 5}, rng);
    auto identity = max_pool2d(y, 1, 1);
    for (size_t i = 0; i < y.values().size(); ++i) CHECK(identity.values()[i] == y.values()[i]);

    auto z = random_tensor<float>({1, 1, 6, 6}, rng);
    auto got = max_pool2d(z, 2, 2);
    auto expected = oracles::max_pool2d_ref(
        std::vector<float>(z.values().begin(), z.values().end()), 1, 1, 6, 6, 2, 2);
    for (size_t i = 0; i < expected.size(); ++i) CHECK(got.values()[i] == expected[i]);

    CHECK_THROWS_AS(max_pool2d(x, 3, 1), ConfigError);

    auto v = Tensor::from_values({1, 1, 2, 2, 2}, {1, 5, 2, 3, 8, 0, 4, 7});
    CHECK(max_pool3d(v, 2, 2).values()[0] == 8.0f);
}

TEST_CASE("max_pool gradient goes to the first maximal element") {
    auto x = Tensor::from_values({1, 1, 2, 2}, {4, 4, 1, 4}, true);
    auto loss = sum_all(max_pool2d(x, 2, 2));
    backward(loss);
    CHECK(x.grad()[0] == 1.0f);  // lowest linear index wins the tie
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[3] == 0.0f);
}

TEST_CASE("linear identity, constant-bias and matmul-oracle cases") {
    auto x = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    auto eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    auto zero_b = Tensor::zeros({2});
    auto out = linear(x, eye, zero_b);
    for (size_t i = 0; i < 4; ++i) CHECK(out.values()[i] == x.values()[i]);

    auto zero_w = Tensor::zeros({3, 2});
    auto b = Tensor::from_values({3}, {5, 6, 7});
    auto rows = linear(x, zero_w, b);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) CHECK(rows.values()[i * 3 + j] == b.values()[j]);

    Rng rng(19);
    auto a = random_tensor<float>({4, 6}, rng);
    auto w = random_tensor<float>({3, 6}, rng);
    auto bb = random_tensor<float>({3}, rng);
    auto got = linear(a, w, bb);
    // x W^T via the naive matmul oracle
    std::vector<float> wt(6 * 3);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 6; ++j) wt[j * 3 + i] = w.values()[i * 6 + j];
    auto expected = oracles::matmul_ref(
        std::vector<float>(a.values().begin(), a.values().end()), wt, 4, 6, 3);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) expected[i * 3 + j] += bb.values()[j];
    CHECK(max_rel_err(got.values(), expected) <= 1e-6);

    CHECK_THROWS_AS(linear(a, Tensor::zeros({3, 5}), bb), ConfigError);
}

TEST_CASE("softmax: uniform, stability, frozen values, properties") {
    auto uniform = softmax(Tensor::from_values({3}, {0, 0, 0}), 0);
    for (float v : uniform.values()) CHECK(v == doctest::Approx(1.0f / 3.0f));

    auto stable = softmax(Tensor::from_values({2}, {1000, 0}), 0);
    CHECK(stable.values()[0] == doctest::Approx(1.0f));
    CHECK(stable.values()[1] == doctest::Approx(0.0f));
    CHECK(std::isfinite(stable.values()[0]));

    // frozen expectation, cross-checked against direct exp/sum evaluation
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z = e1 + e2 + e3;
    CHECK(e1 / z == doctest::Approx(0.09003057).epsilon(1e-6));
    CHECK(e2 / z == doctest::Approx(0.24472847).epsilon(1e-6));
    CHECK(e3 / z == doctest::Approx(0.66524096).epsilon(1e-6));
    auto got = softmax(Tensor::from_values({3}, {1, 2, 3}), 0);
    CHECK(got.values()[0] == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(got.values()[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(got.values()[2] == doctest::Approx(0.66524096).epsilon(1e-7));

    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor<float>({5, 4}, rng, -3.0, 3.0);
        const int64_t axis = trial % 2;
        auto y = softmax(x, axis);
        // sums to one along the axis
        if (axis == 0) {
            for (int64_t j = 0; j < 4; ++j) {
                double s = 0;
                for (int64_t i = 0; i < 5; ++i) s += y.values()[i * 4 + j];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        } else {
            for (int64_t i = 0; i < 5; ++i) {
                double s = 0;
                for (int64_t j = 0; j < 4; ++j) s += y.values()[i * 4 + j];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
        // invariant under adding a constant to all logits
        const float c = static_cast<float>(rng.uniform(-5.0, 5.0));
        auto shifted = softmax(scale(add(x, Tensor::full(x.shape(), c)), 1.0f), axis);
        for (size_t i = 0; i < y.values().size(); ++i)
            CHECK(std::abs(shifted.values()[i] - y.values()[i]) <= 1e-6f);
    }
}

TEST_CASE("instance_norm normalizes per sample and channel") {
    // constant channel: epsilon guards the zero variance
    auto flat = instance_norm(Tensor::full({1, 1, 4}, 3.0f), Tensor::full({1}, 1.0f),
                              Tensor::zeros({1}));
    for (float v : flat.values()) CHECK(v == doctest::Approx(0.0f));

    auto x = Tensor::from_values({1, 1, 4}, {1, 2, 3, 4});
    auto y = instance_norm(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}));
    double mean = 0, var = 0;
    for (float v : y.values()) mean += v;
    mean /= 4;
    for (float v : y.values()) var += (v - mean) * (v - mean);
    var /= 4;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-5);

    // separate samples/channels normalize independently
    Rng rng(29);
    auto z = random_tensor<float>({2, 3, 4, 4}, rng);
    auto gain = random_tensor<float>({3}, rng);
    auto shift = random_tensor<float>({3}, rng);
    auto out = instance_norm(z, gain, shift);
    for (int64_t nc = 0; nc < 6; ++nc) {
        double m = 0;
        for (int64_t i = 0; i < 16; ++i) m += out.values()[nc * 16 + i];
        m /= 16;
        CHECK(m == doctest::Approx(shift.values()[nc % 3]).epsilon(1e-4));
    }
}

TEST_CASE("lstm_step hand cases and scalar oracle") {
    const int64_t N = 1, F = 2, H = 3;
    LstmParamsT<float> zero_params{Tensor::zeros({4 * H, F}), Tensor::zeros({4 * H, H}),
                                   Tensor::zeros({4 * H})};
    auto x = Tensor::zeros({N, F});
    auto h0 = Tensor::zeros({N, H});
    auto c0 = Tensor::zeros({N, H});
    auto [h1, c1] = lstm_step(x, h0, c0, zero_params);
    for (float v : h1.values()) CHECK(v == 0.0f);
    for (float v : c1.values()) CHECK(v == 0.0f);

    // saturated forget gate with zero input weights carries the cell state
    std::vector<float> bias_values(4 * H, 0.0f);
    for (int64_t j = 0; j < H; ++j) bias_values[static_cast<size_t>(H + j)] = 30.0f;
    LstmParamsT<float> forget_params{Tensor::zeros({4 * H, F}), Tensor::zeros({4 * H, H}),
                                     Tensor::from_values({4 * H}, bias_values)};
    auto c_prev = Tensor::from_values({N, H}, {0.3f, -1.2f, 2.5f});
    auto [h2, c2] = lstm_step(x, h0, c_prev, forget_params);
    for (int64_t j = 0; j < H; ++j)
        CHECK(c2.values()[j] == doctest::Approx(c_prev.values()[j]).epsilon(1e-6));

    // random single step against the scalar reference
    Rng rng(31);
    auto xr = random_tensor<double>({2, F}, rng);
    auto hr = random_tensor<double>({2, H}, rng);
    auto cr = random_tensor<double>({2, H}, rng);
    LstmParamsT<double> params{random_tensor<double>({4 * H, F}, rng),
                               random_tensor<double>({4 * H, H}, rng),
                               random_tensor<double>({4 * H}, rng)};
    auto [hg, cg] = lstm_step(xr, hr, cr, params);
    std::vector<double> h_ref, c_ref;
    oracles::lstm_step_ref(std::vector<double>(xr.values().begin(), xr.values().end()),
                           std::vector<double>(hr.values().begin(), hr.values().end()),
                           std::vector<double>(cr.values().begin(), cr.values().end()), 2, F, H,
                           std::vector<double>(params.w_input.values().begin(),
                                               params.w_input.values().end()),
                           std::vector<double>(params.w_hidden.values().begin(),
                                               params.w_hidden.values().end()),
                           std::vector<double>(params.bias.values().begin(),
                                               params.bias.values().end()),
                           h_ref, c_ref);
    CHECK(max_rel_err(hg.values(), h_ref) <= 1e-6);
    CHECK(max_rel_err(cg.values(), c_ref) <= 1e-6);
}

TEST_CASE("mse_loss hand arithmetic") {
    auto a = Tensor::from_values({3}, {1, 2, 3});
    CHECK(mse_loss(a, a).item() == 0.0f);
    CHECK(mse_loss(Tensor::from_values({1}, {0}), Tensor::from_values({1}, {2})).item() == 4.0f);
    CHECK(mse_loss(Tensor::from_values({2}, {1, 2}), Tensor::from_values({2}, {3, 0})).item() ==
          4.0f);
    // empty batches are unrepresentable: extents must be positive
    CHECK_THROWS_AS(Tensor::zeros({0}), ConfigError);
}

TEST_CASE("backward seeds ones through sum and matches analytic derivatives") {
    Rng rng(37);
    auto x = random_tensor<float>({3, 4}, rng, -1.0, 1.0, true);
    backward(sum_all(x));
    for (float g : x.grad()) CHECK(g == 1.0f);

    // loss = mse(w, 0) = w^2, so dw = 2w
    auto w = Tensor::scalar(1.7f, true);
    auto loss = mse_loss(w, Tensor::scalar(0.0f));
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(3.4f));

    CHECK_THROWS_AS(backward(x), ConfigError);
}

TEST_CASE("gradients accumulate additively across uses") {
    Rng rng(41);
    auto a = random_tensor<float>({4}, rng);
    auto b = random_tensor<float>({4}, rng);

    auto x1 = random_tensor<float>({4}, rng, -1.0, 1.0, true);
    backward(sum_all(mul(x1, a)));
    std::vector<float> ga(x1.grad().begin(), x1.grad().end());

    auto x2 = Tensor::from_values({4}, std::vector<float>(x1.values().begin(),
                                                          x1.values().end()), true);
    backward(sum_all(mul(x2, b)));
    std::vector<float> gb(x2.grad().begin(), x2.grad().end());

    // one tensor feeding two paths gets the sum of both path gradients
    auto x3 = Tensor::from_values({4}, std::vector<float>(x1.values().begin(),
                                                          x1.values().end()), true);
    backward(add(sum_all(mul(x3, a)), sum_all(mul(x3, b))));
    for (size_t i = 0; i < 4; ++i)
        CHECK(x3.grad()[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-6));
}

TEST_CASE("every differentiable op passes central finite differences") {
    Rng rng(43);

    SUBCASE("elementwise and activations") {
        auto a = random_tensor<double>({3, 4}, rng, -1.0, 1.0, true);
        auto b = random_tensor<double>({3, 4}, rng, -1.0, 1.0, true);
        check_op_gradient({a, b}, [&] { return mul(add(a, b), sub(a, b)); }, rng);
        auto x = random_tensor<double>({20}, rng, 0.1, 2.0, true);  // away from the relu kink
        check_op_gradient({x}, [&] { return relu(scale(x, 1.5)); }, rng);
        check_op_gradient({x}, [&] { return sigmoid(x); }, rng);
        check_op_gradient({x}, [&] { return tanh_act(x); }, rng);
    }

    SUBCASE("linear algebra") {
        auto a = random_tensor<double>({3, 5}, rng, -1.0, 1.0, true);
        auto b = random_tensor<double>({5, 2}, rng, -1.0, 1.0, true);
        check_op_gradient({a, b}, [&] { return matmul(a, b); }, rng);
        auto w = random_tensor<double>({4, 5}, rng, -1.0, 1.0, true);
        auto bias = random_tensor<double>({4}, rng, -1.0, 1.0, true);
        check_op_gradient({a, w, bias}, [&] { return linear(a, w, bias); }, rng);
        check_op_gradient({a}, [&] { return transpose2d(a); }, rng);
    }

    SUBCASE("convolutions and pooling") {
        auto x = random_tensor<double>({2, 2, 6, 5}, rng, -1.0, 1.0, true);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng, -1.0, 1.0, true);
        auto b = random_tensor<double>({3}, rng, -1.0, 1.0, true);
        check_op_gradient({x, w, b}, [&] { return conv2d(x, w, b, 1, 1); }, rng);
        check_op_gradient({x}, [&] { return max_pool2d(x, 2, 2); }, rng);
        check_op_gradient({x}, [&] { return global_avg_pool(x); }, rng);

        auto x3 = random_tensor<double>({1, 2, 4, 4, 4}, rng, -1.0, 1.0, true);
        auto w3 = random_tensor<double>({2, 2, 2, 2, 2}, rng, -1.0, 1.0, true);
        auto b3 = random_tensor<double>({2}, rng, -1.0, 1.0, true);
        check_op_gradient({x3, w3, b3}, [&] { return conv3d(x3, w3, b3, 1, 1); }, rng);
        check_op_gradient({x3}, [&] { return max_pool3d(x3, 2, 2); }, rng);
    }

    SUBCASE("normalization, softmax and reductions") {
        auto x = random_tensor<double>({2, 3, 4, 4}, rng, -1.0, 1.0, true);
        auto gain = random_tensor<double>({3}, rng, 0.5, 1.5, true);
        auto shift = random_tensor<double>({3}, rng, -0.5, 0.5, true);
        check_op_gradient({x, gain, shift},
                          [&] { return instance_norm(x, gain, shift); }, rng, 40, 1e-4);
        auto logits = random_tensor<double>({6, 3}, rng, -2.0, 2.0, true);
        check_op_gradient({logits}, [&] { return softmax(logits, 0); }, rng);
        auto rows = random_tensor<double>({5, 4}, rng, -1.0, 1.0, true);
        check_op_gradient({rows}, [&] { return reduce_mean_rows(rows); }, rng);
        check_op_gradient({rows}, [&] { return reduce_max_rows(rows); }, rng);
        auto weights = random_tensor<double>({5, 2}, rng, -1.0, 1.0, true);
        check_op_gradient({rows, weights},
                          [&] { return weighted_sum_rows(rows, weights); }, rng);
    }

    SUBCASE("shape ops and lstm") {
        auto x = random_tensor<double>({4, 6}, rng, -1.0, 1.0, true);
        check_op_gradient({x}, [&] { return reshape(narrow(x, 1, 1, 3), {12}); }, rng);
        auto y = random_tensor<double>({2, 6}, rng, -1.0, 1.0, true);
        check_op_gradient({x, y},
                          [&] { return concat_rows(std::vector<Tensor64>{x, y}); }, rng);

        const int64_t F = 3, H = 4;
        auto xt = random_tensor<double>({2, F}, rng, -1.0, 1.0, true);
        auto h0 = random_tensor<double>({2, H}, rng, -1.0, 1.0, true);
        auto c0 = random_tensor<double>({2, H}, rng, -1.0, 1.0, true);
        LstmParamsT<double> p{random_tensor<double>({4 * H, F}, rng, -0.5, 0.5, true),
                              random_tensor<double>({4 * H, H}, rng, -0.5, 0.5, true),
                              random_tensor<double>({4 * H}, rng, -0.5, 0.5, true)};
        check_op_gradient({xt, h0, c0, p.w_input, p.w_hidden, p.bias},
                          [&] {
                              auto [h1, c1] = lstm_step(xt, h0, c0, p);
                              auto [h2, c2] = lstm_step(xt, h1, c1, p);
                              return concat_rows(std::vector<Tensor64>{h2, c2});
                          },
                          rng, 50);
    }

    SUBCASE("mse") {
        auto pred = random_tensor<double>({6}, rng, -1.0, 1.0, true);
        auto target = random_tensor<double>({6}, rng, -1.0, 1.0, false);
        auto loss_fn = [&] { return mse_loss(pred, target); };
        auto result = oracles::finite_diff_check({pred}, loss_fn, 12, 1e-5, rng);
        CHECK(result.max_rel_err <= 1e-4);
    }
}

}  // TEST_SUITE
