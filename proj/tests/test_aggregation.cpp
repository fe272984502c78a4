#include "doctest.h"

#include <cmath>

#include "volreg/aggregation.hpp"
#include "volreg/ops.hpp"

#include "oracles.hpp"

using namespace volreg;
using oracles::random_tensor;

namespace {

template <typename T>
TensorT<T> permute_rows(const TensorT<T>& x, const std::vector<int64_t>& perm) {
    const int64_t p = x.extent(0), d = x.extent(1);
    std::vector<T> out(static_cast<size_t>(p * d));
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < d; ++j)
            out[i * d + j] = x.values()[perm[static_cast<size_t>(i)] * d + j];
    return TensorT<T>::from_values({p, d}, std::move(out), x.requires_grad());
}

AttentionParamsT<double> identity_params_2d() {
    AttentionParamsT<double> p;
    p.key_weight = Tensor64::from_values({2, 2}, {1, 0, 0, 1});
    p.key_bias = Tensor64::zeros({2});
    p.value_weight = Tensor64::from_values({2, 2}, {1, 0, 0, 1});
    p.value_bias = Tensor64::zeros({2});
    p.query = Tensor64::from_values({2, 1}, {1, 0});
    return p;
}

}  // namespace

TEST_SUITE("aggregation") {

TEST_CASE("mean aggregation hand cases") {
    auto same = Tensor::from_values({3, 2}, {1, 2, 1, 2, 1, 2});
    auto m = aggregate_mean(same);
    CHECK(m.values()[0] == doctest::Approx(1.0f));
    CHECK(m.values()[1] == doctest::Approx(2.0f));

    auto two = Tensor::from_values({2, 2}, {1, 3, 3, 1});
    auto m2 = aggregate_mean(two);
    CHECK(m2.values()[0] == doctest::Approx(2.0f));
    CHECK(m2.values()[1] == doctest::Approx(2.0f));
}

TEST_CASE("max aggregation hand cases and monotonicity") {
    auto two = Tensor::from_values({2, 2}, {1, 5, 4, 2});
    auto m = aggregate_max(two);
    CHECK(m.values()[0] == 4.0f);
    CHECK(m.values()[1] == 5.0f);

    auto single = Tensor::from_values({1, 3}, {7, -2, 0});
    auto s = aggregate_max(single);
    for (int64_t j = 0; j < 3; ++j) CHECK(s.values()[j] == single.values()[j]);

    // raising any one coordinate never lowers any output coordinate
    Rng rng(61);
    for (int trial = 0; trial < 30; ++trial) {
        auto x = random_tensor<float>({4, 3}, rng);
        auto base = aggregate_max(x);
        auto bumped = x.clone_detached();
        const int64_t i = static_cast<int64_t>(rng.below(4)), j = static_cast<int64_t>(rng.below(3));
        bumped.values()[i * 3 + j] += static_cast<float>(rng.uniform(0.0, 2.0));
        auto after = aggregate_max(bumped);
        for (int64_t c = 0; c < 3; ++c) CHECK(after.values()[c] >= base.values()[c]);
    }
}

TEST_CASE("aggregators are permutation invariant") {
    Rng rng(67);
    AttentionParamsT<float> params = init_attention_params<float>(6, 5, 4, 2, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t p = 2 + static_cast<int64_t>(rng.below(30));
        auto x = random_tensor<float>({p, 6}, rng);
        std::vector<int64_t> perm(static_cast<size_t>(p));
        for (int64_t i = 0; i < p; ++i) perm[static_cast<size_t>(i)] = i;
        rng.shuffle(perm);
        auto px = permute_rows(x, perm);

        auto m1 = aggregate_mean(x), m2 = aggregate_mean(px);
        auto x1 = aggregate_max(x), x2 = aggregate_max(px);
        auto a1 = aggregate_attention(x, params), a2 = aggregate_attention(px, params);
        for (int64_t j = 0; j < 6; ++j) {
            CHECK(std::abs(m1.values()[j] - m2.values()[j]) <= 1e-6f);
            CHECK(x1.values()[j] == x2.values()[j]);  // max is exact
        }
        for (int64_t j = 0; j < a1.numel(); ++j)
            CHECK(std::abs(a1.values()[j] - a2.values()[j]) <= 1e-6f);
    }
}

TEST_CASE("aggregation gradients are permutation equivariant") {
    Rng rng(71);
    AttentionParamsT<float> params = init_attention_params<float>(4, 4, 4, 1, rng);
    const int64_t p = 6, d = 4;
    auto probe_mean = random_tensor<float>({d}, rng);
    auto probe_attn = random_tensor<float>({params.heads() * params.value_dim()}, rng);

    std::vector<int64_t> perm{3, 0, 5, 1, 4, 2};
    for (int which = 0; which < 3; ++which) {
        auto x = random_tensor<float>({p, d}, rng, -1.0, 1.0, true);
        auto px = permute_rows(x, perm);
        px.set_requires_grad(true);

        auto agg = [&](const Tensor& in) {
            switch (which) {
                case 0: return aggregate_mean(in);
                case 1: return aggregate_max(in);
                default: return aggregate_attention(in, params);
            }
        };
        const auto& probe = which == 2 ? probe_attn : probe_mean;
        backward(sum_all(mul(agg(x), probe)));
        backward(sum_all(mul(agg(px), probe)));
        for (int64_t i = 0; i < p; ++i)
            for (int64_t j = 0; j < d; ++j)
                CHECK(std::abs(px.grad()[i * d + j] -
                               x.grad()[perm[static_cast<size_t>(i)] * d + j]) <= 1e-6f);
    }
}

TEST_CASE("zero query reduces attention to the mean of value vectors") {
    Rng rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t d = 2 + static_cast<int64_t>(rng.below(5));
        const int64_t dk = 2 + static_cast<int64_t>(rng.below(5));
        const int64_t dv = 2 + static_cast<int64_t>(rng.below(5));
        const int64_t m = 1 + static_cast<int64_t>(rng.below(3));
        const int64_t p = 1 + static_cast<int64_t>(rng.below(20));
        auto params = init_attention_params<float>(d, dk, dv, m, rng);
        auto zq = params.query.values();
        std::fill(zq.begin(), zq.end(), 0.0f);

        auto x = random_tensor<float>({p, d}, rng);
        auto weights = attention_weights(x, params);
        for (int64_t h = 0; h < m; ++h)
            for (int64_t i = 0; i < p; ++i)
                CHECK(weights.values()[h * p + i] ==
                      doctest::Approx(1.0 / static_cast<double>(p)).epsilon(1e-6));

        auto out = aggregate_attention(x, params);
        auto values = linear(x, params.value_weight, params.value_bias);
        auto mean_v = aggregate_mean(values);
        for (int64_t h = 0; h < m; ++h)
            for (int64_t j = 0; j < dv; ++j)
                CHECK(std::abs(out.values()[h * dv + j] - mean_v.values()[j]) <= 1e-6f);
    }
}

TEST_CASE("singleton sets get weight one") {
    Rng rng(79);
    auto params = init_attention_params<float>(3, 3, 3, 2, rng);
    auto x = random_tensor<float>({1, 3}, rng);
    auto w = attention_weights(x, params);
    CHECK(w.shape() == std::vector<int64_t>{2, 1});
    CHECK(w.values()[0] == doctest::Approx(1.0f));
    CHECK(w.values()[1] == doctest::Approx(1.0f));

    auto out = aggregate_attention(x, params);
    auto v = linear(x, params.value_weight, params.value_bias);
    for (int64_t h = 0; h < 2; ++h)
        for (int64_t j = 0; j < 3; ++j)
            CHECK(out.values()[h * 3 + j] == doctest::Approx(v.values()[j]).epsilon(1e-6));
}

TEST_CASE("hand-evaluated softmax attention case") {
    // identity maps, q=[1,0], r1=[sqrt(2) ln2, 0], r2=[0,0]:
    // logits [ln2, 0], weights [2/3, 1/3], output [(2/3) sqrt(2) ln2, 0]
    auto params = identity_params_2d();
    const double r1 = std::sqrt(2.0) * std::log(2.0);
    auto x = Tensor64::from_values({2, 2}, {r1, 0.0, 0.0, 0.0});

    auto w = attention_weights(x, params);
    CHECK(w.values()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    CHECK(w.values()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

    auto out = aggregate_attention(x, params);
    CHECK(out.values()[0] == doctest::Approx((2.0 / 3.0) * r1).epsilon(1e-9));
    CHECK(out.values()[1] == doctest::Approx(0.0));
}

TEST_CASE("attention weight rows sum to one") {
    Rng rng(83);
    auto params = init_attention_params<float>(5, 4, 3, 3, rng);
    auto x = random_tensor<float>({11, 5}, rng);
    auto w = attention_weights(x, params);
    for (int64_t h = 0; h < 3; ++h) {
        double sum = 0;
        for (int64_t i = 0; i < 11; ++i) sum += w.values()[h * 11 + i];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("logit shifts along the query direction cancel in the softmax") {
    Rng rng(89);
    auto params = init_attention_params<double>(4, 4, 4, 2, rng);
    auto x = random_tensor<double>({7, 4}, rng);
    auto base = aggregate_attention(x, params);

    // shift b_k by alpha * (column of q): every slice's logit moves by the
    // same constant per head
    auto shifted = params;
    shifted.key_bias = shifted.key_bias.clone_detached();
    const double alpha = 1.7;
    for (int64_t i = 0; i < 4; ++i)
        shifted.key_bias.values()[i] += alpha * params.query.values()[i * 2 + 0];
    auto moved = aggregate_attention(x, shifted);
    // head 0 explicitly shift-invariant; head 1 shifts by a (different)
    // constant too since b_k enters every logit linearly
    for (int64_t j = 0; j < base.numel(); ++j)
        CHECK(moved.values()[j] == doctest::Approx(base.values()[j]).epsilon(1e-9));
}

TEST_CASE("attention parameter count reconstructs the table delta") {
    Rng rng(97);
    auto params = init_attention_params<float>(32, 32, 32, 1, rng);
    CHECK(params.param_count() == 2 * (32 * 32 + 32) + 32);
    CHECK(params.param_count() == 2144);
    CHECK(params.param_count() == 1000769 - 998625);
}

TEST_CASE("dimension mismatches are rejected") {
    Rng rng(101);
    auto params = init_attention_params<float>(4, 4, 4, 1, rng);
    auto bad = random_tensor<float>({3, 5}, rng);
    CHECK_THROWS_AS(aggregate_attention(bad, params), ConfigError);
    auto not_a_set = random_tensor<float>({3}, rng);
    CHECK_THROWS_AS(aggregate_mean(not_a_set), DataError);
}

}  // TEST_SUITE
