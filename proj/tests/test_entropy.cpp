#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "lic/adam.hpp"
#include "lic/entropy.hpp"
#include "lic/tensor.hpp"

using namespace lic;
using Catch::Approx;

TEST_CASE("quantize: round mode frozen examples", "[quantize]") {
    Tensor y = Tensor::from_data({1, 1, 1, 3}, {0.4, -1.5, 2.5});
    Tensor q = quantize_round(y);
    CHECK(q.data() == std::vector<double>{0.0, -2.0, 3.0});

    Tensor y2 = Tensor::from_data({1, 1, 1, 1}, {0.7});
    Tensor mu = Tensor::from_data({1, 1, 1, 1}, {0.3});
    CHECK(quantize_round(y2, mu).data()[0] == Approx(0.3).margin(1e-12));
}

TEST_CASE("quantize: noise mode bounds, determinism, gradient transparency", "[quantize]") {
    Rng rng(101);
    Tensor y = Tensor::uniform({2, 3, 4, 4}, -5, 5, rng, true);
    Rng na(7), nb(7), nc(8);
    Tensor qa = quantize_noise(y, na);
    Tensor qb = quantize_noise(y, nb);
    Tensor qc = quantize_noise(y, nc);
    bool differs = false;
    for (int64_t i = 0; i < y.numel(); ++i) {
        REQUIRE(std::abs(qa.data()[i] - y.data()[i]) <= 0.5);
        REQUIRE(qa.data()[i] == qb.data()[i]);
        differs |= qa.data()[i] != qc.data()[i];
    }
    CHECK(differs);

    backward(sum(qa));
    REQUIRE(y.has_grad());
    for (double g : y.grad()) CHECK(g == 1.0);
}

TEST_CASE("quantize: dispatcher contracts", "[quantize]") {
    Tensor y = Tensor::from_data({1, 1, 1, 1}, {0.4});
    Tensor mu = Tensor::from_data({1, 1, 1, 1}, {0.1});
    Rng rng(1);
    CHECK_THROWS_AS(quantize(y, QuantMode::noise, nullptr), ContractError);
    CHECK_THROWS_AS(quantize(y, QuantMode::noise, &rng, mu), ContractError);
    CHECK(quantize(y, QuantMode::round).data()[0] == 0.0);
    Tensor bad = Tensor::from_data({1, 1, 1, 1},
                                   {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(quantize_round(bad), NumericError);
}

namespace {

Tensor integer_grid(int64_t channels, int64_t lo, int64_t hi) {
    const int64_t n = hi - lo + 1;
    std::vector<double> vals(static_cast<size_t>(channels * n));
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < n; ++i)
            vals[static_cast<size_t>(c * n + i)] = static_cast<double>(lo + i);
    return Tensor::from_data({1, channels, n, 1}, vals);
}

}  // namespace

TEST_CASE("entropy bottleneck: init sums to ~1 over the integer grid", "[eb]") {
    Rng rng(42);
    EntropyBottleneck eb(2, rng);
    Tensor p = eb.likelihood(integer_grid(2, -1000, 1000));
    const int64_t per_channel = 2001;
    for (int64_t c = 0; c < 2; ++c) {
        double total = 0.0;
        for (int64_t i = 0; i < per_channel; ++i)
            total += p.data()[static_cast<size_t>(c * per_channel + i)];
        // Upper slack covers the mass the likelihood floor injects across the grid.
        CHECK(total >= 0.99);
        CHECK(total <= 1.0 + 2.1e-6);
    }
}

TEST_CASE("entropy bottleneck: likelihood floor and range", "[eb]") {
    Rng rng(43);
    EntropyBottleneck eb(3, rng);
    Tensor v = Tensor::uniform({2, 3, 8, 8}, -50, 50, rng);
    Tensor likelihood = eb.likelihood(v);
    for (double p : likelihood.data()) {
        REQUIRE(p >= kEpsP);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("entropy bottleneck: non-finite input is rejected", "[eb]") {
    Rng rng(44);
    EntropyBottleneck eb(1, rng);
    Tensor bad = Tensor::from_data({1, 1, 1, 2},
                                   {0.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(eb.likelihood(bad), NumericError);
    CHECK_THROWS_AS(eb.cdf(bad), NumericError);
}

TEST_CASE("entropy bottleneck: CDF is monotone at init and after training", "[eb][property]") {
    Rng rng(45);
    EntropyBottleneck eb(2, rng);

    auto check_monotone = [&](EntropyBottleneck& model) {
        Rng pair_rng(46);
        const int64_t n = 1000;
        std::vector<double> lo_vals, hi_vals;
        lo_vals.reserve(2 * n);
        hi_vals.reserve(2 * n);
        for (int64_t i = 0; i < 2 * n; ++i) {
            double a = pair_rng.uniform(-30.0, 30.0);
            double b = a + pair_rng.uniform(0.0, 10.0);
            lo_vals.push_back(a);
            hi_vals.push_back(b);
        }
        Tensor lo = Tensor::from_data({1, 2, n, 1}, lo_vals);
        Tensor hi = Tensor::from_data({1, 2, n, 1}, hi_vals);
        NoGradGuard ng;
        Tensor cl = model.cdf(lo), ch = model.cdf(hi);
        for (int64_t i = 0; i < cl.numel(); ++i)
            REQUIRE(cl.data()[i] <= ch.data()[i] + 1e-15);
    };
    check_monotone(eb);

    // Self-training: fit the bottleneck to fixed synthetic latents and verify
    // the modelled rate drops, then re-check monotonicity.
    Rng data_rng(47);
    Tensor latents = Tensor::uniform({4, 2, 8, 8}, -6, 6, data_rng);
    auto mean_bits = [&](bool with_grad) {
        Tensor p = eb.likelihood(latents);
        Tensor bits = mul_scalar(mean(log_t(p)), -kInvLn2);
        if (with_grad) return bits;
        NoGradGuard ng;
        return bits;
    };
    double initial;
    {
        NoGradGuard ng;
        initial = mean_bits(false).item();
    }
    Adam opt(eb.params(), 1e-2);
    for (int step = 0; step < 1000; ++step) {
        backward(mean_bits(true));
        opt.step();
    }
    double final_bits;
    {
        NoGradGuard ng;
        final_bits = mean_bits(false).item();
    }
    CHECK(final_bits < initial);
    check_monotone(eb);
}

TEST_CASE("entropy bottleneck: gradient check", "[eb][property]") {
    Rng rng(48);
    EntropyBottleneck eb(2, rng);
    Tensor v = Tensor::uniform({1, 2, 3, 1}, -2, 2, rng, true);
    std::vector<Tensor> inputs = {v};
    for (auto& t : eb.params()) inputs.push_back(t);
    auto f = [&](const std::vector<Tensor>&) {
        return mean(log_t(eb.likelihood(v)));
    };
    CHECK(gradient_check(f, inputs, 1e-5) < 1e-4);
}

TEST_CASE("entropy bottleneck: clone independence and channel contract", "[eb]") {
    Rng rng(49);
    EntropyBottleneck eb(2, rng);
    EntropyBottleneck copy = eb.clone();
    auto pa = eb.params(), pb = copy.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data() == pb[i].data());
    pb[0].data()[0] += 0.5;
    CHECK(pa[0].data()[0] != pb[0].data()[0]);

    Tensor wrong = Tensor::zeros({1, 3, 2, 2});
    CHECK_THROWS_AS(eb.likelihood(wrong), DimensionError);
}

TEST_CASE("gaussian conditional: frozen unit-scale oracle", "[gaussian]") {
    Tensor v = Tensor::from_data({1, 1, 1, 1}, {0.0});
    Tensor mu = Tensor::zeros({1, 1, 1, 1});
    Tensor sigma = Tensor::full({1, 1, 1, 1}, 1.0);
    // Phi(0.5) - Phi(-0.5) for the standard normal.
    CHECK(gaussian_likelihood(v, mu, sigma).data()[0] ==
          Approx(0.3829249225480262).margin(1e-10));
}

TEST_CASE("gaussian conditional: symmetry and scale monotonicity", "[gaussian][property]") {
    // mu = 0 so that +-delta are exact negations (v - mu carries no rounding).
    Tensor mu = Tensor::zeros({1, 1, 1, 1});
    for (double delta : {0.1, 0.7, 2.5}) {
        Tensor hi = Tensor::from_data({1, 1, 1, 1}, {delta});
        Tensor lo = Tensor::from_data({1, 1, 1, 1}, {-delta});
        Tensor sigma = Tensor::full({1, 1, 1, 1}, 0.9);
        CHECK(gaussian_likelihood(hi, mu, sigma).data()[0] ==
              gaussian_likelihood(lo, mu, sigma).data()[0]);
    }
    double prev = 1.0;
    for (double s : {0.5, 1.0, 2.0, 5.0}) {
        Tensor sigma = Tensor::full({1, 1, 1, 1}, s);
        Tensor v = Tensor::full({1, 1, 1, 1}, 0.3);
        Tensor mu3 = Tensor::full({1, 1, 1, 1}, 0.3);
        double p = gaussian_likelihood(v, mu3, sigma).data()[0];
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("gaussian conditional: scale floor and likelihood floor", "[gaussian]") {
    Tensor v = Tensor::from_data({1, 1, 1, 1}, {0.0});
    Tensor mu = Tensor::zeros({1, 1, 1, 1});
    Tensor tiny = Tensor::full({1, 1, 1, 1}, 1e-6);
    Tensor floor_sigma = Tensor::full({1, 1, 1, 1}, kSigmaMin);
    CHECK(gaussian_likelihood(v, mu, tiny).data()[0] ==
          Approx(gaussian_likelihood(v, mu, floor_sigma).data()[0]).margin(1e-15));

    Tensor far = Tensor::full({1, 1, 1, 1}, 1e4);
    CHECK(gaussian_likelihood(far, mu, floor_sigma).data()[0] == kEpsP);

    Tensor nan = Tensor::from_data({1, 1, 1, 1},
                                   {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(gaussian_likelihood(nan, mu, floor_sigma), NumericError);
}

TEST_CASE("gaussian conditional: gradient check through the scale split", "[gaussian][property]") {
    Rng rng(50);
    // hs output for M=2: channels [mu_0, mu_1, rawsigma_0, rawsigma_1].
    Tensor hs_out = Tensor::uniform({1, 4, 2, 2}, 0.7, 1.5, rng, true);
    Tensor v = Tensor::uniform({1, 2, 2, 2}, -0.4, -0.1, rng, true);
    auto f = [](const std::vector<Tensor>& in) {
        auto [mu, sigma] = split_scale_params(in[0], 2);
        return mean(log_t(gaussian_likelihood(in[1], mu, sigma)));
    };
    CHECK(gradient_check(f, {hs_out, v}, 1e-5) < 1e-4);
}

TEST_CASE("split_scale_params: slices and clamps", "[gaussian]") {
    Tensor hs_out = Tensor::from_data({1, 4, 1, 1}, {0.5, -0.25, 2.0, -40.0});
    auto [mu, sigma] = split_scale_params(hs_out, 2);
    CHECK(mu.data() == std::vector<double>{0.5, -0.25});
    CHECK(sigma.data()[0] == Approx(std::log1p(std::exp(2.0))).margin(1e-12));
    CHECK(sigma.data()[1] == kSigmaMin);  // softplus(-40) clamps up
    CHECK_THROWS_AS(split_scale_params(hs_out, 3), DimensionError);
}

TEST_CASE("bits_estimate: frozen examples and contracts", "[bits]") {
    Tensor half = Tensor::full({1, 1, 2, 2}, 0.5);
    CHECK(bits_estimate(half, 1) == Approx(4.0).margin(1e-12));
    Tensor ones = Tensor::full({1, 1, 2, 2}, 1.0);
    CHECK(bits_estimate(ones, 1) == 0.0);
    Tensor quarter = Tensor::full({1, 4, 2, 2}, 0.25);
    CHECK(bits_estimate(quarter, 4) == Approx(8.0).margin(1e-12));

    Tensor zero = Tensor::from_data({1, 1, 1, 2}, {0.5, 0.0});
    CHECK_THROWS_AS(bits_estimate(zero, 1), ContractError);
    CHECK_THROWS_AS(bits_estimate(half, 0), ContractError);
}
