#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lic/entropy.hpp"
#include "lic/layers.hpp"
#include "lic/losses.hpp"
#include "lic/tensor.hpp"

using namespace lic;
using Catch::Approx;

TEST_CASE("rd_loss: frozen examples", "[rd]") {
    SECTION("perfect reconstruction, four latents at p=1/2") {
        Tensor x = Tensor::full({1, 1, 2, 2}, 0.25);
        Tensor p = Tensor::full({1, 1, 2, 2}, 0.5);
        LossBreakdown lb = rd_loss(x, x, p, 1.0);
        CHECK(lb.total_value() == Approx(4.0).margin(1e-12));
        CHECK(lb.rate_y_bits == Approx(4.0).margin(1e-12));
        CHECK(lb.distortion_mse == 0.0);
        CHECK(lb.rate_z_bits == 0.0);
    }
    SECTION("lambda=0 is pure rate") {
        Tensor x = Tensor::full({1, 1, 2, 2}, 0.0);
        Tensor x_hat = Tensor::full({1, 1, 2, 2}, 0.9);
        Tensor p = Tensor::full({1, 1, 2, 2}, 0.5);
        CHECK(rd_loss(x, x_hat, p, 0.0).total_value() == Approx(4.0).margin(1e-12));
    }
    SECTION("unit error on one pixel, free latents, lambda=0.01") {
        Tensor x = Tensor::full({1, 1, 1, 1}, 0.0);
        Tensor x_hat = Tensor::full({1, 1, 1, 1}, 1.0);
        Tensor p = Tensor::full({1, 1, 1, 1}, 1.0);
        LossBreakdown lb = rd_loss(x, x_hat, p, 0.01);
        CHECK(lb.total_value() == Approx(0.01).margin(1e-15));
        CHECK(lb.rate_y_bits == 0.0);
        CHECK(lb.distortion_mse == 1.0);
    }
    SECTION("distortion sums per sample and averages over the batch") {
        Tensor x = Tensor::from_data({2, 1, 2, 2},
                                     {0, 0, 0, 0, 0, 0, 0, 0});
        Tensor x_hat = Tensor::from_data({2, 1, 2, 2},
                                         {1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5});
        Tensor p = Tensor::full({2, 1, 1, 1}, 1.0);
        LossBreakdown lb = rd_loss(x, x_hat, p, 0.1);
        CHECK(lb.distortion_mse == Approx(2.5).margin(1e-12));
        CHECK(lb.total_value() == Approx(0.25).margin(1e-12));
    }
}

TEST_CASE("rd_loss: breakdown recombines to the total", "[rd][property]") {
    Rng rng(60);
    Tensor x = Tensor::uniform({2, 3, 4, 4}, 0, 1, rng);
    Tensor x_hat = Tensor::uniform({2, 3, 4, 4}, 0, 1, rng);
    Tensor py = Tensor::uniform({2, 2, 2, 2}, 0.01, 1.0, rng);
    Tensor pz = Tensor::uniform({2, 1, 1, 1}, 0.01, 1.0, rng);
    const double lambda = 0.013;
    LossBreakdown lb = rd_loss(x, x_hat, py, lambda);
    CHECK(lb.total_value() ==
          Approx(lb.rate_y_bits + lambda * lb.distortion_mse).margin(1e-12));
    LossBreakdown lbh = rd_loss_hyper(x, x_hat, py, pz, lambda);
    CHECK(lbh.total_value() ==
          Approx(lbh.rate_y_bits + lbh.rate_z_bits + lambda * lbh.distortion_mse)
              .margin(1e-12));
}

TEST_CASE("rd_loss: monotone in lambda for fixed tensors", "[rd][property]") {
    Rng rng(61);
    Tensor x = Tensor::uniform({1, 3, 4, 4}, 0, 1, rng);
    Tensor x_hat = Tensor::uniform({1, 3, 4, 4}, 0, 1, rng);
    Tensor p = Tensor::uniform({1, 2, 2, 2}, 0.1, 0.9, rng);
    double prev = -1.0;
    for (double lambda : {0.0, 0.001, 0.01, 0.1}) {
        double total = rd_loss(x, x_hat, p, lambda).total_value();
        CHECK(total > prev);
        prev = total;
    }
}

TEST_CASE("rd_loss_hyper: certain hyper-latents reduce to the factorized loss", "[rd]") {
    Rng rng(62);
    Tensor x = Tensor::uniform({2, 3, 4, 4}, 0, 1, rng);
    Tensor x_hat = Tensor::uniform({2, 3, 4, 4}, 0, 1, rng);
    Tensor py = Tensor::uniform({2, 2, 2, 2}, 0.05, 1.0, rng);
    Tensor pz = Tensor::full({2, 1, 1, 1}, 1.0);
    CHECK(rd_loss_hyper(x, x_hat, py, pz, 0.02).total_value() ==
          Approx(rd_loss(x, x_hat, py, 0.02).total_value()).margin(1e-12));

    SECTION("two latents plus two hyper-latents at p=1/2, perfect recon") {
        Tensor xi = Tensor::full({1, 1, 1, 2}, 0.5);
        Tensor ph = Tensor::full({1, 1, 1, 2}, 0.5);
        CHECK(rd_loss_hyper(xi, xi, ph, ph, 1.0).total_value() ==
              Approx(4.0).margin(1e-12));
    }
}

TEST_CASE("losses: likelihood range and shape contracts", "[rd]") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 0.5);
    Tensor bad_hi = Tensor::full({1, 1, 2, 2}, 1.5);
    Tensor bad_lo = Tensor::full({1, 1, 2, 2}, 0.0);
    CHECK_THROWS_AS(rd_loss(x, x, bad_hi, 0.01), ContractError);
    CHECK_THROWS_AS(rd_loss(x, x, bad_lo, 0.01), ContractError);
    Tensor wrong = Tensor::full({1, 1, 2, 3}, 0.5);
    CHECK_THROWS_AS(rd_loss(x, wrong, bad_hi, 0.01), DimensionError);
}

TEST_CASE("kd_loss: frozen examples", "[kd]") {
    SECTION("identical latents give exactly zero") {
        Tensor y = Tensor::from_data({1, 1, 1, 2}, {1.25, -3.5});
        CHECK(kd_loss(y, y).item() == 0.0);
    }
    SECTION("[3,4] vs [0,0] with batch size 1 gives 25") {
        Tensor yt = Tensor::from_data({1, 1, 1, 2}, {3.0, 4.0});
        Tensor ys = Tensor::zeros({1, 1, 1, 2});
        CHECK(kd_loss(yt, ys).item() == Approx(25.0).margin(1e-12));
    }
    SECTION("batch duplication leaves the mean unchanged") {
        Tensor yt1 = Tensor::from_data({1, 1, 1, 2}, {3.0, 4.0});
        Tensor ys1 = Tensor::from_data({1, 1, 1, 2}, {1.0, 0.5});
        Tensor yt2 = Tensor::from_data({2, 1, 1, 2}, {3.0, 4.0, 3.0, 4.0});
        Tensor ys2 = Tensor::from_data({2, 1, 1, 2}, {1.0, 0.5, 1.0, 0.5});
        CHECK(kd_loss(yt2, ys2).item() == Approx(kd_loss(yt1, ys1).item()).margin(1e-12));
    }
    SECTION("hyper variant adds the two terms: 25 + 9 = 34") {
        Tensor yt = Tensor::from_data({1, 1, 1, 2}, {3.0, 4.0});
        Tensor ys = Tensor::zeros({1, 1, 1, 2});
        Tensor zt = Tensor::from_data({1, 1, 1, 1}, {3.0});
        Tensor zs = Tensor::zeros({1, 1, 1, 1});
        CHECK(kd_loss_hyper(yt, zt, ys, zs).item() == Approx(34.0).margin(1e-12));
    }
    SECTION("swapping the pair does not change the value") {
        Rng rng(63);
        Tensor a = Tensor::uniform({2, 3, 2, 2}, -2, 2, rng);
        Tensor b = Tensor::uniform({2, 3, 2, 2}, -2, 2, rng);
        CHECK(kd_loss(a, b).item() == Approx(kd_loss(b, a).item()).margin(1e-12));
    }
    SECTION("shape mismatch is a dimension error") {
        Tensor a = Tensor::zeros({1, 2, 2, 2});
        Tensor b = Tensor::zeros({1, 3, 2, 2});
        CHECK_THROWS_AS(kd_loss(a, b), DimensionError);
    }
}

TEST_CASE("kd_loss: nonnegative, zero only at equality", "[kd][property]") {
    Rng rng(64);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = Tensor::uniform({2, 2, 3, 3}, -3, 3, rng);
        Tensor b = Tensor::uniform({2, 2, 3, 3}, -3, 3, rng);
        double v = kd_loss(a, b).item();
        REQUIRE(v > 0.0);
    }
}

TEST_CASE("kd_loss: no gradient ever reaches the teacher", "[kd]") {
    Rng rng(65);
    Tensor x = Tensor::uniform({1, 2, 4, 4}, -1, 1, rng);
    Tensor w_teacher = Tensor::uniform({3, 2, 3, 3}, -0.4, 0.4, rng, true);
    Tensor w_student = Tensor::uniform({3, 2, 3, 3}, -0.4, 0.4, rng, true);
    Tensor y_t = conv2d(x, w_teacher, Tensor(), 1, 1);
    Tensor y_s = conv2d(x, w_student, Tensor(), 1, 1);
    backward(kd_loss(y_t, y_s));
    CHECK_FALSE(w_teacher.has_grad());
    REQUIRE(w_student.has_grad());
    bool any_nonzero = false;
    for (double g : w_student.grad()) any_nonzero |= g != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("rd gradients flow through a toy hyper model end to end", "[rd][property]") {
    // Miniature two-stage codec exercising the full training objective:
    // conv+gdn encoder, hyper pair, conditional likelihoods, igdn+deconv
    // decoder.
    Rng rng(66);
    NetworkSpec ga{NetRole::g_a,
                   {LayerSpec::conv(3, 4, 3, 2, 1), LayerSpec::gdn(4)},
                   4};
    NetworkSpec gs{NetRole::g_s,
                   {LayerSpec::igdn(4), LayerSpec::deconv(4, 3, 3, 2, 1, 1)},
                   4};
    NetworkSpec ha{NetRole::h_a, {LayerSpec::conv(4, 2, 3, 2, 1)}, 2};
    NetworkSpec hs{NetRole::h_s, {LayerSpec::deconv(2, 8, 3, 2, 1, 1)}, 2};
    Network ga_net(ga, &rng), gs_net(gs, &rng), ha_net(ha, &rng), hs_net(hs, &rng);
    for (Network* net : {&ga_net, &gs_net})
        for (const auto& layer : net->layers()) {
            if (!layer.gamma.defined()) continue;
            Tensor g = layer.gamma;
            for (double& v : g.data()) v += 0.02;
        }
    EntropyBottleneck eb(2, rng);

    Tensor x = Tensor::uniform({1, 3, 8, 8}, 0, 1, rng, true);
    Tensor uy = Tensor::uniform({1, 4, 4, 4}, -0.5, 0.5, rng);
    Tensor uz = Tensor::uniform({1, 2, 2, 2}, -0.5, 0.5, rng);

    std::vector<Tensor> inputs = {x};
    for (Network* net : {&ga_net, &gs_net, &ha_net, &hs_net})
        for (auto& t : net->params()) inputs.push_back(t);
    for (auto& t : eb.params()) inputs.push_back(t);

    auto f = [&](const std::vector<Tensor>&) {
        Tensor y = ga_net.forward(x);
        Tensor z = ha_net.forward(y);
        Tensor z_hat = add(z, uz);
        Tensor p_z = eb.likelihood(z_hat);
        auto [mu, sigma] = split_scale_params(hs_net.forward(z_hat), 4);
        Tensor y_hat = add(y, uy);
        Tensor p_y = gaussian_likelihood(y_hat, mu, sigma);
        Tensor x_hat = gs_net.forward(y_hat);
        // lambda = 1 keeps the rate and distortion terms comparable; a tiny
        // lambda would push the decoder's true gradients below the finite-
        // difference noise floor of the much larger rate term.
        return rd_loss_hyper(x, x_hat, p_y, p_z, 1.0).total;
    };
    CHECK(gradient_check(f, inputs, 1e-5) < 1e-4);
}

TEST_CASE("kd gradients flow to the student encoder only (end to end)", "[kd][property]") {
    Rng rng(67);
    NetworkSpec ga{NetRole::g_a,
                   {LayerSpec::conv(3, 4, 3, 2, 1), LayerSpec::gdn(4),
                    LayerSpec::conv(4, 4, 3, 2, 1)},
                   4};
    Network teacher(ga, &rng);
    Network student(reduce_width(ga, {2, {NetRole::g_a}}), &rng);
    for (Network* net : {&teacher, &student})
        for (const auto& layer : net->layers()) {
            if (!layer.gamma.defined()) continue;
            Tensor g = layer.gamma;
            for (double& v : g.data()) v += 0.02;
        }
    Tensor x = Tensor::uniform({2, 3, 8, 8}, 0, 1, rng);

    std::vector<Tensor> inputs = student.params();
    auto f = [&](const std::vector<Tensor>&) {
        return kd_loss(teacher.forward(x), student.forward(x));
    };
    CHECK(gradient_check(f, inputs, 1e-5) < 1e-4);

    backward(kd_loss(teacher.forward(x), student.forward(x)));
    for (auto& t : teacher.params()) CHECK_FALSE(t.has_grad());
}
