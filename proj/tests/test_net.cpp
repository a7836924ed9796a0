#include <gtest/gtest.h>

#include <cmath>

#include "tagi/net.hpp"
#include "tagi/oracle.hpp"

using namespace tagi;

namespace {

NetworkArch arch_1h(std::size_t in, std::size_t hidden, std::size_t out,
                    ActivationKind act = ActivationKind::relu) {
    NetworkArch a;
    a.input_dim = in;
    a.hidden_widths = {hidden};
    a.output_dim = out;
    a.activation = act;
    return a;
}

}  // namespace

TEST(InitNetwork, XavierTimesGain) {
    auto a = arch_1h(50, 50, 50);
    const auto params = init_network(a, InitSpec{0.25, 0.01}, 1);
    for (double v : params[0].w_var) EXPECT_DOUBLE_EQ(v, 0.25 * 2.0 / 100.0);
    for (double v : params[0].b_var) EXPECT_DOUBLE_EQ(v, 0.01);
    for (double v : params[1].b_var) EXPECT_DOUBLE_EQ(v, 0.01);
}

TEST(InitNetwork, SeedDeterminism) {
    auto a = arch_1h(3, 8, 2);
    const auto p1 = init_network(a, InitSpec{}, 42);
    const auto p2 = init_network(a, InitSpec{}, 42);
    const auto p3 = init_network(a, InitSpec{}, 43);
    ASSERT_EQ(p1.size(), p2.size());
    for (std::size_t j = 0; j < p1.size(); ++j) {
        EXPECT_EQ(p1[j].w_mean, p2[j].w_mean);
        EXPECT_EQ(p1[j].b_mean, p2[j].b_mean);
    }
    EXPECT_NE(p1[0].w_mean, p3[0].w_mean);
}

TEST(InitNetwork, RejectsBadArch) {
    NetworkArch a;
    a.input_dim = 0;
    a.output_dim = 1;
    EXPECT_THROW(init_network(a, InitSpec{}, 1), std::invalid_argument);
}

TEST(ActivationMoments, LinearIsIdentity) {
    std::vector<double> mu = {-1.0, 0.0, 2.5}, var = {0.1, 0.2, 0.3};
    std::vector<double> mu_a, var_a, jac;
    activation_moments(ActivationKind::linear, mu, var, mu_a, var_a, jac);
    EXPECT_EQ(mu_a, mu);
    EXPECT_EQ(var_a, var);
    EXPECT_EQ(jac, std::vector<double>(3, 1.0));
}

TEST(ActivationMoments, ReluDeadRegion) {
    std::vector<double> mu = {-1.0}, var = {5.0};
    std::vector<double> mu_a, var_a, jac;
    activation_moments(ActivationKind::relu, mu, var, mu_a, var_a, jac);
    EXPECT_DOUBLE_EQ(mu_a[0], 0.0);
    EXPECT_DOUBLE_EQ(var_a[0], 0.0);
    EXPECT_DOUBLE_EQ(jac[0], 0.0);
}

TEST(ActivationMoments, ReluDerivativeAtZeroIsZero) {
    EXPECT_DOUBLE_EQ(activation_deriv(ActivationKind::relu, 0.0), 0.0);
}

TEST(ActivationMoments, SoftplusAtZero) {
    std::vector<double> mu = {0.0}, var = {0.0625};
    std::vector<double> mu_a, var_a, jac;
    activation_moments(ActivationKind::softplus, mu, var, mu_a, var_a, jac);
    EXPECT_NEAR(mu_a[0], std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(jac[0], 0.5);
    EXPECT_DOUBLE_EQ(var_a[0], 0.015625);
}

TEST(ActivationMoments, SoftplusStableAtLargeInputs) {
    EXPECT_DOUBLE_EQ(activation_value(ActivationKind::softplus, 500.0), 500.0);
    EXPECT_NEAR(activation_value(ActivationKind::softplus, -500.0), 0.0, 1e-200);
    EXPECT_DOUBLE_EQ(activation_deriv(ActivationKind::softplus, 500.0), 1.0);
    EXPECT_NEAR(activation_deriv(ActivationKind::softplus, -500.0), 0.0, 1e-200);
}

TEST(Forward, SingleLinearLayerAnalytic) {
    LayerParams p(1, 1);
    p.w_mean = {2.0};
    p.w_var = {0.5};
    p.b_mean = {1.0};
    p.b_var = {0.1};
    const auto r = forward(std::vector<LayerParams>{p}, ActivationKind::linear,
                           GaussianVector::deterministic({3.0}));
    EXPECT_DOUBLE_EQ(r.output.mean[0], 7.0);
    EXPECT_DOUBLE_EQ(r.output.var[0], 0.5 * 9.0 + 0.1);
}

TEST(Forward, DeterministicCollapseMatchesPointNetwork) {
    auto a = arch_1h(3, 5, 2, ActivationKind::tanh);
    auto params = init_network(a, InitSpec{}, 7);
    for (auto& p : params) {
        std::fill(p.w_var.begin(), p.w_var.end(), 0.0);
        std::fill(p.b_var.begin(), p.b_var.end(), 0.0);
    }
    const std::vector<double> x = {0.3, -1.2, 0.8};
    const auto r = forward(params, a.activation, GaussianVector::deterministic(x));

    // Plain point-estimate evaluation with the mean parameters.
    std::vector<double> h(5);
    for (std::size_t i = 0; i < 5; ++i) {
        double z = params[0].b_mean[i];
        for (std::size_t k = 0; k < 3; ++k) z += params[0].w_mean[params[0].widx(i, k)] * x[k];
        h[i] = std::tanh(z);
    }
    for (std::size_t i = 0; i < 2; ++i) {
        double z = params[1].b_mean[i];
        for (std::size_t k = 0; k < 5; ++k) z += params[1].w_mean[params[1].widx(i, k)] * h[k];
        EXPECT_NEAR(r.output.mean[i], z, 1e-14);
        EXPECT_DOUBLE_EQ(r.output.var[i], 0.0);
    }
}

TEST(Forward, SingleAffineLayerMatchesMonteCarlo) {
    Rng rng(17);
    NetworkArch a;
    a.input_dim = 3;
    a.output_dim = 2;
    a.activation = ActivationKind::linear;
    auto params = init_network(a, InitSpec{1.0, 0.05}, 99);
    GaussianVector input({0.5, -1.0, 2.0}, {0.2, 0.0, 0.7});
    const auto analytic = forward(params, a.activation, input);
    const auto mc = mc_forward_linearized(params, a.activation, input, 1000000, 5, 2);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_TRUE(mc.mean[i].within(analytic.output.mean[i], 4.0));
        EXPECT_TRUE(mc.var[i].within(analytic.output.var[i], 4.0));
    }
}

TEST(Forward, VarianceMonotoneInWeightVariance) {
    auto a = arch_1h(4, 6, 3);
    auto params = init_network(a, InitSpec{}, 3);
    GaussianVector input({0.4, 1.0, -0.2, 0.9}, {0.1, 0.3, 0.0, 0.2});
    const auto base = forward(params, a.activation, input);
    auto bumped = params;
    bumped[0].w_var[bumped[0].widx(2, 1)] += 0.5;
    const auto after = forward(bumped, a.activation, input);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_GE(after.output.var[i], base.output.var[i]);
    for (std::size_t j = 0; j < after.caches.size(); ++j)
        for (std::size_t i = 0; i < after.caches[j].var_z.size(); ++i)
            EXPECT_GE(after.caches[j].var_z[i], base.caches[j].var_z[i]);
}

TEST(Forward, VarianceStaysNonNegative) {
    NetworkArch a;
    a.input_dim = 5;
    a.hidden_widths = {8, 8};
    a.output_dim = 3;
    a.activation = ActivationKind::relu;
    Rng rng(123);
    for (int rep = 0; rep < 20; ++rep) {
        auto params = init_network(a, InitSpec{}, derive_seed(9, static_cast<std::uint64_t>(rep)));
        std::vector<double> mu(5), var(5);
        for (int i = 0; i < 5; ++i) {
            mu[static_cast<std::size_t>(i)] = rng.uniform(-2, 2);
            var[static_cast<std::size_t>(i)] = rng.uniform(0, 1);
        }
        const auto r = forward(params, a.activation, GaussianVector(mu, var));
        for (const auto& c : r.caches) {
            for (double v : c.var_z) EXPECT_GE(v, 0.0);
            for (double v : c.var_a) EXPECT_GE(v, 0.0);
        }
    }
}

TEST(Forward, DimensionMismatchThrows) {
    auto a = arch_1h(3, 4, 1);
    auto params = init_network(a, InitSpec{}, 1);
    EXPECT_THROW(forward(params, a.activation, GaussianVector::deterministic({1.0, 2.0})),
                 std::invalid_argument);
}

TEST(Forward, CacheJacobianMatchesDerivative) {
    auto a = arch_1h(2, 4, 1, ActivationKind::softplus);
    auto params = init_network(a, InitSpec{}, 5);
    const auto r = forward(params, a.activation, GaussianVector::deterministic({0.5, -0.5}));
    const auto& hidden = r.caches[1];
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_DOUBLE_EQ(hidden.jac[i], activation_deriv(a.activation, hidden.mu_z[i]));
}

TEST(ActivationMoments, DerivativesMatchFiniteDifferences) {
    Rng rng(41);
    for (auto kind : {ActivationKind::relu, ActivationKind::softplus, ActivationKind::tanh,
                      ActivationKind::sigmoid, ActivationKind::linear}) {
        for (int i = 0; i < 200; ++i) {
            const double z = rng.uniform(-6, 6);
            if (kind == ActivationKind::relu && std::abs(z) < 1e-3) continue;  // kink
            const double h = 1e-6;
            const double fd = (activation_value(kind, z + h) - activation_value(kind, z - h)) /
                              (2.0 * h);
            EXPECT_NEAR(activation_deriv(kind, z), fd, 1e-7)
                << to_string(kind) << " at z=" << z;
        }
    }
}

// Diagnostic for the central-limit behavior: as the number of summed
// product terms grows, the true distribution of z gets less skewed even
// though each product term is far from Gaussian.
TEST(Forward, CltSkewnessDiagnostic) {
    const auto skewness_at_width = [](std::size_t width, std::uint64_t seed) {
        Rng rng(seed);
        const std::size_t n = 200000;
        double s1 = 0, s2 = 0, s3 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = 0.0;
            for (std::size_t k = 0; k < width; ++k)
                z += rng.gaussian(0.5, 0.5) * rng.gaussian(0.5, 0.5);
            s1 += z;
            s2 += z * z;
            s3 += z * z * z;
        }
        const double nn = static_cast<double>(n);
        const double m = s1 / nn;
        const double var = s2 / nn - m * m;
        const double m3 = s3 / nn - 3.0 * m * var - m * m * m;
        return m3 / std::pow(var, 1.5);
    };
    const double narrow = skewness_at_width(1, 77);
    const double wide = skewness_at_width(25, 78);
    EXPECT_LT(std::abs(wide), 0.6 * std::abs(narrow));
}
