#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tagi/gaussian.hpp"
#include "tagi/moments.hpp"
#include "tagi/net.hpp"
#include "tagi/train.hpp"

namespace tagi {

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;

    bool within(double target, double n_se) const {
        return std::abs(value - target) <= n_se * std_error;
    }
};

namespace detail {

/// Delete-one-block jackknife over per-block sums. `estimate` maps pooled
/// sums (and a sample count) to the statistic.
template <std::size_t Dim, typename Fn>
McEstimate jackknife(const std::vector<std::array<double, Dim>>& block_sums,
                     std::size_t block_len, const Fn& estimate) {
    const std::size_t b = block_sums.size();
    std::array<double, Dim> total{};
    for (const auto& s : block_sums)
        for (std::size_t d = 0; d < Dim; ++d) total[d] += s[d];
    const std::size_t n = b * block_len;

    McEstimate e;
    e.samples = n;
    e.value = estimate(total, n);
    double mean_loo = 0.0;
    std::vector<double> loo(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::array<double, Dim> rest{};
        for (std::size_t d = 0; d < Dim; ++d) rest[d] = total[d] - block_sums[i][d];
        loo[i] = estimate(rest, n - block_len);
        mean_loo += loo[i];
    }
    mean_loo /= static_cast<double>(b);
    double ss = 0.0;
    for (double v : loo) ss += (v - mean_loo) * (v - mean_loo);
    e.std_error = std::sqrt(ss * static_cast<double>(b - 1) / static_cast<double>(b));
    return e;
}

inline Eigen::Matrix4d quad_cov(const GaussianQuad& q) {
    Eigen::Matrix4d c;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) c(i, j) = q.cov[i][j];
    return c;
}

inline Eigen::Matrix4d chol_or_throw(const GaussianQuad& q) {
    Eigen::Matrix4d c = quad_cov(q);
    for (double jitter : {0.0, 1e-12, 1e-10}) {
        Eigen::LLT<Eigen::Matrix4d> llt(c + jitter * Eigen::Matrix4d::Identity());
        if (llt.info() == Eigen::Success) return llt.matrixL();
    }
    throw std::invalid_argument("mc_product_moments: covariance not PSD");
}

}  // namespace detail

/// Monte-Carlo estimates for the four product-moment targets of a quad:
/// E[X1X2], cov(X3, X1X2), cov(X1X2, X3X4), var(X1X2). Deterministic under
/// seed; sampled in independent blocks with jackknife standard errors, so
/// parallel execution does not change results.
struct ProductMomentsMc {
    McEstimate mean12;
    McEstimate cov3_12;
    McEstimate cov12_34;
    McEstimate var12;
};

inline ProductMomentsMc mc_product_moments(const GaussianQuad& q, std::size_t n_samples,
                                           std::uint64_t seed, unsigned jobs = 1) {
    if (n_samples < 10000)
        throw std::invalid_argument("mc_product_moments: need at least 1e4 samples");
    const Eigen::Matrix4d l = detail::chol_or_throw(q);
    constexpr std::size_t kBlocks = 100;
    const std::size_t block_len = n_samples / kBlocks;

    // Per-block sums: p12, p12^2, x3, x3*p12, p34, p12*p34
    std::vector<std::array<double, 6>> sums(kBlocks);
    detail::parallel_for(kBlocks, jobs, [&](std::size_t blk) {
        Rng rng(derive_seed(seed, blk));
        std::array<double, 6> s{};
        for (std::size_t i = 0; i < block_len; ++i) {
            Eigen::Vector4d u(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
            Eigen::Vector4d x = l * u;
            for (int d = 0; d < 4; ++d) x(d) += q.mu[static_cast<std::size_t>(d)];
            const double p12 = x(0) * x(1);
            const double p34 = x(2) * x(3);
            s[0] += p12;
            s[1] += p12 * p12;
            s[2] += x(2);
            s[3] += x(2) * p12;
            s[4] += p34;
            s[5] += p12 * p34;
        }
        sums[blk] = s;
    });

    const auto mean_of = [](const std::array<double, 6>& s, std::size_t n) {
        return s[0] / static_cast<double>(n);
    };
    const auto var_of = [](const std::array<double, 6>& s, std::size_t n) {
        const double m = s[0] / static_cast<double>(n);
        return s[1] / static_cast<double>(n) - m * m;
    };
    const auto cov3_of = [](const std::array<double, 6>& s, std::size_t n) {
        const double nn = static_cast<double>(n);
        return s[3] / nn - (s[2] / nn) * (s[0] / nn);
    };
    const auto cov34_of = [](const std::array<double, 6>& s, std::size_t n) {
        const double nn = static_cast<double>(n);
        return s[5] / nn - (s[0] / nn) * (s[4] / nn);
    };

    ProductMomentsMc r;
    r.mean12 = detail::jackknife<6>(sums, block_len, mean_of);
    r.var12 = detail::jackknife<6>(sums, block_len, var_of);
    r.cov3_12 = detail::jackknife<6>(sums, block_len, cov3_of);
    r.cov12_34 = detail::jackknife<6>(sums, block_len, cov34_of);
    return r;
}

/// Closed forms evaluated on the same quad, in the same order as the MC
/// estimates. Handy for band checks.
struct ProductMomentsClosed {
    double mean12, cov3_12, cov12_34, var12;
};

inline ProductMomentsClosed closed_product_moments(const GaussianQuad& q) {
    GaussianPair pair(q.mu[0], q.mu[1], q.cov[0][0], q.cov[1][1], q.cov[0][1]);
    return ProductMomentsClosed{product_mean(pair), product_cross_cov(q),
                                product_product_cov(q), product_var(pair)};
}

/// Random test quad: means uniform in [-2,2], variances in [0.01,4], PSD
/// covariance built from a random factor so correlations span the range.
inline GaussianQuad random_quad(Rng& rng) {
    Eigen::Matrix4d a;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) a(i, j) = rng.gaussian();
    Eigen::Matrix4d c = a * a.transpose();
    Eigen::Vector4d d = c.diagonal().cwiseSqrt();
    GaussianQuad q;
    for (int i = 0; i < 4; ++i) q.mu[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
    std::array<double, 4> sd{};
    for (auto& s : sd) s = rng.uniform(0.1, 2.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            q.cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                c(i, j) / (d(i) * d(j)) * sd[static_cast<std::size_t>(i)] *
                sd[static_cast<std::size_t>(j)];
    q.validate();
    return q;
}

// ---------------------------------------------------------------------------
// Exact conditioning on small joint systems
// ---------------------------------------------------------------------------

struct ConditionalGaussian {
    Eigen::VectorXd mean;  // unobserved components, original order preserved
    Eigen::MatrixXd cov;
    std::vector<std::size_t> kept;  // indices of the unobserved components
};

/// Standard Gaussian conditioning by direct solve; tractable only at tiny
/// scale (dimension capped at 50).
inline ConditionalGaussian exact_conditioning_oracle(const Eigen::VectorXd& mean,
                                                     const Eigen::MatrixXd& cov,
                                                     const std::vector<std::size_t>& observed_idx,
                                                     const std::vector<double>& observed_values) {
    const auto dim = static_cast<std::size_t>(mean.size());
    if (dim > 50) throw std::invalid_argument("exact_conditioning_oracle: system too large");
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw std::invalid_argument("exact_conditioning_oracle: shape mismatch");
    if (observed_idx.size() != observed_values.size())
        throw std::invalid_argument("exact_conditioning_oracle: ragged observation");

    std::vector<bool> is_obs(dim, false);
    for (std::size_t i : observed_idx) {
        if (i >= dim) throw std::out_of_range("exact_conditioning_oracle: index out of range");
        is_obs[i] = true;
    }
    ConditionalGaussian r;
    for (std::size_t i = 0; i < dim; ++i)
        if (!is_obs[i]) r.kept.push_back(i);

    const auto nu = static_cast<Eigen::Index>(r.kept.size());
    const auto no = static_cast<Eigen::Index>(observed_idx.size());
    Eigen::VectorXd mu_u(nu), mu_o(no), y(no);
    Eigen::MatrixXd s_uu(nu, nu), s_uo(nu, no), s_oo(no, no);
    for (Eigen::Index i = 0; i < nu; ++i) {
        const auto gi = static_cast<Eigen::Index>(r.kept[static_cast<std::size_t>(i)]);
        mu_u(i) = mean(gi);
        for (Eigen::Index j = 0; j < nu; ++j)
            s_uu(i, j) = cov(gi, static_cast<Eigen::Index>(r.kept[static_cast<std::size_t>(j)]));
        for (Eigen::Index j = 0; j < no; ++j)
            s_uo(i, j) = cov(gi, static_cast<Eigen::Index>(observed_idx[static_cast<std::size_t>(j)]));
    }
    for (Eigen::Index i = 0; i < no; ++i) {
        const auto gi = static_cast<Eigen::Index>(observed_idx[static_cast<std::size_t>(i)]);
        mu_o(i) = mean(gi);
        y(i) = observed_values[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < no; ++j)
            s_oo(i, j) = cov(gi, static_cast<Eigen::Index>(observed_idx[static_cast<std::size_t>(j)]));
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(s_oo);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 0.0)
        throw std::invalid_argument("exact_conditioning_oracle: singular observed block");
    const Eigen::MatrixXd gain = ldlt.solve(s_uo.transpose()).transpose();  // nu x no
    r.mean = mu_u + gain * (y - mu_o);
    r.cov = s_uu - gain * s_uo.transpose();
    return r;
}

// ---------------------------------------------------------------------------
// Sampling the forward pass with linearized activations
// ---------------------------------------------------------------------------

/// Per-output-unit MC estimates of the forward moments, sampling weights,
/// biases and inputs, and propagating each draw through activations
/// linearized at the analytical layer means. The analytical forward is the
/// exact target of this sampler.
struct McForward {
    std::vector<McEstimate> mean;
    std::vector<McEstimate> var;
};

inline McForward mc_forward_linearized(std::span<const LayerParams> params, ActivationKind act,
                                       const GaussianVector& input, std::size_t n_samples,
                                       std::uint64_t seed, unsigned jobs = 1) {
    std::size_t units = input.size();
    for (const auto& p : params) units += p.fan_out;
    if (units > 100)
        throw std::invalid_argument("mc_forward_linearized: network too large for sampling");

    // Linearization points from the analytical pass.
    const ForwardResult analytic = forward(params, act, input);
    const std::size_t out_dim = params.back().fan_out;

    constexpr std::size_t kBlocks = 100;
    const std::size_t block_len = std::max<std::size_t>(1, n_samples / kBlocks);
    // Per block, per output unit: sum and sum of squares.
    std::vector<std::vector<std::array<double, 2>>> sums(
        kBlocks, std::vector<std::array<double, 2>>(out_dim, {0.0, 0.0}));

    detail::parallel_for(kBlocks, jobs, [&](std::size_t blk) {
        Rng rng(derive_seed(seed, blk));
        std::vector<double> a(input.size()), z;
        for (std::size_t s = 0; s < block_len; ++s) {
            for (std::size_t i = 0; i < input.size(); ++i)
                a[i] = input.mean[i] + std::sqrt(input.var[i]) * rng.gaussian();
            for (std::size_t j = 0; j < params.size(); ++j) {
                const LayerParams& p = params[j];
                const LayerCache& cache = analytic.caches[j + 1];
                z.assign(p.fan_out, 0.0);
                for (std::size_t i = 0; i < p.fan_out; ++i) {
                    double acc = p.b_mean[i] + std::sqrt(p.b_var[i]) * rng.gaussian();
                    for (std::size_t k = 0; k < p.fan_in; ++k) {
                        const std::size_t t = p.widx(i, k);
                        const double w = p.w_mean[t] + std::sqrt(p.w_var[t]) * rng.gaussian();
                        acc += w * a[k];
                    }
                    z[i] = acc;
                }
                if (j + 1 == params.size()) {
                    a = z;
                } else {
                    a.resize(p.fan_out);
                    for (std::size_t i = 0; i < p.fan_out; ++i)
                        a[i] = cache.jac[i] * (z[i] - cache.mu_z[i]) +
                               activation_value(act, cache.mu_z[i]);
                }
            }
            for (std::size_t i = 0; i < out_dim; ++i) {
                sums[blk][i][0] += a[i];
                sums[blk][i][1] += a[i] * a[i];
            }
        }
    });

    McForward r;
    r.mean.resize(out_dim);
    r.var.resize(out_dim);
    const auto mean_of = [](const std::array<double, 2>& s, std::size_t n) {
        return s[0] / static_cast<double>(n);
    };
    const auto var_of = [](const std::array<double, 2>& s, std::size_t n) {
        const double m = s[0] / static_cast<double>(n);
        return s[1] / static_cast<double>(n) - m * m;
    };
    for (std::size_t i = 0; i < out_dim; ++i) {
        std::vector<std::array<double, 2>> unit(kBlocks);
        for (std::size_t b = 0; b < kBlocks; ++b) unit[b] = sums[b][i];
        r.mean[i] = detail::jackknife<2>(unit, block_len, mean_of);
        r.var[i] = detail::jackknife<2>(unit, block_len, var_of);
    }
    return r;
}

}  // namespace tagi
