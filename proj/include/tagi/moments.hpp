#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace tagi {

/// Two jointly Gaussian scalars. Validated at construction: variances
/// non-negative, Cauchy-Schwarz on the cross-covariance within 1e-9.
struct GaussianPair {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double var1 = 0.0;
    double var2 = 0.0;
    double cov12 = 0.0;

    GaussianPair() = default;
    GaussianPair(double m1, double m2, double v1, double v2, double c12)
        : mu1(m1), mu2(m2), var1(v1), var2(v2), cov12(c12) {
        if (!(var1 >= 0.0) || !(var2 >= 0.0))
            throw std::invalid_argument("GaussianPair: negative variance");
        const double bound = var1 * var2;
        if (cov12 * cov12 > bound + 1e-9 * std::max(1.0, bound))
            throw std::invalid_argument("GaussianPair: cov12 violates Cauchy-Schwarz");
    }
};

/// Four jointly Gaussian scalars with a full symmetric PSD covariance.
struct GaussianQuad {
    std::array<double, 4> mu{};
    std::array<std::array<double, 4>, 4> cov{};

    GaussianQuad() = default;
    GaussianQuad(std::array<double, 4> mean, std::array<std::array<double, 4>, 4> covariance)
        : mu(mean), cov(covariance) {
        validate();
    }

    void validate() const {
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j)
                if (std::abs(cov[i][j] - cov[j][i]) > 1e-12 * std::max(1.0, std::abs(cov[i][j])))
                    throw std::invalid_argument("GaussianQuad: covariance not symmetric");
        if (!psd_within_tolerance())
            throw std::invalid_argument("GaussianQuad: covariance not positive semi-definite");
    }

    /// Cholesky of cov + 1e-9*I; succeeds iff cov is PSD within tolerance.
    bool psd_within_tolerance() const {
        std::array<std::array<double, 4>, 4> l{};
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = cov[i][j] + (i == j ? 1e-9 : 0.0);
                for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
                if (i == j) {
                    if (s <= 0.0) return false;
                    l[i][i] = std::sqrt(s);
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        return true;
    }
};

// ---------------------------------------------------------------------------
// Exact first and second moments of products of jointly Gaussian variables.
// The Gaussian multiplication approximation keeps these two moments and
// treats the product as Gaussian; the moments themselves are exact.
// ---------------------------------------------------------------------------

/// E[X1*X2] = mu1*mu2 + cov(X1,X2)
inline double product_mean(const GaussianPair& p) {
    return p.mu1 * p.mu2 + p.cov12;
}

/// cov(X3, X1*X2) = cov(X1,X3)*mu2 + cov(X2,X3)*mu1
inline double product_cross_cov(const GaussianQuad& q) {
    return q.cov[0][2] * q.mu[1] + q.cov[1][2] * q.mu[0];
}

/// cov(X1*X2, X3*X4), six-term expansion.
inline double product_product_cov(const GaussianQuad& q) {
    return q.cov[0][2] * q.cov[1][3] + q.cov[0][3] * q.cov[1][2] +
           q.cov[0][2] * q.mu[1] * q.mu[3] + q.cov[0][3] * q.mu[1] * q.mu[2] +
           q.cov[1][2] * q.mu[0] * q.mu[3] + q.cov[1][3] * q.mu[0] * q.mu[2];
}

/// var(X1*X2) = s1*s2 + cov^2 + 2*cov*mu1*mu2 + s1*mu2^2 + s2*mu1^2
inline double product_var(const GaussianPair& p) {
    const double v = p.var1 * p.var2 + p.cov12 * p.cov12 +
                     2.0 * p.cov12 * p.mu1 * p.mu2 +
                     p.var1 * p.mu2 * p.mu2 + p.var2 * p.mu1 * p.mu1;
    return v < 0.0 ? 0.0 : v;
}

/// Fast path of product_mean/product_var at cov12 = 0, used throughout the
/// diagonal-covariance propagation.
inline std::pair<double, double> product_mean_var_independent(double mu1, double var1,
                                                              double mu2, double var2) {
    return {mu1 * mu2, var1 * var2 + var1 * mu2 * mu2 + var2 * mu1 * mu1};
}

}  // namespace tagi
