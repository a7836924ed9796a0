#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tagi/gaussian.hpp"
#include "tagi/infer.hpp"

namespace tagi {

/// Regression predictive: latent output moments plus observation noise.
inline GaussianVector regression_predictive(const GaussianVector& z,
                                            const ObservationModel& obs) {
    if (obs.sigma_v.size() != z.size())
        throw std::invalid_argument("regression_predictive: dimension mismatch");
    GaussianVector out = z;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.var[i] += obs.sigma_v[i] * obs.sigma_v[i];
    return out;
}

/// Binary-tree encoding of K classes onto 2^H - 1 output units,
/// H = ceil(log2 K). Units are indexed breadth-first: root, then the two
/// level-1 nodes, and so on. Each class is a root-to-leaf path of H
/// (unit, sign) steps with sign (-1)^bit. When K is not a power of two the
/// unused leaves leave some units off every live path.
struct ClassTree {
    std::size_t num_classes = 0;
    std::size_t depth = 0;
    std::size_t output_units = 0;

    struct PathStep {
        std::size_t unit;
        int sign;  // +1 or -1
    };
    std::vector<std::vector<PathStep>> paths;  // K entries of length H

    static ClassTree make(std::size_t k) {
        if (k < 2) throw std::invalid_argument("ClassTree: need at least 2 classes");
        ClassTree t;
        t.num_classes = k;
        t.depth = 0;
        std::size_t leaves = 1;
        while (leaves < k) {
            leaves *= 2;
            ++t.depth;
        }
        t.output_units = leaves - 1;
        t.paths.resize(k);
        for (std::size_t c = 0; c < k; ++c) {
            t.paths[c].resize(t.depth);
            for (std::size_t h = 1; h <= t.depth; ++h) {
                const std::size_t prefix = c >> (t.depth - h + 1);
                const std::size_t unit = ((std::size_t{1} << (h - 1)) - 1) + prefix;
                const std::size_t bit = (c >> (t.depth - h)) & 1;
                t.paths[c][h - 1] = PathStep{unit, bit == 0 ? +1 : -1};
            }
        }
        return t;
    }

    bool power_of_two() const { return (num_classes & (num_classes - 1)) == 0; }
};

/// Classification scale alpha inside the probit terms, and the observation
/// noise used when conditioning on encoded labels.
struct HeadConfig {
    double alpha = 1.0 / 3.0;
    double sigma_v = 0.2;

    void validate() const {
        if (!(alpha > 0.0)) throw std::invalid_argument("HeadConfig: alpha must be > 0");
        if (!(sigma_v > 0.0)) throw std::invalid_argument("HeadConfig: sigma_v must be > 0");
    }
};

/// Encode a class label as the +/-1 observations along its tree path.
inline PartialObservation class_encode(std::size_t label, const ClassTree& tree) {
    if (label >= tree.num_classes)
        throw std::out_of_range("class_encode: label out of range");
    PartialObservation o;
    o.index.reserve(tree.depth);
    o.value.reserve(tree.depth);
    for (const auto& step : tree.paths[label]) {
        o.index.push_back(step.unit);
        o.value.push_back(static_cast<double>(step.sign));
    }
    return o;
}

/// Recover the label from path signs (in path order); inverse of class_encode.
inline std::size_t class_decode(const std::vector<int>& signs, const ClassTree& tree) {
    if (signs.size() != tree.depth)
        throw std::invalid_argument("class_decode: wrong path length");
    std::size_t label = 0;
    for (int s : signs) label = (label << 1) | (s < 0 ? 1u : 0u);
    if (label >= tree.num_classes)
        throw std::out_of_range("class_decode: signs address an unused leaf");
    return label;
}

/// Closed-form class marginals under Gaussian output moments:
/// p(c) = prod_h Phi(sign_h * mu_h / sqrt(alpha^2 + var_h)), renormalized
/// when K is not a power of two (unused leaves carry the missing mass).
inline std::vector<double> class_marginals(const GaussianVector& y_pred,
                                           const HeadConfig& cfg, const ClassTree& tree) {
    cfg.validate();
    if (y_pred.size() < tree.output_units)
        throw std::invalid_argument("class_marginals: prediction does not cover the tree");
    std::vector<double> p(tree.num_classes, 1.0);
    const double a2 = cfg.alpha * cfg.alpha;
    for (std::size_t c = 0; c < tree.num_classes; ++c) {
        for (const auto& step : tree.paths[c]) {
            const double denom = std::sqrt(a2 + y_pred.var[step.unit]);
            p[c] *= normal_cdf(step.sign * y_pred.mean[step.unit] / denom);
        }
    }
    if (!tree.power_of_two()) {
        double total = 0.0;
        for (double v : p) total += v;
        for (double& v : p) v /= total;
    }
    return p;
}

enum class Decision { correct, incorrect, unknown };

/// Thresholded decision: the argmax class must reach probability phi to
/// count as a decision at all; ties break toward the lowest class id.
inline Decision class_decision(const std::vector<double>& probs, double phi,
                               std::size_t truth) {
    double total = 0.0;
    for (double v : probs) total += v;
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("class_decision: probabilities do not sum to 1");
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c)
        if (probs[c] > probs[best]) best = c;
    if (probs[best] < phi) return Decision::unknown;
    return best == truth ? Decision::correct : Decision::incorrect;
}

}  // namespace tagi
