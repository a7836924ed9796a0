#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tagi/gaussian.hpp"
#include "tagi/moments.hpp"

namespace tagi {

enum class ActivationKind { relu, softplus, tanh, sigmoid, linear };

inline ActivationKind activation_from_string(const std::string& s) {
    if (s == "relu") return ActivationKind::relu;
    if (s == "softplus") return ActivationKind::softplus;
    if (s == "tanh") return ActivationKind::tanh;
    if (s == "sigmoid") return ActivationKind::sigmoid;
    if (s == "linear") return ActivationKind::linear;
    throw std::invalid_argument("unknown activation: " + s);
}

inline const char* to_string(ActivationKind k) {
    switch (k) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::softplus: return "softplus";
        case ActivationKind::tanh: return "tanh";
        case ActivationKind::sigmoid: return "sigmoid";
        case ActivationKind::linear: return "linear";
    }
    return "?";
}

inline double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double activation_value(ActivationKind k, double z) {
    switch (k) {
        case ActivationKind::relu: return z > 0.0 ? z : 0.0;
        case ActivationKind::softplus:
            if (z > 30.0) return z;
            if (z < -30.0) return std::exp(z);
            return std::log1p(std::exp(z));
        case ActivationKind::tanh: return std::tanh(z);
        case ActivationKind::sigmoid: return logistic(z);
        case ActivationKind::linear: return z;
    }
    return z;
}

/// Derivative at z. ReLU uses 0 at exactly z = 0 so the dead region stays
/// variance-free.
inline double activation_deriv(ActivationKind k, double z) {
    switch (k) {
        case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
        case ActivationKind::softplus: return logistic(z);
        case ActivationKind::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case ActivationKind::sigmoid: {
            const double s = logistic(z);
            return s * (1.0 - s);
        }
        case ActivationKind::linear: return 1.0;
    }
    return 1.0;
}

/// Feedforward architecture: L hidden layers plus an affine output layer
/// (no output activation).
struct NetworkArch {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_dim = 0;
    ActivationKind activation = ActivationKind::relu;

    void validate() const {
        if (input_dim < 1 || output_dim < 1)
            throw std::invalid_argument("NetworkArch: dimensions must be >= 1");
        for (std::size_t w : hidden_widths)
            if (w < 1) throw std::invalid_argument("NetworkArch: hidden width must be >= 1");
    }

    /// (fan_in, fan_out) of each of the L+1 affine transforms.
    std::vector<std::pair<std::size_t, std::size_t>> transform_dims() const {
        std::vector<std::pair<std::size_t, std::size_t>> dims;
        std::size_t prev = input_dim;
        for (std::size_t w : hidden_widths) {
            dims.emplace_back(prev, w);
            prev = w;
        }
        dims.emplace_back(prev, output_dim);
        return dims;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto [in, out] : transform_dims()) n += out * in + out;
        return n;
    }
};

/// Gaussian prior spread at initialization: weight variance is the Xavier
/// value 2/(fan_in+fan_out) times `weight_gain`; bias variance is fixed.
struct InitSpec {
    double weight_gain = 0.25;
    double bias_var = 0.01;
};

/// Per-layer weight/bias means and diagonal variances; the learned
/// posterior state. Weights are row-major fan_out x fan_in.
struct LayerParams {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::vector<double> w_mean;
    std::vector<double> w_var;
    std::vector<double> b_mean;
    std::vector<double> b_var;

    LayerParams() = default;
    LayerParams(std::size_t in, std::size_t out)
        : fan_in(in), fan_out(out),
          w_mean(in * out, 0.0), w_var(in * out, 0.0),
          b_mean(out, 0.0), b_var(out, 0.0) {}

    std::size_t widx(std::size_t i, std::size_t k) const { return i * fan_in + k; }
};

/// Per-observation forward record for one layer state: prior moments of z,
/// the diagonal activation Jacobian at mu_z, activation moments, and the
/// moments of the layer's input (previous activations or covariates).
struct LayerCache {
    std::vector<double> mu_z;
    std::vector<double> var_z;
    std::vector<double> jac;
    std::vector<double> mu_a;
    std::vector<double> var_a;
    std::vector<double> input_mu;
    std::vector<double> input_var;
};

inline std::vector<LayerParams> init_network(const NetworkArch& arch, const InitSpec& init,
                                             std::uint64_t seed) {
    arch.validate();
    if (!(init.weight_gain > 0.0) || !(init.bias_var >= 0.0))
        throw std::invalid_argument("InitSpec: weight_gain must be > 0, bias_var >= 0");
    Rng rng(seed);
    std::vector<LayerParams> params;
    for (auto [in, out] : arch.transform_dims()) {
        LayerParams p(in, out);
        const double wv = init.weight_gain * 2.0 / static_cast<double>(in + out);
        const double ws = std::sqrt(wv);
        const double bs = std::sqrt(init.bias_var);
        for (std::size_t i = 0; i < in * out; ++i) {
            p.w_mean[i] = rng.gaussian(0.0, ws);
            p.w_var[i] = wv;
        }
        for (std::size_t i = 0; i < out; ++i) {
            p.b_mean[i] = rng.gaussian(0.0, bs);
            p.b_var[i] = init.bias_var;
        }
        params.push_back(std::move(p));
    }
    return params;
}

/// Linearized activation moments: mu_a = sigma(mu_z), jac = sigma'(mu_z),
/// var_a = jac^2 * var_z.
inline void activation_moments(ActivationKind kind, std::span<const double> mu_z,
                               std::span<const double> var_z, std::vector<double>& mu_a,
                               std::vector<double>& var_a, std::vector<double>& jac) {
    const std::size_t n = mu_z.size();
    mu_a.resize(n);
    var_a.resize(n);
    jac.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double j = activation_deriv(kind, mu_z[i]);
        mu_a[i] = activation_value(kind, mu_z[i]);
        jac[i] = j;
        var_a[i] = j * j * var_z[i];
    }
}

/// Moment propagation through all layers. Fills one cache per layer state:
/// caches[0] is a pseudo-state for the input (unit Jacobian), caches[j] for
/// j in 1..L are hidden states, caches[L+1] is the affine output state.
/// Cache storage is reused across calls when the same vector is passed in.
inline void forward(std::span<const LayerParams> params, ActivationKind act,
                    const GaussianVector& input, std::vector<LayerCache>& caches) {
    validate(input, "forward input");
    if (params.empty()) throw std::invalid_argument("forward: empty parameter list");
    if (input.size() != params.front().fan_in)
        throw std::invalid_argument("forward: input dimension mismatch");

    caches.resize(params.size() + 1);
    LayerCache& in = caches[0];
    in.mu_z = input.mean;
    in.var_z = input.var;
    in.jac.assign(input.size(), 1.0);
    in.mu_a = input.mean;
    in.var_a = input.var;
    in.input_mu = input.mean;
    in.input_var = input.var;

    for (std::size_t j = 0; j < params.size(); ++j) {
        const LayerParams& p = params[j];
        const LayerCache& prev = caches[j];
        LayerCache& cur = caches[j + 1];
        if (prev.mu_a.size() != p.fan_in)
            throw std::invalid_argument("forward: layer dimension mismatch");

        cur.input_mu = prev.mu_a;
        cur.input_var = prev.var_a;
        cur.mu_z.resize(p.fan_out);
        cur.var_z.resize(p.fan_out);
        for (std::size_t i = 0; i < p.fan_out; ++i) {
            double m = p.b_mean[i];
            double v = p.b_var[i];
            const double* wm = &p.w_mean[p.widx(i, 0)];
            const double* wv = &p.w_var[p.widx(i, 0)];
            for (std::size_t k = 0; k < p.fan_in; ++k) {
                const double am = prev.mu_a[k];
                const double av = prev.var_a[k];
                m += wm[k] * am;
                v += wv[k] * av + wv[k] * am * am + wm[k] * wm[k] * av;
            }
            cur.mu_z[i] = m;
            cur.var_z[i] = v;
        }

        const bool is_output = (j + 1 == params.size());
        if (is_output) {
            cur.jac.assign(p.fan_out, 1.0);
            cur.mu_a = cur.mu_z;
            cur.var_a = cur.var_z;
        } else {
            activation_moments(act, cur.mu_z, cur.var_z, cur.mu_a, cur.var_a, cur.jac);
        }
    }
}

struct ForwardResult {
    GaussianVector output;
    std::vector<LayerCache> caches;
};

inline ForwardResult forward(std::span<const LayerParams> params, ActivationKind act,
                             const GaussianVector& input) {
    ForwardResult r;
    forward(params, act, input, r.caches);
    r.output.mean = r.caches.back().mu_z;
    r.output.var = r.caches.back().var_z;
    return r;
}

}  // namespace tagi
