#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "tagi/gaussian.hpp"
#include "tagi/net.hpp"

namespace tagi {

/// Floor for posterior variances; absorbs tiny negatives from floating-point
/// cancellation in the diagonal smoother retention.
constexpr double kPosteriorVarFloor = 1e-12;

/// Per-output observation-noise standard deviations, in units of the
/// normalized target.
struct ObservationModel {
    std::vector<double> sigma_v;

    ObservationModel() = default;
    explicit ObservationModel(std::vector<double> sv) : sigma_v(std::move(sv)) { validate(); }

    static ObservationModel isotropic(double sv, std::size_t dim) {
        return ObservationModel(std::vector<double>(dim, sv));
    }

    void validate() const {
        for (double s : sigma_v)
            if (!(s > 0.0)) throw std::invalid_argument("ObservationModel: sigma_v must be > 0");
    }
};

/// Condition the output-layer state on the observed components of y.
/// Unobserved components keep their prior moments. The _into variant reuses
/// the caller's buffer.
inline void update_output_layer_into(const LayerCache& out_cache, const PartialObservation& y,
                                     const ObservationModel& obs, GaussianVector& post) {
    obs.validate();
    post.mean = out_cache.mu_z;
    post.var = out_cache.var_z;
    if (obs.sigma_v.size() != out_cache.mu_z.size())
        throw std::invalid_argument("update_output_layer: sigma_v dimension mismatch");
    if (y.index.size() != y.value.size())
        throw std::invalid_argument("update_output_layer: ragged observation");
    for (std::size_t s = 0; s < y.index.size(); ++s) {
        const std::size_t i = y.index[s];
        if (i >= post.mean.size())
            throw std::out_of_range("update_output_layer: observation index out of range");
        const double vz = out_cache.var_z[i];
        const double sv2 = obs.sigma_v[i] * obs.sigma_v[i];
        const double gain = vz / (vz + sv2);
        post.mean[i] = out_cache.mu_z[i] + gain * (y.value[s] - out_cache.mu_z[i]);
        post.var[i] = vz - vz * gain;
    }
}

inline GaussianVector update_output_layer(const LayerCache& out_cache,
                                          const PartialObservation& y,
                                          const ObservationModel& obs) {
    GaussianVector post;
    update_output_layer_into(out_cache, y, obs, post);
    return post;
}

/// cov(z_k, z_i+) between a layer's states and the next layer's states,
/// fan_in x fan_out row-major: entry [k*fan_out + i] = w_mean(i,k) * jac[k]
/// * var_z[k]. For the input pseudo-state, jac is 1 and var_z is the
/// covariate variance, so the same formula applies.
inline std::vector<double> cross_cov_z(const LayerCache& prev, const LayerParams& p) {
    if (prev.mu_z.size() != p.fan_in)
        throw std::invalid_argument("cross_cov_z: cache/params shape mismatch");
    std::vector<double> c(p.fan_in * p.fan_out);
    for (std::size_t k = 0; k < p.fan_in; ++k) {
        const double jv = prev.jac[k] * prev.var_z[k];
        for (std::size_t i = 0; i < p.fan_out; ++i)
            c[k * p.fan_out + i] = p.w_mean[p.widx(i, k)] * jv;
    }
    return c;
}

/// cov(theta, z+) for the parameters feeding the next layer. With diagonal
/// priors every parameter covaries with exactly one next-layer unit:
/// weight (i,k) with unit i via mu_a[k] * w_var(i,k), bias i via b_var[i].
struct CrossCovTheta {
    std::vector<double> w;  // fan_out x fan_in row-major, unit = row index
    std::vector<double> b;  // fan_out
};

inline CrossCovTheta cross_cov_theta(const LayerCache& prev, const LayerParams& p) {
    if (prev.mu_a.size() != p.fan_in)
        throw std::invalid_argument("cross_cov_theta: cache/params shape mismatch");
    CrossCovTheta c;
    c.w.resize(p.fan_in * p.fan_out);
    c.b = p.b_var;
    for (std::size_t i = 0; i < p.fan_out; ++i)
        for (std::size_t k = 0; k < p.fan_in; ++k)
            c.w[p.widx(i, k)] = prev.mu_a[k] * p.w_var[p.widx(i, k)];
    return c;
}

namespace detail {

inline double clamp_updated_var(double prior, double updated) {
    if (updated == prior) return prior;  // exact no-op stays bit-identical
    return updated < kPosteriorVarFloor ? kPosteriorVarFloor : updated;
}

}  // namespace detail

/// Scratch buffers for one inference sweep; reusing them across
/// observations keeps the per-observation cost allocation-free.
struct InferScratch {
    GaussianVector post;
    GaussianVector prev_post;
    std::vector<double> dm;
    std::vector<double> dv;
};

/// One smoother step: given the next layer's prior and posterior state
/// moments, update this transform's parameters in place and write the
/// posterior of the previous layer's states. Gains are the stored
/// cross-covariances divided by the next layer's prior variances; only the
/// diagonal of the propagated covariance correction is kept.
inline void smooth_step_into(const LayerCache& prev, LayerParams& p,
                             std::span<const double> prior_mean,
                             std::span<const double> prior_var,
                             std::span<const double> post_mean,
                             std::span<const double> post_var, GaussianVector& prev_post,
                             std::vector<double>& dm, std::vector<double>& dv) {
    const std::size_t out = p.fan_out;
    const std::size_t in = p.fan_in;
    if (prior_mean.size() != out || post_mean.size() != out)
        throw std::invalid_argument("smooth_step: next-layer dimension mismatch");
    if (prev.mu_z.size() != in)
        throw std::invalid_argument("smooth_step: cache dimension mismatch");

    // Innovations pre-scaled by the prior variance: dm = d_mean/var,
    // dv = d_var/var^2.
    dm.resize(out);
    dv.resize(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double pv = prior_var[i];
        const double d_mean = post_mean[i] - prior_mean[i];
        const double d_var = post_var[i] - prior_var[i];
        if (pv <= 0.0) {
            if (d_mean != 0.0 || d_var != 0.0)
                throw DegenerateInferenceError(
                    "smooth_step: zero prior variance with a moved posterior");
            dm[i] = 0.0;
            dv[i] = 0.0;
            continue;
        }
        dm[i] = d_mean / pv;
        dv[i] = d_var / (pv * pv);
    }

    prev_post.mean.resize(in);
    prev_post.var.resize(in);
    for (std::size_t k = 0; k < in; ++k) {
        const double jv = prev.jac[k] * prev.var_z[k];
        double m = prev.mu_z[k];
        double v = prev.var_z[k];
        if (jv != 0.0) {
            double acc_m = 0.0, acc_v = 0.0;
            for (std::size_t i = 0; i < out; ++i) {
                const double c = p.w_mean[p.widx(i, k)] * jv;
                acc_m += c * dm[i];
                acc_v += c * c * dv[i];
            }
            m += acc_m;
            v = detail::clamp_updated_var(v, v + acc_v);
        }
        prev_post.mean[k] = m;
        prev_post.var[k] = v;
    }

    for (std::size_t i = 0; i < out; ++i) {
        if (dm[i] == 0.0 && dv[i] == 0.0) continue;
        double* wm = &p.w_mean[p.widx(i, 0)];
        double* wv = &p.w_var[p.widx(i, 0)];
        for (std::size_t k = 0; k < in; ++k) {
            const double c = prev.mu_a[k] * wv[k];
            if (c == 0.0) continue;  // zero gain: w_var = 0 or mu_a = 0
            wm[k] += c * dm[i];
            wv[k] = detail::clamp_updated_var(wv[k], wv[k] + c * c * dv[i]);
        }
        const double cb = p.b_var[i];
        p.b_mean[i] += cb * dm[i];
        p.b_var[i] = detail::clamp_updated_var(cb, cb + cb * cb * dv[i]);
    }
}

inline GaussianVector smooth_step(const LayerCache& prev, LayerParams& p,
                                  const GaussianVector& next_prior,
                                  const GaussianVector& next_post) {
    GaussianVector prev_post;
    std::vector<double> dm, dv;
    smooth_step_into(prev, p, next_prior.mean, next_prior.var, next_post.mean, next_post.var,
                     prev_post, dm, dv);
    return prev_post;
}

/// Full backward sweep for one observation: condition the output layer,
/// then smooth every transform down to the input. Parameter posteriors are
/// written into `params`; hidden-state posteriors are transient.
inline void infer_observation_inplace(std::vector<LayerParams>& params,
                                      const std::vector<LayerCache>& caches,
                                      const PartialObservation& y, const ObservationModel& obs,
                                      InferScratch& scratch) {
    if (caches.size() != params.size() + 1)
        throw std::invalid_argument("infer_observation: caches do not match params");
    update_output_layer_into(caches.back(), y, obs, scratch.post);
    for (std::size_t j = params.size(); j-- > 0;) {
        const LayerCache& next = caches[j + 1];
        smooth_step_into(caches[j], params[j], next.mu_z, next.var_z, scratch.post.mean,
                         scratch.post.var, scratch.prev_post, scratch.dm, scratch.dv);
        std::swap(scratch.post, scratch.prev_post);
    }
}

inline void infer_observation_inplace(std::vector<LayerParams>& params,
                                      const std::vector<LayerCache>& caches,
                                      const PartialObservation& y,
                                      const ObservationModel& obs) {
    InferScratch scratch;
    infer_observation_inplace(params, caches, y, obs, scratch);
}

inline std::vector<LayerParams> infer_observation(std::vector<LayerParams> params,
                                                  const std::vector<LayerCache>& caches,
                                                  const PartialObservation& y,
                                                  const ObservationModel& obs) {
    infer_observation_inplace(params, caches, y, obs);
    return params;
}

/// Batch update: every observation is inferred independently against the
/// shared prior, then the mean and variance deltas are averaged over the
/// batch and applied once.
inline void infer_batch_inplace(std::vector<LayerParams>& params,
                                const std::vector<std::vector<LayerCache>>& caches_per_obs,
                                const std::vector<PartialObservation>& ys,
                                const ObservationModel& obs) {
    if (caches_per_obs.size() != ys.size())
        throw std::invalid_argument("infer_batch: caches/observations mismatch");
    if (ys.empty()) return;
    if (ys.size() == 1) {
        infer_observation_inplace(params, caches_per_obs[0], ys[0], obs);
        return;
    }
    std::vector<LayerParams> acc = params;
    for (auto& a : acc) {
        std::fill(a.w_mean.begin(), a.w_mean.end(), 0.0);
        std::fill(a.w_var.begin(), a.w_var.end(), 0.0);
        std::fill(a.b_mean.begin(), a.b_mean.end(), 0.0);
        std::fill(a.b_var.begin(), a.b_var.end(), 0.0);
    }
    for (std::size_t n = 0; n < ys.size(); ++n) {
        std::vector<LayerParams> post = params;
        infer_observation_inplace(post, caches_per_obs[n], ys[n], obs);
        for (std::size_t j = 0; j < params.size(); ++j) {
            for (std::size_t t = 0; t < acc[j].w_mean.size(); ++t) {
                acc[j].w_mean[t] += post[j].w_mean[t] - params[j].w_mean[t];
                acc[j].w_var[t] += post[j].w_var[t] - params[j].w_var[t];
            }
            for (std::size_t t = 0; t < acc[j].b_mean.size(); ++t) {
                acc[j].b_mean[t] += post[j].b_mean[t] - params[j].b_mean[t];
                acc[j].b_var[t] += post[j].b_var[t] - params[j].b_var[t];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(ys.size());
    for (std::size_t j = 0; j < params.size(); ++j) {
        for (std::size_t t = 0; t < params[j].w_mean.size(); ++t) {
            params[j].w_mean[t] += inv * acc[j].w_mean[t];
            params[j].w_var[t] = detail::clamp_updated_var(
                params[j].w_var[t], params[j].w_var[t] + inv * acc[j].w_var[t]);
        }
        for (std::size_t t = 0; t < params[j].b_mean.size(); ++t) {
            params[j].b_mean[t] += inv * acc[j].b_mean[t];
            params[j].b_var[t] = detail::clamp_updated_var(
                params[j].b_var[t], params[j].b_var[t] + inv * acc[j].b_var[t]);
        }
    }
}

}  // namespace tagi
