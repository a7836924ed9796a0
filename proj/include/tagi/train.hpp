#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <vector>

#include "tagi/data.hpp"
#include "tagi/gaussian.hpp"
#include "tagi/heads.hpp"
#include "tagi/infer.hpp"
#include "tagi/net.hpp"

namespace tagi {

enum class Task { regression, classification };

/// Task binding shared by the training loop and evaluators.
struct Problem {
    Task task = Task::regression;
    double sigma_v = 1.0;      // observation noise, normalized target units
    double alpha = 1.0 / 3.0;  // probit scale (classification)
    ClassTree tree;            // classification only

    std::size_t output_dim(std::size_t regression_targets) const {
        return task == Task::regression ? regression_targets : tree.output_units;
    }
};

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 1;
    std::uint64_t shuffle_seed = 0;
    std::vector<double> sigma_v_grid;
    bool early_stop = false;
    std::size_t folds = 5;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
};

struct Metrics {
    double rmse = 0.0;
    double avg_ll = 0.0;
    double class_error = 0.0;
    std::vector<double> per_epoch_val_ll;
};

/// Reusable buffers for the per-observation loop.
struct Workspace {
    std::vector<LayerCache> caches;
    std::vector<std::vector<LayerCache>> batch_caches;
    std::vector<PartialObservation> batch_obs;
    GaussianVector input;
    InferScratch scratch;
    PartialObservation obs_buf;
    std::vector<std::size_t> order;
};

namespace detail {

inline void load_input(const Dataset& data, std::size_t row, GaussianVector& input) {
    const std::size_t d = data.x.cols;
    input.mean.resize(d);
    input.var.assign(d, 0.0);
    const double* src = &data.x.data[row * d];
    std::copy(src, src + d, input.mean.begin());
}

inline void make_observation_into(const Dataset& data, std::size_t row, const Problem& prob,
                                  PartialObservation& o) {
    if (prob.task == Task::classification) {
        const auto& path = prob.tree.paths[static_cast<std::size_t>(data.labels[row])];
        o.index.resize(path.size());
        o.value.resize(path.size());
        for (std::size_t h = 0; h < path.size(); ++h) {
            o.index[h] = path[h].unit;
            o.value[h] = static_cast<double>(path[h].sign);
        }
        return;
    }
    o.index.resize(data.y.cols);
    o.value.resize(data.y.cols);
    for (std::size_t c = 0; c < data.y.cols; ++c) {
        o.index[c] = c;
        o.value[c] = data.y.at(row, c);
    }
}

inline PartialObservation make_observation(const Dataset& data, std::size_t row,
                                           const Problem& prob) {
    PartialObservation o;
    make_observation_into(data, row, prob, o);
    return o;
}

inline void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    const unsigned workers = std::min<unsigned>(jobs, static_cast<unsigned>(count));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

/// Train on the shuffled observations [begin, end) of one epoch. Exposed so
/// callers can pause mid-epoch (observation-count checkpoints).
inline void train_range(std::vector<LayerParams>& params, ActivationKind act,
                        const Dataset& data, const Problem& prob, const TrainConfig& cfg,
                        std::size_t epoch_index, std::size_t begin, std::size_t end,
                        Workspace& ws) {
    cfg.validate();
    if (data.n() == 0 || begin >= end) return;
    const std::size_t out_dim = params.back().fan_out;
    const ObservationModel obs = ObservationModel::isotropic(prob.sigma_v, out_dim);

    ws.order.resize(data.n());
    std::iota(ws.order.begin(), ws.order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.shuffle_seed, epoch_index));
    rng.shuffle(ws.order);
    end = std::min(end, ws.order.size());

    if (cfg.batch_size == 1) {
        for (std::size_t s = begin; s < end; ++s) {
            const std::size_t row = ws.order[s];
            detail::load_input(data, row, ws.input);
            forward(params, act, ws.input, ws.caches);
            detail::make_observation_into(data, row, prob, ws.obs_buf);
            infer_observation_inplace(params, ws.caches, ws.obs_buf, obs, ws.scratch);
        }
        return;
    }
    for (std::size_t s = begin; s < end;) {
        const std::size_t b = std::min(cfg.batch_size, end - s);
        ws.batch_caches.resize(b);
        ws.batch_obs.clear();
        for (std::size_t q = 0; q < b; ++q) {
            const std::size_t row = ws.order[s + q];
            detail::load_input(data, row, ws.input);
            forward(params, act, ws.input, ws.batch_caches[q]);
            ws.batch_obs.push_back(detail::make_observation(data, row, prob));
        }
        infer_batch_inplace(params, ws.batch_caches, ws.batch_obs, obs);
        s += b;
    }
}

/// One full pass over the dataset; the returned posterior is the next
/// epoch's prior.
inline void train_epoch(std::vector<LayerParams>& params, ActivationKind act,
                        const Dataset& data, const Problem& prob, const TrainConfig& cfg,
                        std::size_t epoch_index, Workspace& ws) {
    train_range(params, act, data, prob, cfg, epoch_index, 0, data.n(), ws);
}

/// Average per-observation log-likelihood on a dataset, in the units the
/// dataset is expressed in. Regression uses the full predictive (latent
/// plus observation variance); classification scores the true class'
/// marginal probability.
inline double avg_log_likelihood(const std::vector<LayerParams>& params, ActivationKind act,
                                 const Dataset& data, const Problem& prob) {
    if (data.n() == 0) throw std::invalid_argument("avg_log_likelihood: empty dataset");
    Workspace ws;
    double total = 0.0;
    const double sv2 = prob.sigma_v * prob.sigma_v;
    for (std::size_t r = 0; r < data.n(); ++r) {
        detail::load_input(data, r, ws.input);
        forward(params, act, ws.input, ws.caches);
        const LayerCache& out = ws.caches.back();
        if (prob.task == Task::regression) {
            for (std::size_t c = 0; c < data.y.cols; ++c)
                total += normal_log_pdf(data.y.at(r, c), out.mu_z[c], out.var_z[c] + sv2);
        } else {
            // Marginals integrate over the observable output y = z + v.
            GaussianVector pred(out.mu_z, out.var_z);
            for (double& v : pred.var) v += sv2;
            HeadConfig head{prob.alpha, prob.sigma_v};
            const auto p = class_marginals(pred, head, prob.tree);
            const double pt = p[static_cast<std::size_t>(data.labels[r])];
            total += std::log(pt > 1e-300 ? pt : 1e-300);
        }
    }
    return total / static_cast<double>(data.n());
}

struct FitResult {
    std::vector<LayerParams> params;
    std::size_t best_epoch = 0;  // 1-based
    std::vector<double> per_epoch_val_ll;
};

using FitObserver =
    std::function<void(std::size_t epoch, const std::vector<LayerParams>&, double val_ll)>;

/// Train for cfg.epochs epochs with posterior-to-prior recycling. With a
/// validation set, each epoch's average LL is recorded; early_stop returns
/// the parameters of the best epoch, otherwise the final ones. The observer
/// (if any) sees epoch 0 (the prior) and every trained epoch.
inline FitResult fit(const NetworkArch& arch, const Dataset& train_set, const Dataset& val_set,
                     const Problem& prob, const TrainConfig& cfg, const InitSpec& init,
                     std::uint64_t init_seed, const FitObserver& observer = {}) {
    cfg.validate();
    const bool have_val = val_set.n() > 0;
    if (cfg.early_stop && !have_val)
        throw std::invalid_argument("fit: early_stop requires a validation set");

    FitResult r;
    std::vector<LayerParams> params = init_network(arch, init, init_seed);
    if (observer)
        observer(0, params, have_val ? avg_log_likelihood(params, arch.activation, val_set, prob)
                                     : std::numeric_limits<double>::quiet_NaN());

    Workspace ws;
    double best_ll = -std::numeric_limits<double>::infinity();
    std::vector<LayerParams> best_params;
    std::size_t best_epoch = 0;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        train_epoch(params, arch.activation, train_set, prob, cfg, e, ws);
        double ll = std::numeric_limits<double>::quiet_NaN();
        if (have_val) {
            ll = avg_log_likelihood(params, arch.activation, val_set, prob);
            r.per_epoch_val_ll.push_back(ll);
            if (ll > best_ll) {
                best_ll = ll;
                best_epoch = e;
                if (cfg.early_stop) best_params = params;
            }
        }
        if (observer) observer(e, params, ll);
    }
    if (cfg.early_stop) {
        r.params = std::move(best_params);
        r.best_epoch = best_epoch;
    } else {
        r.params = std::move(params);
        r.best_epoch = cfg.epochs;
    }
    return r;
}

/// Grid search for the observation noise: average cross-validated LL per
/// candidate, argmax wins, ties go to the larger candidate.
inline double select_sigma_v(const NetworkArch& arch, const Dataset& data, const Problem& prob,
                             const TrainConfig& cfg, const InitSpec& init, std::uint64_t seed,
                             unsigned jobs = 1) {
    if (cfg.sigma_v_grid.empty()) throw std::invalid_argument("select_sigma_v: empty grid");
    if (cfg.sigma_v_grid.size() == 1) return cfg.sigma_v_grid.front();
    const std::size_t folds = cfg.folds;
    const auto splits = cv_partition(data.n(), folds, derive_seed(seed, 0x5Eu));

    const std::size_t n_jobs = cfg.sigma_v_grid.size() * folds;
    std::vector<double> ll(n_jobs, 0.0);
    detail::parallel_for(n_jobs, jobs, [&](std::size_t job) {
        const std::size_t g = job / folds;
        const std::size_t f = job % folds;
        Problem p = prob;
        p.sigma_v = cfg.sigma_v_grid[g];
        TrainConfig c = cfg;
        c.early_stop = false;
        c.shuffle_seed = derive_seed(seed, 100 + f);
        const Dataset tr = data.subset(splits[f].train);
        const Dataset va = data.subset(splits[f].test);
        std::vector<LayerParams> params = init_network(arch, init, derive_seed(seed, 200 + f));
        Workspace ws;
        for (std::size_t e = 1; e <= c.epochs; ++e)
            train_epoch(params, arch.activation, tr, p, c, e, ws);
        ll[job] = avg_log_likelihood(params, arch.activation, va, p);
    });

    double best_score = -std::numeric_limits<double>::infinity();
    double best_sv = cfg.sigma_v_grid.front();
    for (std::size_t g = 0; g < cfg.sigma_v_grid.size(); ++g) {
        double score = 0.0;
        for (std::size_t f = 0; f < folds; ++f) score += ll[g * folds + f];
        score /= static_cast<double>(folds);
        if (score > best_score || (score == best_score && cfg.sigma_v_grid[g] > best_sv)) {
            best_score = score;
            best_sv = cfg.sigma_v_grid[g];
        }
    }
    return best_sv;
}

/// Test-set metrics in original units. `x_stats`/`y_stats` are the
/// training-fold normalization; the test set is given unnormalized.
inline Metrics evaluate(const std::vector<LayerParams>& params, ActivationKind act,
                        const Dataset& test_set, const NormStats& x_stats,
                        const NormStats& y_stats, const Problem& prob) {
    if (test_set.n() == 0) throw std::invalid_argument("evaluate: empty test set");
    if (x_stats.scale.size() != test_set.x.cols)
        throw std::invalid_argument("evaluate: x_stats do not match the feature count");
    if (prob.task == Task::regression && y_stats.scale.size() != test_set.y.cols)
        throw std::invalid_argument("evaluate: y_stats do not match the target count");
    Metrics m;
    Workspace ws;
    const double sv2 = prob.sigma_v * prob.sigma_v;
    if (prob.task == Task::regression) {
        double se = 0.0, ll = 0.0;
        for (std::size_t r = 0; r < test_set.n(); ++r) {
            detail::load_input(test_set, r, ws.input);
            for (std::size_t c = 0; c < ws.input.mean.size(); ++c)
                ws.input.mean[c] = x_stats.normalize_value(ws.input.mean[c], c);
            forward(params, act, ws.input, ws.caches);
            const LayerCache& out = ws.caches.back();
            for (std::size_t c = 0; c < test_set.y.cols; ++c) {
                const double mu = y_stats.denormalize_value(out.mu_z[c], c);
                const double var = y_stats.denormalize_var(out.var_z[c] + sv2, c);
                const double y = test_set.y.at(r, c);
                se += (y - mu) * (y - mu);
                ll += normal_log_pdf(y, mu, var);
            }
        }
        const double cells = static_cast<double>(test_set.n() * test_set.y.cols);
        m.rmse = std::sqrt(se / cells);
        m.avg_ll = ll / static_cast<double>(test_set.n());
    } else {
        std::size_t wrong = 0;
        double ll = 0.0;
        HeadConfig head{prob.alpha, prob.sigma_v};
        for (std::size_t r = 0; r < test_set.n(); ++r) {
            detail::load_input(test_set, r, ws.input);
            for (std::size_t c = 0; c < ws.input.mean.size(); ++c)
                ws.input.mean[c] = x_stats.normalize_value(ws.input.mean[c], c);
            forward(params, act, ws.input, ws.caches);
            GaussianVector pred(ws.caches.back().mu_z, ws.caches.back().var_z);
            for (double& v : pred.var) v += sv2;
            const auto p = class_marginals(pred, head, prob.tree);
            std::size_t best = 0;
            for (std::size_t c = 1; c < p.size(); ++c)
                if (p[c] > p[best]) best = c;
            const auto truth = static_cast<std::size_t>(test_set.labels[r]);
            if (best != truth) ++wrong;
            ll += std::log(p[truth] > 1e-300 ? p[truth] : 1e-300);
        }
        m.class_error = static_cast<double>(wrong) / static_cast<double>(test_set.n());
        m.avg_ll = ll / static_cast<double>(test_set.n());
    }
    return m;
}

}  // namespace tagi
