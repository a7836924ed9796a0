#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tagi/data.hpp"
#include "tagi/oracle.hpp"
#include "tagi/tagi.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace tagi;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for \"") + key + "\"");
    }
}

struct RunConfig {
    std::string task;  // regression | classification
    std::vector<std::size_t> hidden_widths;
    std::string activation = "relu";
    double weight_gain = 0.25;
    double bias_var = 0.01;

    std::size_t epochs = 40;
    std::size_t batch_size = 1;
    std::uint64_t seed = 1;
    bool early_stop = false;
    double sigma_v = 0.0;  // used when the grid is empty
    std::vector<double> sigma_v_grid;
    std::size_t cv_folds = 5;
    double alpha = 1.0 / 3.0;

    std::string generator;  // toy_cubic | csv | mnist
    // csv
    std::string file;
    std::vector<std::size_t> target_columns;
    std::vector<std::size_t> ignore_columns;
    std::size_t folds = 20;
    double train_fraction = 0.9;
    std::string normalization = "standardize";
    // toy_cubic
    std::size_t n_train = 20;
    std::size_t n_val = 20;
    double noise_std = 3.0;
    double x_lo = -4.0, x_hi = 4.0;
    // mnist
    std::string train_images, train_labels, test_images, test_labels;
    double validation_fraction = 0.05;

    json resolved;  // echoed into every output
};

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    check_keys(j, "config", {"task", "arch", "init", "train", "data"});
    RunConfig c;
    c.task = get_or<std::string>(j, "task", "");
    if (c.task != "regression" && c.task != "classification")
        throw ConfigError("task must be \"regression\" or \"classification\"");

    if (!j.contains("arch")) throw ConfigError("missing \"arch\" section");
    const json& arch = j.at("arch");
    check_keys(arch, "arch", {"hidden_widths", "activation"});
    c.hidden_widths = get_or<std::vector<std::size_t>>(arch, "hidden_widths", {});
    c.activation = get_or<std::string>(arch, "activation", "relu");
    activation_from_string(c.activation);  // validate early

    if (j.contains("init")) {
        const json& init = j.at("init");
        check_keys(init, "init", {"weight_gain", "bias_var"});
        c.weight_gain = get_or<double>(init, "weight_gain", c.weight_gain);
        c.bias_var = get_or<double>(init, "bias_var", c.bias_var);
    }

    if (!j.contains("train")) throw ConfigError("missing \"train\" section");
    const json& train = j.at("train");
    check_keys(train, "train",
               {"epochs", "batch_size", "seed", "early_stop", "sigma_v", "sigma_v_grid",
                "cv_folds", "alpha"});
    c.epochs = get_or<std::size_t>(train, "epochs", c.epochs);
    c.batch_size = get_or<std::size_t>(train, "batch_size", c.batch_size);
    c.seed = get_or<std::uint64_t>(train, "seed", c.seed);
    c.early_stop = get_or<bool>(train, "early_stop", c.early_stop);
    c.sigma_v = get_or<double>(train, "sigma_v", 0.0);
    c.sigma_v_grid = get_or<std::vector<double>>(train, "sigma_v_grid", {});
    c.cv_folds = get_or<std::size_t>(train, "cv_folds", c.cv_folds);
    c.alpha = get_or<double>(train, "alpha", c.alpha);
    if (c.sigma_v <= 0.0 && c.sigma_v_grid.empty())
        throw ConfigError("train needs a positive sigma_v or a sigma_v_grid");
    if (c.epochs < 1 || c.batch_size < 1)
        throw ConfigError("epochs and batch_size must be >= 1");

    if (!j.contains("data")) throw ConfigError("missing \"data\" section");
    const json& data = j.at("data");
    c.generator = get_or<std::string>(data, "generator", "");
    if (c.generator == "toy_cubic") {
        check_keys(data, "data",
                   {"generator", "n_train", "n_val", "noise_std", "x_range", "normalization"});
        c.n_train = get_or<std::size_t>(data, "n_train", c.n_train);
        c.n_val = get_or<std::size_t>(data, "n_val", c.n_val);
        c.noise_std = get_or<double>(data, "noise_std", c.noise_std);
        const auto range = get_or<std::vector<double>>(data, "x_range", {-4.0, 4.0});
        if (range.size() != 2 || range[0] >= range[1])
            throw ConfigError("x_range must be [lo, hi]");
        c.x_lo = range[0];
        c.x_hi = range[1];
        c.normalization = get_or<std::string>(data, "normalization", "range");
    } else if (c.generator == "csv") {
        check_keys(data, "data",
                   {"generator", "file", "target_columns", "ignore_columns", "folds",
                    "train_fraction", "normalization"});
        c.file = get_or<std::string>(data, "file", "");
        c.target_columns = get_or<std::vector<std::size_t>>(data, "target_columns", {});
        c.ignore_columns = get_or<std::vector<std::size_t>>(data, "ignore_columns", {});
        c.folds = get_or<std::size_t>(data, "folds", c.folds);
        c.train_fraction = get_or<double>(data, "train_fraction", c.train_fraction);
        c.normalization = get_or<std::string>(data, "normalization", "standardize");
    } else if (c.generator == "mnist") {
        check_keys(data, "data",
                   {"generator", "train_images", "train_labels", "test_images", "test_labels",
                    "validation_fraction"});
        c.train_images = get_or<std::string>(data, "train_images", "train-images-idx3-ubyte");
        c.train_labels = get_or<std::string>(data, "train_labels", "train-labels-idx1-ubyte");
        c.test_images = get_or<std::string>(data, "test_images", "t10k-images-idx3-ubyte");
        c.test_labels = get_or<std::string>(data, "test_labels", "t10k-labels-idx1-ubyte");
        c.validation_fraction = get_or<double>(data, "validation_fraction", 0.05);
    } else {
        throw ConfigError("data.generator must be toy_cubic, csv, or mnist");
    }
    if (c.normalization != "standardize" && c.normalization != "range" &&
        c.normalization != "none")
        throw ConfigError("normalization must be standardize, range, or none");

    c.resolved = j;
    c.resolved["train"]["seed"] = c.seed;
    return c;
}

std::string resolve_path(const std::string& data_dir, const std::string& file) {
    const fs::path p(file);
    if (p.is_absolute() || data_dir.empty()) return file;
    return (fs::path(data_dir) / p).string();
}

NormStats::Mode normalization_mode(const std::string& name) {
    if (name == "standardize") return NormStats::Mode::standardize;
    if (name == "range") return NormStats::Mode::range;
    return NormStats::Mode::none;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// moments-check
// ---------------------------------------------------------------------------

int run_moments_check(std::size_t samples, std::uint64_t seed, std::size_t cases,
                      unsigned jobs, const std::string& out_file) {
    Rng rng(seed);
    json report;
    report["samples"] = samples;
    report["seed"] = seed;
    report["cases"] = cases;
    report["band_se"] = 4.0;
    report["results"] = json::array();
    std::size_t passed = 0;
    for (std::size_t c = 0; c < cases; ++c) {
        const GaussianQuad q = random_quad(rng);
        const auto closed = closed_product_moments(q);
        const auto mc = mc_product_moments(q, samples, derive_seed(seed, c), jobs);
        const auto entry = [](double target, const McEstimate& e) {
            return json{{"closed", target},
                        {"mc", e.value},
                        {"se", e.std_error},
                        {"pass", e.within(target, 4.0)}};
        };
        json r;
        r["case"] = c;
        r["product_mean"] = entry(closed.mean12, mc.mean12);
        r["product_cross_cov"] = entry(closed.cov3_12, mc.cov3_12);
        r["product_product_cov"] = entry(closed.cov12_34, mc.cov12_34);
        r["product_var"] = entry(closed.var12, mc.var12);
        const bool ok = mc.mean12.within(closed.mean12, 4.0) &&
                        mc.cov3_12.within(closed.cov3_12, 4.0) &&
                        mc.cov12_34.within(closed.cov12_34, 4.0) &&
                        mc.var12.within(closed.var12, 4.0);
        r["pass"] = ok;
        passed += ok;
        report["results"].push_back(std::move(r));
    }
    report["passed"] = passed;
    report["failed"] = cases - passed;
    if (!out_file.empty()) write_text(out_file, report.dump(2) + "\n");
    std::cout << "moments-check: " << passed << "/" << cases << " cases within 4 SE at "
              << samples << " samples\n";
    if (passed != cases) {
        std::cout << report.dump(2) << "\n";
        return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// toy1d
// ---------------------------------------------------------------------------

int run_toy1d(const RunConfig& cfg, const std::string& out_dir) {
    if (cfg.task != "regression") throw ConfigError("toy1d needs task = regression");
    if (cfg.generator != "toy_cubic")
        throw ConfigError("toy1d needs data.generator = toy_cubic");
    fs::create_directories(out_dir);

    const auto train_set =
        make_toy_cubic(cfg.n_train, cfg.noise_std, {cfg.x_lo, cfg.x_hi}, derive_seed(cfg.seed, 1));
    const auto val_set =
        make_toy_cubic(cfg.n_val, cfg.noise_std, {cfg.x_lo, cfg.x_hi}, derive_seed(cfg.seed, 2));
    const auto mode = normalization_mode(cfg.normalization);
    const auto x_stats = NormStats::fit(train_set.x, mode);
    const auto y_stats = NormStats::fit(train_set.y, mode);
    Dataset tr = train_set, va = val_set;
    x_stats.apply(tr.x);
    y_stats.apply(tr.y);
    x_stats.apply(va.x);
    y_stats.apply(va.y);

    NetworkArch arch;
    arch.input_dim = 1;
    arch.hidden_widths = cfg.hidden_widths;
    arch.output_dim = 1;
    arch.activation = activation_from_string(cfg.activation);

    Problem prob;
    prob.sigma_v = cfg.sigma_v;
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.early_stop = cfg.early_stop;
    tc.shuffle_seed = derive_seed(cfg.seed, 3);
    const InitSpec init{cfg.weight_gain, cfg.bias_var};

    // Snapshots of the epochs the predictive curves are drawn at.
    std::vector<LayerParams> at_prior, at_first, at_best, at_last;
    std::vector<double> train_ll, val_ll;
    double best_ll = -std::numeric_limits<double>::infinity();
    const auto observer = [&](std::size_t epoch, const std::vector<LayerParams>& p, double ll) {
        train_ll.push_back(avg_log_likelihood(p, arch.activation, tr, prob));
        val_ll.push_back(epoch == 0 ? avg_log_likelihood(p, arch.activation, va, prob) : ll);
        if (epoch == 0) at_prior = p;
        if (epoch == 1) at_first = p;
        if (epoch >= 1 && ll > best_ll) {
            best_ll = ll;
            at_best = p;
        }
        if (epoch == cfg.epochs) at_last = p;
    };
    const auto r = fit(arch, tr, va, prob, tc, init, derive_seed(cfg.seed, 4), observer);

    // LL curve in original target units: shift by the log of the y scale.
    const double ll_shift = -std::log(y_stats.scale[0]);
    std::ostringstream curve;
    curve << "epoch,train_ll,val_ll\n";
    for (std::size_t e = 0; e < train_ll.size(); ++e)
        curve << e << "," << train_ll[e] + ll_shift << "," << val_ll[e] + ll_shift << "\n";
    write_text(fs::path(out_dir) / "ll_curve.csv", curve.str());

    const auto emit_curve = [&](std::ostringstream& os, const std::string& tag,
                                const std::vector<LayerParams>& p) {
        Workspace ws;
        for (double x = cfg.x_lo - 0.5; x <= cfg.x_hi + 0.5001; x += 0.05) {
            ws.input.mean = {x_stats.normalize_value(x, 0)};
            ws.input.var = {0.0};
            forward(p, arch.activation, ws.input, ws.caches);
            const double mu = y_stats.denormalize_value(ws.caches.back().mu_z[0], 0);
            const double sd = std::sqrt(y_stats.denormalize_var(
                ws.caches.back().var_z[0] + cfg.sigma_v * cfg.sigma_v, 0));
            os << tag << "," << x << "," << mu << "," << mu - 3 * sd << "," << mu + 3 * sd
               << "\n";
        }
    };
    std::ostringstream pred;
    pred << "epoch,x,mu,lower_3sd,upper_3sd\n";
    emit_curve(pred, "0", at_prior);
    emit_curve(pred, "1", at_first);
    emit_curve(pred, std::to_string(r.best_epoch), at_best);
    emit_curve(pred, std::to_string(cfg.epochs), at_last);
    write_text(fs::path(out_dir) / "predictive_curves.csv", pred.str());

    const auto metrics = evaluate(r.params, arch.activation, val_set, x_stats, y_stats, prob);
    json summary;
    summary["best_epoch"] = r.best_epoch;
    summary["val_rmse"] = metrics.rmse;
    summary["val_avg_ll"] = metrics.avg_ll;
    summary["per_epoch_val_ll"] = r.per_epoch_val_ll;
    summary["seed"] = cfg.seed;
    summary["config"] = cfg.resolved;
    write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    std::cout << "toy1d: best epoch " << r.best_epoch << ", validation RMSE " << metrics.rmse
              << ", avg LL " << metrics.avg_ll << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// regress
// ---------------------------------------------------------------------------

int run_regress(const RunConfig& cfg, const std::string& dataset_name,
                const std::string& data_dir, const std::string& out_dir, unsigned jobs) {
    if (cfg.task != "regression") throw ConfigError("regress needs task = regression");
    if (cfg.generator != "csv") throw ConfigError("regress needs data.generator = csv");
    fs::create_directories(out_dir);

    std::string file = cfg.file;
    if (file.empty() && !dataset_name.empty()) file = dataset_name + ".csv";
    if (file.empty()) throw ConfigError("no dataset file: set data.file or pass --dataset");
    const std::string path = resolve_path(data_dir, file);
    std::vector<std::size_t> targets = cfg.target_columns;
    if (targets.empty()) {
        const Dataset probe = load_csv(path, {0}, {});  // target defaults to the last column
        targets = {probe.x.cols};
    }
    const Dataset all = load_csv(path, targets, cfg.ignore_columns);

    const auto splits = kfold(all.n(), cfg.folds, derive_seed(cfg.seed, 10), cfg.train_fraction);
    NetworkArch arch;
    arch.input_dim = all.x.cols;
    arch.hidden_widths = cfg.hidden_widths;
    arch.output_dim = all.y.cols;
    arch.activation = activation_from_string(cfg.activation);
    const InitSpec init{cfg.weight_gain, cfg.bias_var};
    const auto mode = normalization_mode(cfg.normalization);

    struct FoldResult {
        double rmse = 0, ll = 0, sigma_v = 0, seconds = 0;
    };
    std::vector<FoldResult> results(splits.size());
    tagi::detail::parallel_for(splits.size(), jobs, [&](std::size_t f) {
        const auto t0 = std::chrono::steady_clock::now();
        const Dataset train_raw = all.subset(splits[f].train);
        const Dataset test_raw = all.subset(splits[f].test);
        const auto x_stats = NormStats::fit(train_raw.x, mode);
        const auto y_stats = NormStats::fit(train_raw.y, mode);
        Dataset tr = train_raw;
        x_stats.apply(tr.x);
        y_stats.apply(tr.y);

        Problem prob;
        prob.sigma_v = cfg.sigma_v;
        TrainConfig tc;
        tc.epochs = cfg.epochs;
        tc.batch_size = cfg.batch_size;
        tc.folds = cfg.cv_folds;
        tc.sigma_v_grid = cfg.sigma_v_grid;
        tc.shuffle_seed = derive_seed(cfg.seed, 100 + f);
        if (!cfg.sigma_v_grid.empty())
            prob.sigma_v =
                select_sigma_v(arch, tr, prob, tc, init, derive_seed(cfg.seed, 200 + f), 1);

        auto params = init_network(arch, init, derive_seed(cfg.seed, 300 + f));
        Workspace ws;
        for (std::size_t e = 1; e <= tc.epochs; ++e)
            train_epoch(params, arch.activation, tr, prob, tc, e, ws);
        const auto m = evaluate(params, arch.activation, test_raw, x_stats, y_stats, prob);
        results[f].rmse = m.rmse;
        results[f].ll = m.avg_ll;
        results[f].sigma_v = prob.sigma_v;
        results[f].seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });

    std::vector<double> rmses, lls;
    json fold_rows = json::array();
    for (std::size_t f = 0; f < results.size(); ++f) {
        rmses.push_back(results[f].rmse);
        lls.push_back(results[f].ll);
        fold_rows.push_back({{"fold", f},
                             {"rmse", results[f].rmse},
                             {"avg_ll", results[f].ll},
                             {"sigma_v", results[f].sigma_v},
                             {"seconds", results[f].seconds}});
    }
    json out;
    out["dataset"] = dataset_name.empty() ? file : dataset_name;
    out["observations"] = all.n();
    out["features"] = all.x.cols;
    out["folds"] = fold_rows;
    out["rmse_mean"] = mean_of(rmses);
    out["rmse_std"] = sample_std(rmses);
    out["ll_mean"] = mean_of(lls);
    out["ll_std"] = sample_std(lls);
    out["seed"] = cfg.seed;
    out["config"] = cfg.resolved;
    write_text(fs::path(out_dir) / "metrics.json", out.dump(2) + "\n");
    std::cout << "regress " << out["dataset"].get<std::string>() << ": RMSE "
              << out["rmse_mean"].get<double>() << " +- " << out["rmse_std"].get<double>()
              << ", LL " << out["ll_mean"].get<double>() << " +- "
              << out["ll_std"].get<double>() << " over " << splits.size() << " folds\n";
    return 0;
}

// ---------------------------------------------------------------------------
// mnist
// ---------------------------------------------------------------------------

struct TestEval {
    double error = 0;
    double median_true_prob = 0;
    std::vector<std::array<double, 3>> phi_fractions;  // correct/incorrect/unknown per phi
};

std::vector<double> phi_grid() {
    std::vector<double> g;
    for (int i = 0; i < 45; ++i) g.push_back(0.1 + (0.999 - 0.1) * i / 44.0);
    return g;
}

TestEval evaluate_classifier(const std::vector<LayerParams>& params, ActivationKind act,
                             const Dataset& test, const Problem& prob, unsigned jobs) {
    const auto phis = phi_grid();
    const std::size_t n = test.n();
    std::vector<double> true_prob(n);
    std::vector<std::size_t> argmax(n);
    std::vector<double> maxprob(n);
    const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(64, n));
    const HeadConfig head{prob.alpha, prob.sigma_v};
    tagi::detail::parallel_for(chunks, jobs, [&](std::size_t chunk) {
        Workspace ws;
        const std::size_t lo = chunk * n / chunks;
        const std::size_t hi = (chunk + 1) * n / chunks;
        for (std::size_t i = lo; i < hi; ++i) {
            tagi::detail::load_input(test, i, ws.input);
            forward(params, act, ws.input, ws.caches);
            GaussianVector pred(ws.caches.back().mu_z, ws.caches.back().var_z);
            for (double& v : pred.var) v += prob.sigma_v * prob.sigma_v;
            const auto p = class_marginals(pred, head, prob.tree);
            std::size_t best = 0;
            for (std::size_t c = 1; c < p.size(); ++c)
                if (p[c] > p[best]) best = c;
            argmax[i] = best;
            maxprob[i] = p[best];
            true_prob[i] = p[static_cast<std::size_t>(test.labels[i])];
        }
    });
    TestEval ev;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (argmax[i] != static_cast<std::size_t>(test.labels[i])) ++wrong;
    ev.error = static_cast<double>(wrong) / static_cast<double>(n);
    std::vector<double> sorted = true_prob;
    std::sort(sorted.begin(), sorted.end());
    ev.median_true_prob = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    ev.phi_fractions.resize(phis.size());
    for (std::size_t pi = 0; pi < phis.size(); ++pi) {
        std::size_t correct = 0, incorrect = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (maxprob[i] < phis[pi]) continue;
            if (argmax[i] == static_cast<std::size_t>(test.labels[i]))
                ++correct;
            else
                ++incorrect;
        }
        ev.phi_fractions[pi] = {static_cast<double>(correct) / static_cast<double>(n),
                                static_cast<double>(incorrect) / static_cast<double>(n),
                                static_cast<double>(n - correct - incorrect) /
                                    static_cast<double>(n)};
    }
    return ev;
}

int run_mnist(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              std::size_t limit, unsigned jobs) {
    if (cfg.task != "classification") throw ConfigError("mnist needs task = classification");
    if (cfg.generator != "mnist") throw ConfigError("mnist needs data.generator = mnist");
    fs::create_directories(out_dir);

    Dataset train_all = load_mnist_idx(resolve_path(data_dir, cfg.train_images),
                                       resolve_path(data_dir, cfg.train_labels));
    const Dataset test = load_mnist_idx(resolve_path(data_dir, cfg.test_images),
                                        resolve_path(data_dir, cfg.test_labels));

    Problem prob;
    prob.task = Task::classification;
    prob.tree = ClassTree::make(10);
    prob.alpha = cfg.alpha;
    prob.sigma_v = cfg.sigma_v;

    NetworkArch arch;
    arch.input_dim = train_all.x.cols;
    arch.hidden_widths = cfg.hidden_widths;
    arch.output_dim = prob.tree.output_units;
    arch.activation = activation_from_string(cfg.activation);
    const InitSpec init{cfg.weight_gain, cfg.bias_var};

    // Hold out a validation slice when the run selects sigma_v or early-stops.
    const bool need_val = cfg.early_stop || cfg.sigma_v_grid.size() > 1;
    Dataset train, val;
    if (need_val && cfg.validation_fraction > 0.0) {
        std::vector<std::size_t> idx(train_all.n());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, 60));
        rng.shuffle(idx);
        const auto n_val = static_cast<std::size_t>(
            std::llround(cfg.validation_fraction * static_cast<double>(train_all.n())));
        val = train_all.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val)});
        train = train_all.subset({idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end()});
        train_all = Dataset{};  // the 60k x 784 original is no longer needed
    } else {
        train = std::move(train_all);
    }

    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.early_stop = cfg.early_stop;
    tc.shuffle_seed = derive_seed(cfg.seed, 61);

    if (cfg.sigma_v_grid.size() > 1) {
        double best_ll = -std::numeric_limits<double>::infinity();
        double best_sv = cfg.sigma_v_grid.front();
        for (double cand : cfg.sigma_v_grid) {
            Problem p = prob;
            p.sigma_v = cand;
            const auto r = fit(arch, train, val, p, tc, init, derive_seed(cfg.seed, 62));
            const double ll =
                *std::max_element(r.per_epoch_val_ll.begin(), r.per_epoch_val_ll.end());
            if (ll > best_ll || (ll == best_ll && cand > best_sv)) {
                best_ll = ll;
                best_sv = cand;
            }
        }
        prob.sigma_v = best_sv;
    } else if (cfg.sigma_v_grid.size() == 1) {
        prob.sigma_v = cfg.sigma_v_grid.front();
    }

    // The first epoch streams through observation-count checkpoints; the
    // decision curves only make sense against the online count.
    const std::size_t stream = limit == 0 ? train.n() : std::min(limit, train.n());
    std::vector<std::size_t> checkpoints;
    for (std::size_t d : {std::size_t{0}, std::size_t{60}, std::size_t{600}, std::size_t{6000},
                          std::size_t{60000}})
        if (d <= stream) checkpoints.push_back(d);
    if (checkpoints.back() != stream) checkpoints.push_back(stream);

    auto params = init_network(arch, init, derive_seed(cfg.seed, 63));
    Workspace ws;
    const auto phis = phi_grid();
    std::ostringstream curve, ckpt_csv;
    curve << "observations,phi,frac_correct,frac_incorrect,frac_unknown\n";
    ckpt_csv << "observations,test_error,median_true_class_prob\n";
    json checkpoint_rows = json::array();
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        if (c > 0)
            train_range(params, arch.activation, train, prob, tc, 1, checkpoints[c - 1],
                        checkpoints[c], ws);
        const auto ev = evaluate_classifier(params, arch.activation, test, prob, jobs);
        for (std::size_t pi = 0; pi < phis.size(); ++pi)
            curve << checkpoints[c] << "," << phis[pi] << "," << ev.phi_fractions[pi][0] << ","
                  << ev.phi_fractions[pi][1] << "," << ev.phi_fractions[pi][2] << "\n";
        ckpt_csv << checkpoints[c] << "," << ev.error << "," << ev.median_true_prob << "\n";
        checkpoint_rows.push_back({{"observations", checkpoints[c]},
                                   {"test_error", ev.error},
                                   {"median_true_class_prob", ev.median_true_prob}});
        std::cout << "mnist: D=" << checkpoints[c] << " test error " << ev.error
                  << " median true-class prob " << ev.median_true_prob << "\n";
    }

    // Remaining epochs (if any), with optional early stopping on validation.
    std::size_t best_epoch = 1;
    if (tc.epochs > 1) {
        double best_ll = need_val ? avg_log_likelihood(params, arch.activation, val, prob)
                                  : -std::numeric_limits<double>::infinity();
        auto best_params = params;
        for (std::size_t e = 2; e <= tc.epochs; ++e) {
            train_epoch(params, arch.activation, train, prob, tc, e, ws);
            if (need_val) {
                const double ll = avg_log_likelihood(params, arch.activation, val, prob);
                if (ll > best_ll) {
                    best_ll = ll;
                    best_epoch = e;
                    best_params = params;
                }
            }
        }
        if (cfg.early_stop)
            params = std::move(best_params);
        else
            best_epoch = tc.epochs;
    }

    const auto final_ev = evaluate_classifier(params, arch.activation, test, prob, jobs);
    write_text(fs::path(out_dir) / "decision_curve.csv", curve.str());
    write_text(fs::path(out_dir) / "checkpoints.csv", ckpt_csv.str());
    json summary;
    summary["test_error"] = final_ev.error;
    summary["median_true_class_prob"] = final_ev.median_true_prob;
    summary["sigma_v"] = prob.sigma_v;
    summary["best_epoch"] = best_epoch;
    summary["training_observations"] = stream;
    summary["checkpoints"] = checkpoint_rows;
    summary["seed"] = cfg.seed;
    summary["config"] = cfg.resolved;
    write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    std::cout << "mnist: final test error " << final_ev.error << " (sigma_v " << prob.sigma_v
              << ", epoch " << best_epoch << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Analytical Bayesian neural network training and benchmarks"};
    app.require_subcommand(1);
    std::string data_dir;
    if (const char* env = std::getenv("TAGI_DATA_DIR")) data_dir = env;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--jobs", jobs, "worker threads for folds/grids/chunks");
    app.add_option("--data-dir", data_dir, "dataset root (default: $TAGI_DATA_DIR)");

    auto* mc = app.add_subcommand("moments-check",
                                  "verify the product-moment formulas against Monte Carlo");
    std::size_t mc_samples = 1000000, mc_cases = 100;
    std::uint64_t mc_seed = 42;
    std::string mc_out;
    mc->add_option("--samples", mc_samples, "MC samples per case");
    mc->add_option("--seed", mc_seed, "base seed");
    mc->add_option("--cases", mc_cases, "number of randomized cases");
    mc->add_option("--out", mc_out, "write the JSON report here");

    std::string config_path, out_dir, dataset_name;
    auto* toy = app.add_subcommand("toy1d", "1D cubic regression study");
    toy->add_option("--config", config_path)->required();
    toy->add_option("--out", out_dir)->required();

    auto* reg = app.add_subcommand("regress", "k-fold regression benchmark");
    reg->add_option("--config", config_path)->required();
    reg->add_option("--dataset", dataset_name, "dataset name (resolves <name>.csv)");
    reg->add_option("--out", out_dir)->required();

    auto* mn = app.add_subcommand("mnist", "MNIST online classification");
    std::size_t limit = 0;
    mn->add_option("--config", config_path)->required();
    mn->add_option("--limit", limit, "truncate the training stream (0 = full)");
    mn->add_option("--out", out_dir)->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (mc->parsed()) return run_moments_check(mc_samples, mc_seed, mc_cases, jobs, mc_out);
        const RunConfig cfg = load_config(config_path);
        if (toy->parsed()) return run_toy1d(cfg, out_dir);
        if (reg->parsed()) return run_regress(cfg, dataset_name, data_dir, out_dir, jobs);
        if (mn->parsed()) return run_mnist(cfg, data_dir, out_dir, limit, jobs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
