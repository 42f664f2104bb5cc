#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <optional>
#include <thread>
#include <vector>

#include "mct/distiller.hpp"
#include "mct/model.hpp"

namespace mct {

struct EvalReport {
    std::vector<double> accuracies;  // one per repeat
    double mean = 0.0;
    double stdev = 0.0;  // sample std, 0 for a single repeat
};

namespace detail {

inline double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

// full-batch SGD on the synthetic set with its learned alpha
inline ParamVector retrain(const SyntheticDataset& synth, const ModelSpec& spec, int train_iters,
                           uint64_t init_seed) {
    ParamVector params = init_params(spec, init_seed);
    for (int it = 0; it < train_iters; ++it) {
        Tape tape;
        auto vars = lift(tape, params);
        Var loss = forward_loss(tape, vars, tape.put(synth.features), synth.labels, spec.num_classes);
        if (!std::isfinite(loss.value().item()))
            throw NumericError(strfmt("evaluation retraining: non-finite loss at iteration %d", it));
        auto grads = tape.grad(loss, vars);
        std::vector<Tensor> gt;
        gt.reserve(grads.size());
        for (Var g : grads) gt.push_back(g.value());
        params = sgd_step_numeric(params, gt, synth.alpha);
    }
    return params;
}

}  // namespace detail

// Train `repeats` freshly initialized networks on the synthetic set and
// report their validation accuracies. Repeats run in parallel; results are
// positionally stable, so the outcome is independent of the worker count.
inline EvalReport evaluate_synthetic(const SyntheticDataset& synth, const LabeledDataset& val,
                                     const ModelSpec& spec, int repeats, int train_iters, uint64_t seed) {
    if (repeats < 1) throw ValueError("evaluate_synthetic: repeats must be >= 1");
    if (train_iters < 1) throw ValueError("evaluate_synthetic: train_iters must be >= 1");

    EvalReport report;
    report.accuracies.assign(static_cast<size_t>(repeats), 0.0);
    std::vector<std::string> errors(static_cast<size_t>(repeats));
    std::atomic<int> next{0};

    auto worker = [&] {
        for (int r = next.fetch_add(1); r < repeats; r = next.fetch_add(1)) {
            try {
                ParamVector params = detail::retrain(synth, spec, train_iters,
                                                     derive_seed(seed, "eval.repeat", static_cast<uint64_t>(r)));
                report.accuracies[static_cast<size_t>(r)] = accuracy(params, val);
            } catch (const std::exception& e) {
                errors[static_cast<size_t>(r)] = e.what();
            }
        }
    };

    const int workers = std::min(thread_count(), repeats);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (int r = 0; r < repeats; ++r)
        if (!errors[static_cast<size_t>(r)].empty())
            throw Error(strfmt("eval repeat %d: %s", r, errors[static_cast<size_t>(r)].c_str()));

    for (double a : report.accuracies) report.mean += a;
    report.mean /= static_cast<double>(repeats);
    report.stdev = detail::sample_std(report.accuracies);
    return report;
}

// Seeded per-class sample of ipc real examples, evaluated exactly like a
// distilled set. Selected indices are sorted, so taking every example
// reproduces the full set in class-major order.
inline double random_subset_baseline(const LabeledDataset& train, int ipc, const LabeledDataset& val,
                                     const ModelSpec& spec, int repeats, int train_iters, uint64_t seed,
                                     double lr) {
    SyntheticDataset subset;
    subset.ipc = ipc;
    subset.num_classes = train.num_classes;
    subset.alpha = lr;
    subset.features = Tensor::zeros({static_cast<int64_t>(train.num_classes) * ipc, train.feature_dim()});

    Rng rng(derive_seed(seed, "baseline.pick"));
    for (int64_t c = 0; c < train.num_classes; ++c) {
        std::vector<int64_t> pool = train.indices_of_class(c);
        if (static_cast<int>(pool.size()) < ipc)
            throw ValueError(strfmt("baseline: class %lld has %zu examples, ipc=%d", (long long)c, pool.size(), ipc));
        std::vector<int64_t> perm = rng.permutation(static_cast<int64_t>(pool.size()));
        std::vector<int64_t> picked(perm.begin(), perm.begin() + ipc);
        std::sort(picked.begin(), picked.end());
        for (int i = 0; i < ipc; ++i) {
            const int64_t src = pool[static_cast<size_t>(picked[static_cast<size_t>(i)])];
            for (int64_t j = 0; j < train.feature_dim(); ++j)
                subset.features.at(c * ipc + i, j) = train.features.at(src, j);
            subset.labels.push_back(c);
        }
    }
    return evaluate_synthetic(subset, val, spec, repeats, train_iters, seed).mean;
}

// Earliest recorded point after which accuracy stays within epsilon of the
// trace maximum; epsilon is in the same units as the accuracies. Returns
// nullopt for traces that never settle.
inline std::optional<long> convergence_iteration(const std::vector<EvalPoint>& trace, double epsilon = 2.0) {
    if (trace.empty()) throw ValueError("convergence_iteration: empty trace");
    double max_acc = trace.front().mean_acc;
    for (const auto& p : trace) max_acc = std::max(max_acc, p.mean_acc);

    // suffix minima locate the earliest index from which nothing dips
    std::vector<double> suffix_min(trace.size());
    double cur = trace.back().mean_acc;
    for (size_t i = trace.size(); i-- > 0;) {
        cur = std::min(cur, trace[i].mean_acc);
        suffix_min[i] = cur;
    }
    for (size_t i = 0; i < trace.size(); ++i)
        if (max_acc - suffix_min[i] < epsilon) return trace[i].iteration;
    return std::nullopt;
}

// Sample standard deviation of the last `tail` recorded accuracies.
inline double stability_metric(const std::vector<EvalPoint>& trace, int tail) {
    if (tail < 2) throw ValueError("stability_metric: tail must be >= 2");
    if (static_cast<size_t>(tail) > trace.size()) throw ValueError("stability_metric: tail exceeds trace length");
    std::vector<double> xs;
    for (size_t i = trace.size() - static_cast<size_t>(tail); i < trace.size(); ++i)
        xs.push_back(trace[i].mean_acc);
    return detail::sample_std(xs);
}

// ---- PCA of trajectory waypoints ----

struct PcaResult {
    std::vector<std::array<double, 2>> projections;      // [T x 2]
    std::array<std::vector<double>, 2> components;       // unit directions
    std::array<double, 2> component_variance = {0, 0};   // |X v|^2 per component
    std::vector<double> one_minus_val_acc;               // empty when unknown
};

// Top-2 principal directions of the mean-centered flattened waypoints via
// power iteration with deflation (tolerance 1e-9, at most 1000 iterations).
inline PcaResult pca_project_trajectory(const std::vector<ParamVector>& waypoints,
                                        const std::vector<double>& val_accuracy = {}, uint64_t seed = 0) {
    if (waypoints.size() < 3) throw ValueError("pca: need at least 3 waypoints");
    if (!val_accuracy.empty() && val_accuracy.size() != waypoints.size())
        throw ValueError("pca: val accuracy count does not match waypoints");

    const size_t T = waypoints.size();
    std::vector<std::vector<double>> X;
    X.reserve(T);
    for (const auto& w : waypoints) X.push_back(w.flatten());
    const size_t W = X.front().size();

    std::vector<double> mean(W, 0.0);
    for (const auto& row : X)
        for (size_t i = 0; i < W; ++i) mean[i] += row[i];
    for (double& m : mean) m /= static_cast<double>(T);
    double total_var = 0.0;
    for (auto& row : X)
        for (size_t i = 0; i < W; ++i) {
            row[i] -= mean[i];
            total_var += row[i] * row[i];
        }
    if (total_var == 0.0) throw ValueError("pca: all waypoints identical (rank deficient)");

    // centered rows kept for projections; deflation edits a working copy
    const std::vector<std::vector<double>> centered = X;

    PcaResult result;
    Rng rng(derive_seed(seed, "pca"));
    for (int comp = 0; comp < 2; ++comp) {
        std::vector<double> v(W);
        for (double& x : v) x = rng.normal();
        double vn = l2_norm(v);
        for (double& x : v) x /= vn;

        std::vector<double> u(T), w(W);
        for (int it = 0; it < 1000; ++it) {
            for (size_t t = 0; t < T; ++t) u[t] = dot(X[t], v);
            std::fill(w.begin(), w.end(), 0.0);
            for (size_t t = 0; t < T; ++t)
                for (size_t i = 0; i < W; ++i) w[i] += u[t] * X[t][i];
            // re-orthogonalize against earlier components
            for (int prev = 0; prev < comp; ++prev) {
                const double proj = dot(w, result.components[static_cast<size_t>(prev)]);
                for (size_t i = 0; i < W; ++i) w[i] -= proj * result.components[static_cast<size_t>(prev)][i];
            }
            const double wn = l2_norm(w);
            if (wn < 1e-300) break;  // nothing left after deflation
            for (double& x : w) x /= wn;
            double delta_same = 0.0, delta_flip = 0.0;
            for (size_t i = 0; i < W; ++i) {
                delta_same += (w[i] - v[i]) * (w[i] - v[i]);
                delta_flip += (w[i] + v[i]) * (w[i] + v[i]);
            }
            v = w;
            if (std::min(delta_same, delta_flip) < 1e-9 * 1e-9) break;
        }

        result.components[static_cast<size_t>(comp)] = v;
        double var = 0.0;
        for (size_t t = 0; t < T; ++t) {
            const double p = dot(X[t], v);
            var += p * p;
        }
        result.component_variance[static_cast<size_t>(comp)] = var;
        // deflate
        for (size_t t = 0; t < T; ++t) {
            const double p = dot(X[t], v);
            for (size_t i = 0; i < W; ++i) X[t][i] -= p * v[i];
        }
    }

    result.projections.resize(T);
    for (size_t t = 0; t < T; ++t)
        result.projections[t] = {dot(centered[t], result.components[0]), dot(centered[t], result.components[1])};
    if (!val_accuracy.empty())
        for (double a : val_accuracy) result.one_minus_val_acc.push_back(1.0 - a);
    return result;
}

// ---- CSV outputs ----

inline void write_eval_trace_csv(const std::string& path, const std::vector<EvalPoint>& trace) {
    std::string out = "iteration,mean_acc,std_acc\n";
    for (const auto& p : trace) out += strfmt("%ld,%.17g,%.17g\n", p.iteration, p.mean_acc, p.std_acc);
    write_file(path, std::vector<uint8_t>(out.begin(), out.end()));
}

inline void write_pca_csv(const std::string& path, const PcaResult& pca) {
    std::string out = "index,pc1,pc2,one_minus_val_acc\n";
    for (size_t t = 0; t < pca.projections.size(); ++t) {
        out += strfmt("%zu,%.17g,%.17g", t, pca.projections[t][0], pca.projections[t][1]);
        if (!pca.one_minus_val_acc.empty())
            out += strfmt(",%.17g\n", pca.one_minus_val_acc[t]);
        else
            out += ",\n";
    }
    write_file(path, std::vector<uint8_t>(out.begin(), out.end()));
}

struct ComparisonRow {
    std::string method;
    int ipc = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    long convergence_iter = -1;  // -1 when the run never converged
    uint64_t storage_bytes = 0;
};

inline void write_comparison_csv(const std::string& path, const std::vector<ComparisonRow>& rows) {
    std::string out = "method,ipc,mean,std,convergence_iter,storage_bytes\n";
    for (const auto& r : rows)
        out += strfmt("%s,%d,%.17g,%.17g,%ld,%llu\n", r.method.c_str(), r.ipc, r.mean_acc, r.std_acc,
                      r.convergence_iter, (unsigned long long)r.storage_bytes);
    write_file(path, std::vector<uint8_t>(out.begin(), out.end()));
}

}  // namespace mct
