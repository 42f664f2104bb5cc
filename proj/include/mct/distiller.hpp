#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mct/datasets.hpp"
#include "mct/model.hpp"
#include "mct/serialize.hpp"
#include "mct/trajectory_store.hpp"

namespace mct {

// Learnable synthetic set: ipc examples per class with fixed class-major
// labels, plus the learnable student learning rate.
struct SyntheticDataset {
    Tensor features;              // [C*ipc, feature_dim]
    std::vector<int64_t> labels;  // fixed: label of slot c*ipc+i is c
    double alpha = 0.0;           // student lr, kept positive
    int ipc = 0;
    int num_classes = 0;
};

enum class DistillMode { Mtt, Mct };

struct DistillConfig {
    DistillMode mode = DistillMode::Mct;
    int expert_steps = 2;    // M
    int student_steps = 10;  // N
    double max_start_epoch = 10.0;
    double outer_lr_features = 0.05;
    double outer_lr_alpha = 0.005;
    long outer_iters = 1000;
    long eval_every = 50;
    bool continuous_sampling = true;  // MCT only
    uint64_t seed = 0;

    void validate(int K) const {
        if (expert_steps < 1) throw ValueError("distill config: M must be >= 1");
        if (student_steps < 1) throw ValueError("distill config: N must be >= 1");
        if (outer_iters < 0) throw ValueError("distill config: outer_iters must be >= 0");
        if (eval_every < 1) throw ValueError("distill config: eval_every must be >= 1");
        if (max_start_epoch < 0.0 || max_start_epoch > static_cast<double>(K - expert_steps))
            throw ValueError(strfmt("distill config: max_start_epoch must lie in [0, K-M] = [0, %d]",
                                    K - expert_steps));
    }
};

struct EvalPoint {
    long iteration = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
};

struct DistillReport {
    std::vector<double> loss_trace;
    std::vector<double> alpha_trace;
    std::vector<EvalPoint> eval_trace;
    double wall_seconds = 0.0;
    long convergence_iteration = -1;  // filled from eval_trace by the harness
};

// ---- matching losses ----

namespace detail {

// denominator accumulated per group, then folded left across groups, the
// same association the tape expression uses for the numerator
inline double squared_distance(const ParamVector& a, const ParamVector& b) {
    double total = 0.0;
    for (size_t g = 0; g < a.group_count(); ++g) {
        double sub = 0.0;
        const auto& av = a.groups[g].value.data;
        const auto& bv = b.groups[g].value.data;
        for (size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            sub += d * d;
        }
        total += sub;
    }
    return total;
}

}  // namespace detail

// |theta_end - theta_target|^2 / |theta_start - theta_target|^2 over the
// whole flattened parameter vector; differentiable w.r.t. theta_end.
inline Var matching_loss(Tape& tape, const std::vector<Var>& student_end, const ParamVector& target,
                         const ParamVector& start) {
    if (student_end.size() != target.group_count() || !target.same_layout(start))
        throw ShapeError("matching_loss: parameter layout mismatch");
    const double denom = detail::squared_distance(start, target);
    if (denom == 0.0) throw ValueError("degenerate segment: start equals target");

    Var num;
    for (size_t g = 0; g < student_end.size(); ++g) {
        Var term = sum(square(sub(student_end[g], tape.put(target.groups[g].value))));
        num = (g == 0) ? term : add(num, term);
    }
    return div(num, tape.put(Tensor::scalar(denom)));
}

// Same loss written over update vectors: |V_S - V_T|^2 / |V_T|^2 with
// V_S = theta_end - theta_start and V_T = theta_target - theta_start.
inline Var reformulated_loss(Tape& tape, const std::vector<Var>& student_end, const ParamVector& target,
                             const ParamVector& start) {
    if (student_end.size() != target.group_count() || !target.same_layout(start))
        throw ShapeError("reformulated_loss: parameter layout mismatch");
    const double denom = detail::squared_distance(target, start);
    if (denom == 0.0) throw ValueError("degenerate segment: start equals target");

    Var num;
    for (size_t g = 0; g < student_end.size(); ++g) {
        Tensor expert_update = target.groups[g].value;  // V_T for this group
        const auto& sv = start.groups[g].value.data;
        for (size_t i = 0; i < expert_update.data.size(); ++i) expert_update.data[i] -= sv[i];

        Var student_update = sub(student_end[g], tape.put(start.groups[g].value));
        Var term = sum(square(sub(student_update, tape.put(std::move(expert_update)))));
        num = (g == 0) ? term : add(num, term);
    }
    return div(num, tape.put(Tensor::scalar(denom)));
}

// N full-batch SGD steps on the synthetic features, all on one tape, so the
// returned parameters are differentiable w.r.t. the features var and the
// alpha var (through the gradients of every step).
inline std::vector<Var> inner_unroll(Tape& tape, const ParamVector& theta_start, Var features,
                                     const std::vector<int64_t>& labels, int64_t num_classes, Var alpha,
                                     int steps) {
    if (steps < 1) throw ValueError("inner_unroll: N must be >= 1");
    std::vector<Var> params = lift(tape, theta_start);
    for (int n = 0; n < steps; ++n) {
        Var loss = forward_loss(tape, params, features, labels, num_classes);
        if (!std::isfinite(loss.value().item()))
            throw NumericError(strfmt("inner unroll: non-finite loss at step %d", n));
        params = sgd_step(tape, params, tape.grad(loss, params), alpha);
    }
    return params;
}

// ---- start sampling ----

struct StartSample {
    ParamVector start;
    ParamVector target;
    double c = 0.0;
};

inline StartSample sample_start_mtt(const MttBuffer& buf, const DistillConfig& cfg, Rng& rng) {
    const int K = buf.K();
    const int max_start = static_cast<int>(cfg.max_start_epoch);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const int t = static_cast<int>(rng.uniform_int(0, max_start));
        const int target = std::min(t + cfg.expert_steps, K);
        StartSample s{buf.checkpoints[static_cast<size_t>(t)], buf.checkpoints[static_cast<size_t>(target)],
                      static_cast<double>(t)};
        if (detail::squared_distance(s.start, s.target) > 0.0) return s;
    }
    throw ValueError("sample_start: 10 consecutive degenerate segments (start equals target)");
}

inline StartSample sample_start_mct(const ConvexTrajectory& traj, const DistillConfig& cfg, Rng& rng) {
    const double K = static_cast<double>(traj.K);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double c = cfg.continuous_sampling
                             ? rng.uniform(0.0, cfg.max_start_epoch)
                             : static_cast<double>(rng.uniform_int(0, static_cast<int64_t>(cfg.max_start_epoch)));
        const double target_c = std::min(c + static_cast<double>(cfg.expert_steps), K);
        StartSample s{sample_continuous(traj, c), sample_continuous(traj, target_c), c};
        if (detail::squared_distance(s.start, s.target) > 0.0) return s;
    }
    throw ValueError("sample_start: 10 consecutive degenerate segments (start equals target)");
}

// ---- outer loop ----

// Periodic evaluation hook; receives a snapshot of the synthetic set and
// returns the accuracy statistics to record.
using EvalFn = std::function<EvalPoint(const SyntheticDataset&, long iteration)>;

// ipc seeded real examples per class, class-major
inline SyntheticDataset init_synthetic(const LabeledDataset& train, int ipc, double alpha_init,
                                       uint64_t seed) {
    if (ipc < 1) throw ValueError("init_synthetic: ipc must be >= 1");
    Rng rng(derive_seed(seed, "distill.init"));
    SyntheticDataset synth;
    synth.ipc = ipc;
    synth.num_classes = train.num_classes;
    synth.alpha = alpha_init;
    synth.features = Tensor::zeros({static_cast<int64_t>(train.num_classes) * ipc, train.feature_dim()});

    for (int64_t c = 0; c < train.num_classes; ++c) {
        std::vector<int64_t> pool = train.indices_of_class(c);
        if (static_cast<int>(pool.size()) < ipc)
            throw ValueError(strfmt("init_synthetic: class %lld has %zu examples, ipc=%d", (long long)c,
                                    pool.size(), ipc));
        std::vector<int64_t> perm = rng.permutation(static_cast<int64_t>(pool.size()));
        for (int i = 0; i < ipc; ++i) {
            const int64_t src = pool[static_cast<size_t>(perm[static_cast<size_t>(i)])];
            const int64_t row = c * ipc + i;
            for (int64_t j = 0; j < train.feature_dim(); ++j) synth.features.at(row, j) = train.features.at(src, j);
            synth.labels.push_back(c);
        }
    }
    return synth;
}

namespace detail {

template <typename SampleFn>
std::pair<SyntheticDataset, DistillReport> distill_core(int num_experts, int K, SampleFn sample,
                                                        const LabeledDataset& train, const ModelSpec& spec,
                                                        const DistillConfig& cfg, int ipc, double alpha_init,
                                                        const EvalFn& eval_fn) {
    cfg.validate(K);
    if (num_experts < 1) throw ValueError("distill: need at least one expert");
    if (train.feature_dim() != spec.input_dim) throw ValueError("distill: dataset/spec dim mismatch");

    SyntheticDataset synth = init_synthetic(train, ipc, alpha_init, cfg.seed);
    DistillReport report;
    report.loss_trace.reserve(static_cast<size_t>(cfg.outer_iters));
    Rng rng(derive_seed(cfg.seed, "distill.loop"));

    const auto t0 = std::chrono::steady_clock::now();
    for (long iter = 0; iter < cfg.outer_iters; ++iter) {
        try {
            const int expert = static_cast<int>(rng.uniform_int(0, num_experts - 1));
            StartSample s = sample(expert, rng);

            Tape tape;
            Var features = tape.put(synth.features);
            Var alpha = tape.put(Tensor::scalar(synth.alpha));
            auto student_end =
                inner_unroll(tape, s.start, features, synth.labels, spec.num_classes, alpha, cfg.student_steps);
            Var loss = matching_loss(tape, student_end, s.target, s.start);
            auto grads = tape.grad(loss, {features, alpha});

            const Tensor& gf = grads[0].value();
            for (size_t i = 0; i < synth.features.data.size(); ++i)
                synth.features.data[i] -= cfg.outer_lr_features * gf.data[i];
            synth.alpha -= cfg.outer_lr_alpha * grads[1].value().item();
            synth.alpha = std::max(synth.alpha, 1e-6);

            report.loss_trace.push_back(loss.value().item());
            report.alpha_trace.push_back(synth.alpha);
        } catch (const Error& e) {
            throw Error(strfmt("outer iteration %ld: %s", iter, e.what()));
        }
        if (eval_fn && (iter + 1) % cfg.eval_every == 0) {
            EvalPoint p = eval_fn(synth, iter + 1);
            p.iteration = iter + 1;
            report.eval_trace.push_back(p);
        }
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(synth), std::move(report)};
}

}  // namespace detail

inline std::pair<SyntheticDataset, DistillReport> distill(const std::vector<MttBuffer>& experts,
                                                          const LabeledDataset& train, const ModelSpec& spec,
                                                          const DistillConfig& cfg, int ipc, double alpha_init,
                                                          const EvalFn& eval_fn = {}) {
    if (experts.empty()) throw ValueError("distill: need at least one expert");
    for (const auto& e : experts)
        if (e.K() != experts.front().K()) throw ValueError("distill: experts disagree on K");
    return detail::distill_core(
        static_cast<int>(experts.size()), experts.front().K(),
        [&](int e, Rng& rng) { return sample_start_mtt(experts[static_cast<size_t>(e)], cfg, rng); }, train,
        spec, cfg, ipc, alpha_init, eval_fn);
}

inline std::pair<SyntheticDataset, DistillReport> distill(const std::vector<ConvexTrajectory>& experts,
                                                          const LabeledDataset& train, const ModelSpec& spec,
                                                          const DistillConfig& cfg, int ipc, double alpha_init,
                                                          const EvalFn& eval_fn = {}) {
    if (experts.empty()) throw ValueError("distill: need at least one expert");
    for (const auto& e : experts)
        if (e.K != experts.front().K) throw ValueError("distill: experts disagree on K");
    return detail::distill_core(
        static_cast<int>(experts.size()), experts.front().K,
        [&](int e, Rng& rng) { return sample_start_mct(experts[static_cast<size_t>(e)], cfg, rng); }, train,
        spec, cfg, ipc, alpha_init, eval_fn);
}

// ---- synthetic set file ("SYND", version 1) ----
//
// magic, u8 version, u32 num_classes, u32 ipc, u32 feature_dim,
// u32 labels[C*ipc], f64 features row-major, f64 alpha.

inline std::vector<uint8_t> serialize_synthetic(const SyntheticDataset& synth) {
    ByteWriter w;
    w.magic("SYND");
    w.u8(1);
    w.u32(static_cast<uint32_t>(synth.num_classes));
    w.u32(static_cast<uint32_t>(synth.ipc));
    w.u32(static_cast<uint32_t>(synth.features.cols()));
    for (int64_t y : synth.labels) w.u32(static_cast<uint32_t>(y));
    for (double v : synth.features.data) w.f64(v);
    w.f64(synth.alpha);
    return w.buf;
}

inline SyntheticDataset deserialize_synthetic(std::vector<uint8_t> bytes, const std::string& name) {
    ByteReader r(std::move(bytes), name);
    r.expect_magic("SYND");
    const uint8_t version = r.u8();
    if (version != 1) throw FormatError(strfmt("%s: unsupported version %u", name.c_str(), version));

    SyntheticDataset synth;
    synth.num_classes = static_cast<int>(r.u32());
    synth.ipc = static_cast<int>(r.u32());
    const int64_t dim = r.u32();
    const int64_t n = static_cast<int64_t>(synth.num_classes) * synth.ipc;
    for (int64_t i = 0; i < n; ++i) synth.labels.push_back(r.u32());
    synth.features = Tensor::zeros({n, dim});
    for (double& v : synth.features.data) v = r.f64();
    synth.alpha = r.f64();
    r.expect_end();
    return synth;
}

inline void write_synthetic(const std::string& path, const SyntheticDataset& synth) {
    write_file(path, serialize_synthetic(synth));
}

inline SyntheticDataset read_synthetic(const std::string& path) {
    return deserialize_synthetic(read_file(path), path);
}

// Report CSV: one row per outer iteration; the eval column is filled on
// iterations where an evaluation ran.
inline void write_report_csv(const std::string& path, const DistillReport& report) {
    std::string out = "iteration,loss,alpha,eval_accuracy\n";
    size_t next_eval = 0;
    for (size_t i = 0; i < report.loss_trace.size(); ++i) {
        const long iter = static_cast<long>(i) + 1;
        out += strfmt("%ld,%.17g,%.17g", iter, report.loss_trace[i], report.alpha_trace[i]);
        if (next_eval < report.eval_trace.size() && report.eval_trace[next_eval].iteration == iter) {
            out += strfmt(",%.17g", report.eval_trace[next_eval].mean_acc);
            ++next_eval;
        } else {
            out += ",";
        }
        out += "\n";
    }
    std::vector<uint8_t> bytes(out.begin(), out.end());
    write_file(path, bytes);
}

}  // namespace mct
