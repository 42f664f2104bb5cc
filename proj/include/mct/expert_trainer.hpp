#pragma once

#include <atomic>
#include <cmath>
#include <thread>
#include <vector>

#include "mct/datasets.hpp"
#include "mct/model.hpp"
#include "mct/rng.hpp"

namespace mct {

struct ExpertConfig {
    int epochs = 20;  // K
    int batch_size = 64;
    double lr = 0.1;  // alpha_T
    int num_experts = 3;
    uint64_t base_seed = 0;
    // also accumulate per-mini-batch step norms per epoch interval
    bool track_minibatch_norms = false;

    void validate() const {
        if (epochs < 1) throw ValueError("expert config: epochs must be >= 1");
        if (batch_size < 1) throw ValueError("expert config: batch_size must be >= 1");
        if (lr < 0.0) throw ValueError("expert config: lr must be >= 0");
        if (num_experts < 1) throw ValueError("expert config: num_experts must be >= 1");
    }
};

// A full expert trajectory: K+1 checkpoints (index 0 is the random init,
// index t the state after epoch t) plus the per-interval, per-group L2 step
// norms the convexification needs.
struct MttBuffer {
    uint32_t id = 0;
    ModelSpec spec;
    std::vector<ParamVector> checkpoints;            // K+1
    std::vector<std::vector<double>> delta_norms;    // K x G
    std::vector<double> val_accuracy;                // K+1 when a val set was given, else empty
    std::vector<std::vector<double>> minibatch_norms;  // K x G when tracked, else empty

    int K() const { return static_cast<int>(checkpoints.size()) - 1; }
    size_t group_count() const { return checkpoints.empty() ? 0 : checkpoints.front().group_count(); }

    void validate() const {
        if (checkpoints.size() < 2) throw ValueError("buffer: needs at least 2 checkpoints");
        for (const auto& c : checkpoints)
            if (!c.same_layout(checkpoints.front())) throw ValueError("buffer: checkpoint layout mismatch");
        if (delta_norms.size() != checkpoints.size() - 1) throw ValueError("buffer: delta_norms rows != K");
        for (const auto& row : delta_norms) {
            if (row.size() != group_count()) throw ValueError("buffer: delta_norms cols != group count");
            for (double v : row)
                if (!(v >= 0.0)) throw ValueError("buffer: negative or NaN delta norm");
        }
    }
};

inline MttBuffer train_expert(const LabeledDataset& train, const LabeledDataset* val, const ModelSpec& spec,
                              const ExpertConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (train.feature_dim() != spec.input_dim)
        throw ValueError(strfmt("train_expert: dataset dim %lld != spec input dim %lld",
                                (long long)train.feature_dim(), (long long)spec.input_dim));

    MttBuffer buf;
    buf.spec = spec;
    ParamVector params = init_params(spec, derive_seed(seed, "expert.init"));
    buf.checkpoints.push_back(params);
    if (val) buf.val_accuracy.push_back(accuracy(params, *val));

    const int64_t n = train.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng order_rng(derive_seed(seed, "expert.epoch", static_cast<uint64_t>(epoch)));
        std::vector<int64_t> perm = order_rng.permutation(n);
        std::vector<double> batch_norm_acc(params.group_count(), 0.0);

        for (int64_t lo = 0; lo < n; lo += cfg.batch_size) {
            const int64_t hi = std::min<int64_t>(lo + cfg.batch_size, n);
            std::vector<int64_t> idx(perm.begin() + lo, perm.begin() + hi);
            auto [x, y] = train.batch(idx);

            Tape tape;
            auto vars = lift(tape, params);
            Var loss = forward_loss(tape, vars, tape.put(x), y, spec.num_classes);
            if (!std::isfinite(loss.value().item()))
                throw NumericError(strfmt("expert training diverged at epoch %d (non-finite loss)", epoch));
            auto grads = tape.grad(loss, vars);
            std::vector<Tensor> gt;
            gt.reserve(grads.size());
            for (Var g : grads) gt.push_back(g.value());

            if (cfg.track_minibatch_norms) {
                for (size_t g = 0; g < gt.size(); ++g) batch_norm_acc[g] += cfg.lr * l2_norm(gt[g].data);
            }
            params = sgd_step_numeric(params, gt, cfg.lr);
        }

        buf.delta_norms.push_back(group_delta_norms(params, buf.checkpoints.back()));
        buf.checkpoints.push_back(params);
        if (val) buf.val_accuracy.push_back(accuracy(params, *val));
        if (cfg.track_minibatch_norms) buf.minibatch_norms.push_back(std::move(batch_norm_acc));
    }
    return buf;
}

// Expert i trains with seed base_seed + i. Results are positionally stable,
// so the outcome is independent of the worker count.
inline std::vector<MttBuffer> train_expert_ensemble(const LabeledDataset& train, const LabeledDataset* val,
                                                    const ModelSpec& spec, const ExpertConfig& cfg) {
    cfg.validate();
    std::vector<MttBuffer> buffers(static_cast<size_t>(cfg.num_experts));
    std::vector<std::string> errors(static_cast<size_t>(cfg.num_experts));
    std::atomic<int> next{0};

    auto worker = [&] {
        for (int i = next.fetch_add(1); i < cfg.num_experts; i = next.fetch_add(1)) {
            try {
                MttBuffer b = train_expert(train, val, spec, cfg, cfg.base_seed + static_cast<uint64_t>(i));
                b.id = static_cast<uint32_t>(i);
                buffers[static_cast<size_t>(i)] = std::move(b);
            } catch (const std::exception& e) {
                errors[static_cast<size_t>(i)] = e.what();
            }
        }
    };

    const int workers = std::min(thread_count(), cfg.num_experts);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (int i = 0; i < cfg.num_experts; ++i)
        if (!errors[static_cast<size_t>(i)].empty())
            throw Error(strfmt("expert %d: %s", i, errors[static_cast<size_t>(i)].c_str()));
    return buffers;
}

}  // namespace mct
