#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mct/datasets.hpp"
#include "mct/rng.hpp"
#include "mct/tape.hpp"

namespace mct {

// Multilayer perceptron with ReLU activations. hidden_widths may be empty,
// which gives a plain linear classifier.
struct ModelSpec {
    int64_t input_dim = 0;
    std::vector<int64_t> hidden_widths;
    int64_t num_classes = 0;

    void validate() const {
        if (input_dim < 1 || num_classes < 1) throw ValueError("model spec: dims must be positive");
        for (int64_t w : hidden_widths)
            if (w < 1) throw ValueError("model spec: hidden widths must be positive");
    }

    // [input, hidden..., classes]
    std::vector<int64_t> layer_dims() const {
        std::vector<int64_t> d;
        d.push_back(input_dim);
        d.insert(d.end(), hidden_widths.begin(), hidden_widths.end());
        d.push_back(num_classes);
        return d;
    }

    int64_t layer_count() const { return static_cast<int64_t>(hidden_widths.size()) + 1; }

    bool operator==(const ModelSpec&) const = default;
};

// Model parameters partitioned into named groups. The group order is fixed
// at construction (weight then bias per layer for MLPs) and is the order
// used everywhere: flattening, checkpoint files, delta norms, beta tables.
struct ParamGroup {
    std::string name;
    Tensor value;
};

struct ParamVector {
    std::vector<ParamGroup> groups;

    size_t group_count() const { return groups.size(); }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& g : groups) n += g.value.numel();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(static_cast<size_t>(param_count()));
        for (const auto& g : groups) flat.insert(flat.end(), g.value.data.begin(), g.value.data.end());
        return flat;
    }

    // Rebuild from a flat vector using this ParamVector's group layout.
    ParamVector unflatten(const std::vector<double>& flat) const {
        if (static_cast<int64_t>(flat.size()) != param_count())
            throw ShapeError(strfmt("unflatten: %zu values for %lld params", flat.size(), (long long)param_count()));
        ParamVector out;
        out.groups.reserve(groups.size());
        size_t pos = 0;
        for (const auto& g : groups) {
            std::vector<double> d(flat.begin() + static_cast<long>(pos),
                                  flat.begin() + static_cast<long>(pos + g.value.data.size()));
            pos += g.value.data.size();
            out.groups.push_back({g.name, Tensor(g.value.shape, std::move(d))});
        }
        return out;
    }

    bool same_layout(const ParamVector& o) const {
        if (groups.size() != o.groups.size()) return false;
        for (size_t i = 0; i < groups.size(); ++i)
            if (groups[i].value.shape != o.groups[i].value.shape) return false;
        return true;
    }
};

// Per-group L2 norms of (a - b).
inline std::vector<double> group_delta_norms(const ParamVector& a, const ParamVector& b) {
    if (!a.same_layout(b)) throw ShapeError("group_delta_norms: layout mismatch");
    std::vector<double> out(a.groups.size());
    for (size_t g = 0; g < a.groups.size(); ++g) {
        double acc = 0.0;
        const auto& av = a.groups[g].value.data;
        const auto& bv = b.groups[g].value.data;
        for (size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            acc += d * d;
        }
        out[g] = std::sqrt(acc);
    }
    return out;
}

// Glorot-uniform weights, zero biases. Weight group for layer l is
// [fan_in, fan_out] row-major, bias group is [1, fan_out].
inline ParamVector init_params(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const auto dims = spec.layer_dims();
    ParamVector params;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        const int64_t fan_in = dims[l], fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w = Tensor::zeros({fan_in, fan_out});
        for (double& v : w.data) v = rng.uniform(-bound, bound);
        params.groups.push_back({strfmt("fc%zu.w", l), std::move(w)});
        params.groups.push_back({strfmt("fc%zu.b", l), Tensor::zeros({1, fan_out})});
    }
    return params;
}

// ---- tape paths (differentiable) ----

inline std::vector<Var> lift(Tape& tape, const ParamVector& params) {
    std::vector<Var> vars;
    vars.reserve(params.groups.size());
    for (const auto& g : params.groups) vars.push_back(tape.put(g.value));
    return vars;
}

inline ParamVector materialize(const ParamVector& layout, const std::vector<Var>& vars) {
    ParamVector out;
    out.groups.reserve(vars.size());
    for (size_t i = 0; i < vars.size(); ++i) out.groups.push_back({layout.groups[i].name, vars[i].value()});
    return out;
}

inline Var forward_logits(Tape& tape, const std::vector<Var>& groups, Var x) {
    if (groups.size() < 2 || groups.size() % 2 != 0)
        throw ShapeError(strfmt("forward: expected weight/bias group pairs, got %zu groups", groups.size()));
    const size_t layers = groups.size() / 2;
    Var ones_m = tape.put(Tensor::ones({x.value().rows(), 1}));
    Var h = x;
    for (size_t l = 0; l < layers; ++l) {
        Var z = add(matmul(h, groups[2 * l]), matmul(ones_m, groups[2 * l + 1]));
        h = (l + 1 < layers) ? relu(z) : z;
    }
    return h;
}

// Mean cross-entropy over the batch; differentiable w.r.t. the parameter
// groups and w.r.t. the features var.
inline Var forward_loss(Tape& tape, const std::vector<Var>& groups, Var x, const std::vector<int64_t>& labels,
                        int64_t num_classes) {
    for (int64_t y : labels)
        if (y < 0 || y >= num_classes)
            throw ValueError(strfmt("forward_loss: label %lld outside [0, %lld)", (long long)y, (long long)num_classes));
    Var logits = forward_logits(tape, groups, x);
    Var picked = gather_rows(log_softmax(logits), labels);
    return neg(mean(picked));
}

// One SGD step, differentiable w.r.t. params, grads and the scalar lr var.
inline std::vector<Var> sgd_step(Tape& tape, const std::vector<Var>& params, const std::vector<Var>& grads,
                                 Var lr) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: params/grads count mismatch");
    std::vector<Var> out;
    out.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        out.push_back(sub(params[i], mul(broadcast_to(lr, grads[i].value().shape), grads[i])));
    return out;
}

// ---- numeric fast paths (no tape) ----

inline Tensor forward_logits_numeric(const ParamVector& params, const Tensor& x) {
    const size_t layers = params.groups.size() / 2;
    Tensor h = x;
    for (size_t l = 0; l < layers; ++l) {
        Tensor z = matmul_numeric(h, params.groups[2 * l].value);
        const Tensor& b = params.groups[2 * l + 1].value;
        for (int64_t i = 0; i < z.rows(); ++i)
            for (int64_t j = 0; j < z.cols(); ++j) z.at(i, j) += b.at(0, j);
        h = (l + 1 < layers) ? relu_numeric(z) : z;
    }
    return h;
}

inline double forward_loss_numeric(const ParamVector& params, const Tensor& x,
                                   const std::vector<int64_t>& labels) {
    Tensor ls = log_softmax_numeric(forward_logits_numeric(params, x));
    double acc = 0.0;
    for (int64_t i = 0; i < ls.rows(); ++i) acc -= ls.at(i, labels[static_cast<size_t>(i)]);
    return acc / static_cast<double>(ls.rows());
}

// Numeric SGD step: theta - lr * grad, groupwise.
inline ParamVector sgd_step_numeric(const ParamVector& params, const std::vector<Tensor>& grads, double lr) {
    ParamVector out = params;
    for (size_t g = 0; g < out.groups.size(); ++g)
        for (size_t i = 0; i < out.groups[g].value.data.size(); ++i)
            out.groups[g].value.data[i] -= lr * grads[g].data[i];
    return out;
}

// Argmax-match fraction; ties resolve to the lowest class index.
inline double accuracy(const ParamVector& params, const Tensor& features, const std::vector<int64_t>& labels) {
    Tensor logits = forward_logits_numeric(params, features);
    int64_t hits = 0;
    for (int64_t i = 0; i < logits.rows(); ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (best == labels[static_cast<size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

inline double accuracy(const ParamVector& params, const LabeledDataset& ds) {
    return accuracy(params, ds.features, ds.labels);
}

}  // namespace mct
