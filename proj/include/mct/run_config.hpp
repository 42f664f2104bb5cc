#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mct/datasets.hpp"
#include "mct/distiller.hpp"
#include "mct/expert_trainer.hpp"
#include "mct/model.hpp"

namespace mct {

// One flat configuration object for the whole pipeline. Serialized as JSON;
// unknown keys are rejected so typos fail loudly instead of silently using
// defaults. Command-line flags override file values.
struct RunConfig {
    uint64_t seed = 0;

    // dataset selection
    std::string dataset = "blobs";  // "blobs" or "idx"
    std::string idx_images, idx_labels, idx_val_images, idx_val_labels;
    bool standardize = false;
    int blob_classes = 4;
    int blob_per_class = 500;
    int blob_val_per_class = 250;
    int blob_dim = 16;
    double blob_spread = 0.35;
    uint64_t data_seed = 1;

    // surrogate model
    std::vector<int64_t> hidden_widths = {64, 64};

    // expert trajectories
    int epochs = 20;
    int batch_size = 64;
    double expert_lr = 0.1;
    int num_experts = 3;
    bool track_minibatch_norms = false;

    // convexification
    std::string anchors = "0,K";

    // distillation
    std::string mode = "mct";
    int ipc = 1;
    int expert_steps = 2;
    int student_steps = 10;
    double max_start_epoch = 10.0;
    double outer_lr_features = 0.05;
    double outer_lr_alpha = 0.005;
    long outer_iters = 1000;
    long eval_every = 50;
    bool continuous_sampling = true;

    // evaluation
    int eval_repeats = 5;
    int eval_train_iters = 300;
    double epsilon_percent = 2.0;
    int stability_tail = 10;
};

using json = nlohmann::ordered_json;

inline json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["dataset"] = c.dataset;
    j["idx_images"] = c.idx_images;
    j["idx_labels"] = c.idx_labels;
    j["idx_val_images"] = c.idx_val_images;
    j["idx_val_labels"] = c.idx_val_labels;
    j["standardize"] = c.standardize;
    j["blob_classes"] = c.blob_classes;
    j["blob_per_class"] = c.blob_per_class;
    j["blob_val_per_class"] = c.blob_val_per_class;
    j["blob_dim"] = c.blob_dim;
    j["blob_spread"] = c.blob_spread;
    j["data_seed"] = c.data_seed;
    j["hidden_widths"] = c.hidden_widths;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["expert_lr"] = c.expert_lr;
    j["num_experts"] = c.num_experts;
    j["track_minibatch_norms"] = c.track_minibatch_norms;
    j["anchors"] = c.anchors;
    j["mode"] = c.mode;
    j["ipc"] = c.ipc;
    j["expert_steps"] = c.expert_steps;
    j["student_steps"] = c.student_steps;
    j["max_start_epoch"] = c.max_start_epoch;
    j["outer_lr_features"] = c.outer_lr_features;
    j["outer_lr_alpha"] = c.outer_lr_alpha;
    j["outer_iters"] = c.outer_iters;
    j["eval_every"] = c.eval_every;
    j["continuous_sampling"] = c.continuous_sampling;
    j["eval_repeats"] = c.eval_repeats;
    j["eval_train_iters"] = c.eval_train_iters;
    j["epsilon_percent"] = c.epsilon_percent;
    j["stability_tail"] = c.stability_tail;
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    const json defaults = to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw ValueError(strfmt("config: unknown key \"%s\"", key.c_str()));
        (void)value;
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("dataset", c.dataset);
    get("idx_images", c.idx_images);
    get("idx_labels", c.idx_labels);
    get("idx_val_images", c.idx_val_images);
    get("idx_val_labels", c.idx_val_labels);
    get("standardize", c.standardize);
    get("blob_classes", c.blob_classes);
    get("blob_per_class", c.blob_per_class);
    get("blob_val_per_class", c.blob_val_per_class);
    get("blob_dim", c.blob_dim);
    get("blob_spread", c.blob_spread);
    get("data_seed", c.data_seed);
    get("hidden_widths", c.hidden_widths);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("expert_lr", c.expert_lr);
    get("num_experts", c.num_experts);
    get("track_minibatch_norms", c.track_minibatch_norms);
    get("anchors", c.anchors);
    get("mode", c.mode);
    get("ipc", c.ipc);
    get("expert_steps", c.expert_steps);
    get("student_steps", c.student_steps);
    get("max_start_epoch", c.max_start_epoch);
    get("outer_lr_features", c.outer_lr_features);
    get("outer_lr_alpha", c.outer_lr_alpha);
    get("outer_iters", c.outer_iters);
    get("eval_every", c.eval_every);
    get("continuous_sampling", c.continuous_sampling);
    get("eval_repeats", c.eval_repeats);
    get("eval_train_iters", c.eval_train_iters);
    get("epsilon_percent", c.epsilon_percent);
    get("stability_tail", c.stability_tail);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    auto bytes = read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(strfmt("%s: %s", path.c_str(), e.what()));
    }
    return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& c) {
    const std::string text = to_json(c).dump(2) + "\n";
    write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

// Materialize the configured dataset as a train/val pair.
inline std::pair<LabeledDataset, LabeledDataset> load_dataset(const RunConfig& c) {
    if (c.dataset == "blobs") {
        return gen_blobs_split(c.blob_classes, c.blob_per_class, c.blob_val_per_class, c.blob_dim,
                               c.blob_spread, c.data_seed);
    }
    if (c.dataset == "idx") {
        if (c.idx_images.empty() || c.idx_labels.empty())
            throw ValueError("config: idx dataset needs idx_images and idx_labels");
        LabeledDataset train = load_idx(c.idx_images, c.idx_labels, c.standardize);
        if (!c.idx_val_images.empty()) {
            LabeledDataset val = load_idx(c.idx_val_images, c.idx_val_labels, c.standardize, "val");
            return {std::move(train), std::move(val)};
        }
        return split(train, 0.8, c.data_seed);
    }
    throw ValueError(strfmt("config: unknown dataset \"%s\"", c.dataset.c_str()));
}

inline ModelSpec model_spec_for(const RunConfig& c, const LabeledDataset& train) {
    return ModelSpec{train.feature_dim(), c.hidden_widths, train.num_classes};
}

inline ExpertConfig expert_config_of(const RunConfig& c) {
    ExpertConfig e;
    e.epochs = c.epochs;
    e.batch_size = c.batch_size;
    e.lr = c.expert_lr;
    e.num_experts = c.num_experts;
    e.base_seed = derive_seed(c.seed, "experts");
    e.track_minibatch_norms = c.track_minibatch_norms;
    return e;
}

inline DistillConfig distill_config_of(const RunConfig& c) {
    DistillConfig d;
    if (c.mode == "mtt")
        d.mode = DistillMode::Mtt;
    else if (c.mode == "mct")
        d.mode = DistillMode::Mct;
    else
        throw ValueError(strfmt("config: mode must be mtt or mct, got \"%s\"", c.mode.c_str()));
    d.expert_steps = c.expert_steps;
    d.student_steps = c.student_steps;
    d.max_start_epoch = c.max_start_epoch;
    d.outer_lr_features = c.outer_lr_features;
    d.outer_lr_alpha = c.outer_lr_alpha;
    d.outer_iters = c.outer_iters;
    d.eval_every = c.eval_every;
    d.continuous_sampling = c.continuous_sampling;
    d.seed = derive_seed(c.seed, "distill");
    return d;
}

// syntax check only: comma-separated integers or the literal K
inline bool anchors_syntax_ok(const std::string& text) {
    size_t pos = 0;
    if (text.empty()) return false;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        std::string tok = text.substr(pos, comma - pos);
        while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
        while (!tok.empty() && tok.back() == ' ') tok.pop_back();
        if (tok.empty()) return false;
        if (tok != "K") {
            for (char ch : tok)
                if (ch < '0' || ch > '9') return false;
        }
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    return true;
}

// "0,6,25,K" -> anchor list with K substituted
inline std::vector<int> parse_anchors(const std::string& text, int K) {
    std::vector<int> anchors;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        std::string tok = text.substr(pos, comma - pos);
        // trim spaces
        while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
        while (!tok.empty() && tok.back() == ' ') tok.pop_back();
        if (tok.empty()) throw ValueError(strfmt("anchors: empty entry in \"%s\"", text.c_str()));
        if (tok == "K") {
            anchors.push_back(K);
        } else {
            size_t used = 0;
            int v;
            try {
                v = std::stoi(tok, &used);
            } catch (const std::exception&) {
                throw ValueError(strfmt("anchors: bad entry \"%s\"", tok.c_str()));
            }
            if (used != tok.size()) throw ValueError(strfmt("anchors: bad entry \"%s\"", tok.c_str()));
            anchors.push_back(v);
        }
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    validate_anchors(anchors, K);
    return anchors;
}

}  // namespace mct
