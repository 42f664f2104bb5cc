// Command-line pipeline: expert generation, convexification, distillation,
// evaluation, PCA projections and the comparison report.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mct/evaluator.hpp"
#include "mct/run_config.hpp"
#include "mct/trajectory_store.hpp"

namespace fs = std::filesystem;
using namespace mct;

namespace {

struct ExpertManifest {
    std::string kind;  // "mtt" or "mct"
    std::vector<std::string> files;  // resolved paths
    std::vector<std::vector<double>> val_accuracy;  // per expert, per checkpoint (mtt only)
};

void write_manifest(const std::string& dir, const std::string& kind, const std::vector<std::string>& names,
                    const std::vector<std::vector<double>>& val_accuracy) {
    json j;
    j["kind"] = kind;
    j["files"] = names;
    if (!val_accuracy.empty()) j["val_accuracy"] = val_accuracy;
    const std::string text = j.dump(2) + "\n";
    write_file((fs::path(dir) / "manifest.json").string(), std::vector<uint8_t>(text.begin(), text.end()));
}

ExpertManifest load_manifest(const std::string& path) {
    auto bytes = read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(strfmt("%s: %s", path.c_str(), e.what()));
    }
    ExpertManifest m;
    m.kind = j.at("kind").get<std::string>();
    const fs::path base = fs::path(path).parent_path();
    for (const auto& f : j.at("files")) m.files.push_back((base / f.get<std::string>()).string());
    if (j.contains("val_accuracy")) m.val_accuracy = j.at("val_accuracy").get<std::vector<std::vector<double>>>();
    return m;
}

void echo_config(const std::string& dir, const RunConfig& cfg) {
    save_run_config((fs::path(dir) / "config.json").string(), cfg);
}

// dataset + seed flags shared by the commands that need data
void add_dataset_flags(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--dataset", cfg.dataset, "dataset selector: blobs or idx");
    cmd->add_option("--blob-classes", cfg.blob_classes)->check(CLI::PositiveNumber);
    cmd->add_option("--blob-per-class", cfg.blob_per_class)->check(CLI::PositiveNumber);
    cmd->add_option("--blob-val-per-class", cfg.blob_val_per_class)->check(CLI::PositiveNumber);
    cmd->add_option("--blob-dim", cfg.blob_dim)->check(CLI::PositiveNumber);
    cmd->add_option("--blob-spread", cfg.blob_spread)->check(CLI::PositiveNumber);
    cmd->add_option("--data-seed", cfg.data_seed);
    cmd->add_option("--idx-images", cfg.idx_images, "IDX image file (training)");
    cmd->add_option("--idx-labels", cfg.idx_labels, "IDX label file (training)");
    cmd->add_option("--idx-val-images", cfg.idx_val_images);
    cmd->add_option("--idx-val-labels", cfg.idx_val_labels);
    cmd->add_flag("--standardize", cfg.standardize, "standardize each feature column");
    cmd->add_option("--hidden", cfg.hidden_widths, "hidden layer widths");
}

EvalFn periodic_eval(const RunConfig& cfg, const LabeledDataset& val, const ModelSpec& spec) {
    return [&cfg, &val, spec](const SyntheticDataset& synth, long iter) {
        EvalReport r = evaluate_synthetic(synth, val, spec, cfg.eval_repeats, cfg.eval_train_iters,
                                          derive_seed(cfg.seed, "periodic-eval", static_cast<uint64_t>(iter)));
        return EvalPoint{iter, r.mean, r.stdev};
    };
}

uint64_t total_file_size(const std::vector<std::string>& files) {
    uint64_t total = 0;
    for (const auto& f : files) total += fs::file_size(f);
    return total;
}

// ---- commands ----

int cmd_gen_experts(const RunConfig& cfg, const std::string& out_dir) {
    auto [train, val] = load_dataset(cfg);
    const ModelSpec spec = model_spec_for(cfg, train);
    auto buffers = train_expert_ensemble(train, &val, spec, expert_config_of(cfg));

    fs::create_directories(out_dir);
    std::vector<std::string> names;
    std::vector<std::vector<double>> val_accs;
    for (size_t i = 0; i < buffers.size(); ++i) {
        const std::string name = strfmt("expert_%03zu.mttb", i);
        write_buffer((fs::path(out_dir) / name).string(), buffers[i]);
        names.push_back(name);
        val_accs.push_back(buffers[i].val_accuracy);
        std::printf("%s  K=%d  final val acc %.4f\n", name.c_str(), buffers[i].K(),
                    buffers[i].val_accuracy.back());
    }
    write_manifest(out_dir, "mtt", names, val_accs);
    echo_config(out_dir, cfg);
    return 0;
}

int cmd_convexify(const RunConfig& cfg, const std::string& in_manifest, const std::string& out_dir) {
    ExpertManifest manifest = load_manifest(in_manifest);
    if (manifest.kind != "mtt") throw ValueError("convexify: input manifest must list MTT buffers");

    fs::create_directories(out_dir);
    std::vector<std::string> names;
    for (const auto& file : manifest.files) {
        try {
            MttBuffer buf = read_buffer(file);
            ConvexTrajectory traj = convexify(buf, parse_anchors(cfg.anchors, buf.K()));
            const std::string name = fs::path(file).stem().string() + ".mctb";
            write_convex((fs::path(out_dir) / name).string(), traj);
            names.push_back(name);
            StorageReport rep = storage_report(buf, traj);
            std::printf("%s -> %s  mtt=%llu bytes  conv=%llu bytes  ratio=%.4f\n",
                        fs::path(file).filename().string().c_str(), name.c_str(),
                        (unsigned long long)rep.bytes_mtt, (unsigned long long)rep.bytes_conv, rep.ratio);
        } catch (const Error& e) {
            throw Error(strfmt("%s: %s", file.c_str(), e.what()));
        }
    }
    write_manifest(out_dir, "mct", names, {});
    echo_config(out_dir, cfg);
    return 0;
}

int cmd_distill(const RunConfig& cfg, const std::string& experts_manifest, const std::string& out_dir) {
    auto [train, val] = load_dataset(cfg);
    const ModelSpec spec = model_spec_for(cfg, train);
    const DistillConfig dcfg = distill_config_of(cfg);
    ExpertManifest manifest = load_manifest(experts_manifest);

    SyntheticDataset synth;
    DistillReport report;
    EvalFn eval_fn = periodic_eval(cfg, val, spec);
    if (dcfg.mode == DistillMode::Mtt) {
        if (manifest.kind != "mtt") throw ValueError("distill --mode mtt needs an MTT buffer manifest");
        std::vector<MttBuffer> experts;
        for (const auto& f : manifest.files) experts.push_back(read_buffer(f));
        std::tie(synth, report) = distill(experts, train, spec, dcfg, cfg.ipc, cfg.expert_lr, eval_fn);
    } else {
        if (manifest.kind != "mct") throw ValueError("distill --mode mct needs a convex trajectory manifest");
        std::vector<ConvexTrajectory> experts;
        for (const auto& f : manifest.files) experts.push_back(read_convex(f));
        std::tie(synth, report) = distill(experts, train, spec, dcfg, cfg.ipc, cfg.expert_lr, eval_fn);
    }

    fs::create_directories(out_dir);
    write_synthetic((fs::path(out_dir) / "synthetic.synd").string(), synth);
    write_report_csv((fs::path(out_dir) / "report.csv").string(), report);
    write_eval_trace_csv((fs::path(out_dir) / "eval_trace.csv").string(), report.eval_trace);

    json meta;
    meta["mode"] = cfg.mode;
    meta["ipc"] = cfg.ipc;
    meta["seed"] = cfg.seed;
    meta["expert_storage_bytes"] = total_file_size(manifest.files);
    meta["alpha"] = synth.alpha;
    if (!report.eval_trace.empty()) {
        meta["final_mean_acc"] = report.eval_trace.back().mean_acc;
        meta["final_std_acc"] = report.eval_trace.back().std_acc;
        auto conv = convergence_iteration(report.eval_trace, cfg.epsilon_percent / 100.0);
        meta["convergence_iteration"] = conv.has_value() ? *conv : -1;
        if (static_cast<size_t>(cfg.stability_tail) <= report.eval_trace.size())
            meta["tail_std"] = stability_metric(report.eval_trace, cfg.stability_tail);
    }
    const std::string text = meta.dump(2) + "\n";
    write_file((fs::path(out_dir) / "run_meta.json").string(), std::vector<uint8_t>(text.begin(), text.end()));
    echo_config(out_dir, cfg);

    std::printf("distilled %d examples/class (%s) in %.1fs", cfg.ipc, cfg.mode.c_str(), report.wall_seconds);
    if (!report.eval_trace.empty())
        std::printf(", final eval %.4f +- %.4f", report.eval_trace.back().mean_acc,
                    report.eval_trace.back().std_acc);
    std::printf("\n");
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& synthetic_path) {
    auto [train, val] = load_dataset(cfg);
    SyntheticDataset synth = read_synthetic(synthetic_path);
    const ModelSpec spec{val.feature_dim(), cfg.hidden_widths, val.num_classes};
    EvalReport r = evaluate_synthetic(synth, val, spec, cfg.eval_repeats, cfg.eval_train_iters,
                                      derive_seed(cfg.seed, "eval"));
    std::printf("accuracy: %.4f +- %.4f (%d repeats, %d train iters)\n", r.mean, r.stdev, cfg.eval_repeats,
                cfg.eval_train_iters);
    (void)train;
    return 0;
}

std::vector<EvalPoint> read_eval_trace_csv(const std::string& path) {
    auto bytes = read_file(path);
    std::string text(bytes.begin(), bytes.end());
    std::vector<EvalPoint> trace;
    size_t pos = text.find('\n');  // skip header
    while (pos != std::string::npos && pos + 1 < text.size()) {
        size_t end = text.find('\n', pos + 1);
        std::string line = text.substr(pos + 1, end == std::string::npos ? std::string::npos : end - pos - 1);
        if (!line.empty()) {
            EvalPoint p;
            if (std::sscanf(line.c_str(), "%ld,%lf,%lf", &p.iteration, &p.mean_acc, &p.std_acc) != 3)
                throw FormatError(strfmt("%s: bad eval trace line \"%s\"", path.c_str(), line.c_str()));
            trace.push_back(p);
        }
        pos = end;
    }
    return trace;
}

int cmd_report(const RunConfig& cfg, const std::vector<std::string>& inputs, const std::string& out_path) {
    std::vector<ComparisonRow> rows;
    for (const auto& dir : inputs) {
        auto bytes = read_file((fs::path(dir) / "run_meta.json").string());
        json meta = json::parse(bytes.begin(), bytes.end());
        auto trace = read_eval_trace_csv((fs::path(dir) / "eval_trace.csv").string());

        ComparisonRow row;
        row.method = meta.at("mode").get<std::string>();
        row.ipc = meta.at("ipc").get<int>();
        row.storage_bytes = meta.at("expert_storage_bytes").get<uint64_t>();
        if (!trace.empty()) {
            row.mean_acc = trace.back().mean_acc;
            row.std_acc = trace.back().std_acc;
            auto conv = convergence_iteration(trace, cfg.epsilon_percent / 100.0);
            row.convergence_iter = conv.has_value() ? *conv : -1;
        }
        rows.push_back(row);
    }
    if (!out_path.empty()) {
        if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
        write_comparison_csv(out_path, rows);
    }
    std::printf("method,ipc,mean,std,convergence_iter,storage_bytes\n");
    for (const auto& r : rows)
        std::printf("%s,%d,%.4f,%.4f,%ld,%llu\n", r.method.c_str(), r.ipc, r.mean_acc, r.std_acc,
                    r.convergence_iter, (unsigned long long)r.storage_bytes);
    return 0;
}

int cmd_pca(const RunConfig& cfg, const std::string& manifest_path, int index, const std::string& source,
            const std::string& out_path) {
    ExpertManifest manifest = load_manifest(manifest_path);
    if (index < 0 || static_cast<size_t>(index) >= manifest.files.size())
        throw ValueError(strfmt("pca: index %d outside manifest with %zu files", index, manifest.files.size()));

    auto [train, val] = load_dataset(cfg);
    std::vector<ParamVector> waypoints;
    if (source == "mtt") {
        if (manifest.kind != "mtt") throw ValueError("pca --source mtt needs an MTT manifest");
        MttBuffer buf = read_buffer(manifest.files[static_cast<size_t>(index)]);
        waypoints = buf.checkpoints;
    } else if (source == "mct") {
        if (manifest.kind != "mct") throw ValueError("pca --source mct needs a convex manifest");
        ConvexTrajectory traj = read_convex(manifest.files[static_cast<size_t>(index)]);
        for (int t = 0; t <= traj.K; ++t) waypoints.push_back(sample_continuous(traj, t));
    } else {
        throw ValueError("pca: --source must be mtt or mct");
    }

    std::vector<double> val_accs;
    for (const auto& w : waypoints) val_accs.push_back(accuracy(w, val));
    PcaResult pca = pca_project_trajectory(waypoints, val_accs, derive_seed(cfg.seed, "pca"));
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    write_pca_csv(out_path, pca);
    std::printf("pca: %zu waypoints, variance %.6g / %.6g\n", waypoints.size(), pca.component_variance[0],
                pca.component_variance[1]);
    (void)train;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;

    // --config is honored before the flag pass so flags override file values
    std::string config_path;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc)
            config_path = argv[i + 1];
        else if (arg.rfind("--config=", 0) == 0)
            config_path = arg.substr(9);
    }
    try {
        if (!config_path.empty()) cfg = load_run_config(config_path);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    CLI::App app{"dataset distillation by trajectory matching (MTT and MCT)"};
    app.require_subcommand(1);
    app.fallthrough();  // lets --config appear after the subcommand name
    app.set_help_all_flag("--help-all");
    std::string config_opt;
    app.add_option("--config", config_opt, "JSON config file; flags take precedence")->expected(1);

    std::string out_dir, in_path, experts_path, synthetic_path, report_out, pca_out = "pca.csv";
    std::string pca_source = "mtt";
    int pca_index = 0;
    std::vector<std::string> report_inputs;

    CLI::App* gen = app.add_subcommand("gen-experts", "train expert trajectories and write MTT buffers");
    add_dataset_flags(gen, cfg);
    gen->add_option("--epochs", cfg.epochs, "epochs per expert (K)")->check(CLI::PositiveNumber);
    gen->add_option("--batch-size", cfg.batch_size)->check(CLI::PositiveNumber);
    gen->add_option("--lr", cfg.expert_lr)->check(CLI::PositiveNumber);
    gen->add_option("--num-experts", cfg.num_experts)->check(CLI::PositiveNumber);
    gen->add_flag("--track-minibatch-norms", cfg.track_minibatch_norms);
    gen->add_option("--seed", cfg.seed);
    gen->add_option("--out", out_dir, "output directory")->required();

    CLI::App* conv = app.add_subcommand("convexify", "convert MTT buffers to convex trajectories");
    conv->add_option("--in", in_path, "MTT manifest file")->required();
    conv->add_option("--anchors", cfg.anchors, "anchor timesteps, e.g. \"0,6,25,K\"")
        ->check([](const std::string& s) {
            return anchors_syntax_ok(s) ? std::string{} : std::string("expected comma-separated integers or K");
        });
    conv->add_option("--out", out_dir, "output directory")->required();

    CLI::App* dis = app.add_subcommand("distill", "learn a synthetic set against expert trajectories");
    add_dataset_flags(dis, cfg);
    dis->add_option("--mode", cfg.mode, "mtt or mct");
    dis->add_option("--ipc", cfg.ipc, "synthetic examples per class")->check(CLI::PositiveNumber);
    dis->add_option("--M,--expert-steps", cfg.expert_steps)->check(CLI::PositiveNumber);
    dis->add_option("--N,--student-steps", cfg.student_steps)->check(CLI::PositiveNumber);
    dis->add_option("--max-start", cfg.max_start_epoch)->check(CLI::NonNegativeNumber);
    dis->add_option("--iters", cfg.outer_iters)->check(CLI::NonNegativeNumber);
    dis->add_option("--eval-every", cfg.eval_every)->check(CLI::PositiveNumber);
    dis->add_option("--outer-lr-features", cfg.outer_lr_features);
    dis->add_option("--outer-lr-alpha", cfg.outer_lr_alpha);
    dis->add_flag("--continuous,!--no-continuous", cfg.continuous_sampling, "continuous start sampling (mct)");
    dis->add_option("--eval-repeats", cfg.eval_repeats)->check(CLI::PositiveNumber);
    dis->add_option("--eval-train-iters", cfg.eval_train_iters)->check(CLI::PositiveNumber);
    dis->add_option("--seed", cfg.seed);
    dis->add_option("--experts", experts_path, "expert manifest")->required();
    dis->add_option("--out", out_dir, "output directory")->required();

    CLI::App* ev = app.add_subcommand("eval", "evaluate a synthetic set file");
    add_dataset_flags(ev, cfg);
    ev->add_option("--synthetic", synthetic_path, "synthetic set file")->required();
    ev->add_option("--repeats", cfg.eval_repeats)->check(CLI::PositiveNumber);
    ev->add_option("--train-iters", cfg.eval_train_iters)->check(CLI::PositiveNumber);
    ev->add_option("--seed", cfg.seed);

    CLI::App* rep = app.add_subcommand("report", "merge distill runs into a comparison table");
    rep->add_option("--inputs", report_inputs, "distill output directories")->required()->expected(-1);
    rep->add_option("--out", report_out, "comparison CSV path");
    rep->add_option("--epsilon", cfg.epsilon_percent, "convergence epsilon in accuracy percent");

    CLI::App* pca = app.add_subcommand("pca", "project trajectory waypoints to 2-D");
    add_dataset_flags(pca, cfg);
    pca->add_option("--experts", experts_path, "expert manifest")->required();
    pca->add_option("--index", pca_index, "expert index within the manifest");
    pca->add_option("--source", pca_source, "mtt (checkpoints) or mct (sampled waypoints)");
    pca->add_option("--seed", cfg.seed);
    pca->add_option("--out", pca_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_experts(cfg, out_dir);
        if (conv->parsed()) return cmd_convexify(cfg, in_path, out_dir);
        if (dis->parsed()) return cmd_distill(cfg, experts_path, out_dir);
        if (ev->parsed()) return cmd_eval(cfg, synthetic_path);
        if (rep->parsed()) return cmd_report(cfg, report_inputs, report_out);
        if (pca->parsed()) return cmd_pca(cfg, experts_path, pca_index, pca_source, pca_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
