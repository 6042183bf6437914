#include "lumina/cli.hpp"

#include <cstdio>
#include <fstream>

#include <CLI11.hpp>

#include "lumina/config_io.hpp"
#include "lumina/diagnostics.hpp"
#include "lumina/runio.hpp"

namespace lumina::cli {

using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("JSON parse error in " + path + ": " + e.what());
    }
    return j;
}

json summary_to_json(const res::ViolationSummary& v) {
    return json{{"p", v.p},   {"q", v.q},   {"ref", v.ref},   {"vm", v.vm},
                {"pg", v.pg}, {"qg", v.qg}, {"line", v.line}, {"total", v.total}};
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Training flag bundle shared by train and finetune. Flags override config
// file values; unset flags leave the file (or default) value in place.
struct TrainFlags {
    std::string config_path;
    std::vector<std::string> data_dirs;
    std::string objective, arch, precision;
    int64_t steps = -1, eval_every = -1, update_period = -1;
    int layers = -1, hidden = -1, heads = -1, batch_size = -1;
    double lr = -1, rho = -1, rho_gamma = -1, tau = -1, leaky_slope = -1;
    int64_t seed = -1;
    int clip_quadratic = -1;

    void add_to(CLI::App* cmd, bool data_required) {
        cmd->add_option("--config", config_path, "JSON config file (flat TrainConfig keys)");
        auto* d = cmd->add_option("--data", data_dirs,
                                  "dataset directories (one per topology)");
        if (data_required) d->required();
        cmd->add_option("--objective", objective, "mse|al|vbl");
        cmd->add_option("--arch", arch,
                        "gcn|gat|gin|graph_transformer|heterognn|hgt");
        cmd->add_option("--layers", layers);
        cmd->add_option("--hidden", hidden);
        cmd->add_option("--heads", heads);
        cmd->add_option("--steps", steps);
        cmd->add_option("--batch-size", batch_size);
        cmd->add_option("--lr", lr);
        cmd->add_option("--seed", seed);
        cmd->add_option("--precision", precision, "single|double");
        cmd->add_option("--eval-every", eval_every);
        cmd->add_option("--tau", tau, "violation threshold for steps-to-threshold");
        cmd->add_option("--rho", rho, "penalty / dual step size");
        cmd->add_option("--update-period", update_period, "steps between dual updates");
        cmd->add_option("--rho-gamma", rho_gamma, "geometric rho ramp per update");
        cmd->add_option("--leaky-slope", leaky_slope, "GAT score slope");
        cmd->add_option("--clip-quadratic", clip_quadratic,
                        "clip h in the AL quadratic term (0|1)");
    }

    train::TrainConfig resolve() const {
        train::TrainConfig cfg;
        if (!config_path.empty()) cfg = train::config_from_json(load_json_file(config_path));
        if (!data_dirs.empty()) cfg.topologies = data_dirs;
        if (!objective.empty()) cfg.objective = obj::parse_objective(objective);
        if (!arch.empty()) cfg.model.architecture = gnn::parse_arch(arch);
        if (layers > 0) cfg.model.layers = layers;
        if (hidden > 0) cfg.model.hidden = hidden;
        if (heads > 0) cfg.model.heads = heads;
        if (leaky_slope >= 0) cfg.model.leaky_slope = leaky_slope;
        if (steps > 0) cfg.steps = steps;
        if (batch_size > 0) cfg.batch_size = batch_size;
        if (lr > 0) cfg.lr = lr;
        if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
        if (!precision.empty()) cfg.precision = train::parse_precision(precision);
        if (eval_every > 0) cfg.eval_every = eval_every;
        if (tau >= 0) cfg.threshold_tau = tau;
        if (rho > 0) cfg.rho = rho;
        if (update_period > 0) cfg.update_period = update_period;
        if (rho_gamma > 0) cfg.rho_gamma = rho_gamma;
        if (clip_quadratic >= 0) cfg.clip_quadratic = clip_quadratic != 0;
        return cfg;
    }
};

std::vector<data::TopologyDataset> load_datasets(const std::vector<std::string>& dirs) {
    std::vector<data::TopologyDataset> out;
    out.reserve(dirs.size());
    for (const auto& d : dirs) out.push_back(data::load_dataset(d));
    return out;
}

void write_resolved_config(const std::filesystem::path& dir, const std::string& command,
                           json resolved) {
    resolved["command"] = command;
    runio::write_json_file(dir / "config_resolved.json", resolved);
}

int cmd_gen_data(const std::string& case_path, int64_t count, uint64_t seed, double lo,
                 double hi, const std::string& policy, const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    const grid::GridCase c = data::load_case(case_path);
    data::GenerationParams p;
    p.seed = seed;
    p.count = count;
    p.perturb_lo = lo;
    p.perturb_hi = hi;
    p.policy = policy == "relaxed" ? pf::LimitPolicy::relaxed : pf::LimitPolicy::strict;
    const auto ds = data::generate_dataset(c, p);
    data::save_dataset(ds, dir);
    write_resolved_config(dir, "gen-data",
                          json{{"case", case_path},
                               {"count", count},
                               {"seed", seed},
                               {"perturb_lo", lo},
                               {"perturb_hi", hi},
                               {"limit_policy", policy}});
    int64_t rejected = 0;
    for (const auto& [k, v] : ds.rejections) rejected += v;
    std::printf("gen-data: %lld instances for %s -> %s (%lld rejected)\n",
                static_cast<long long>(count), c.case_id.c_str(), dir.string().c_str(),
                static_cast<long long>(rejected));
    return kExitOk;
}

int cmd_train(const TrainFlags& flags, const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    train::TrainConfig cfg = flags.resolve();
    cfg.snapshot_path = (dir / "abort_snapshot.ckpt").string();
    const auto datasets = load_datasets(cfg.topologies);
    std::vector<const data::TopologyDataset*> ptrs;
    for (const auto& d : datasets) ptrs.push_back(&d);
    write_resolved_config(dir, "train", train::config_to_json(cfg));

    const auto result = train::train(cfg, ptrs);
    train::save_checkpoint(result.checkpoint, dir / "checkpoint.ckpt");
    result.log.to_csv(dir / "train_log.csv");
    const auto& last = result.log.rows.back();
    std::printf("train: %lld steps on %zu topologies -> %s (final viol %.6g)\n",
                static_cast<long long>(cfg.steps), datasets.size(),
                dir.string().c_str(), last.viol.total);
    if (cfg.threshold_tau > 0) {
        const auto s = train::steps_to_threshold(result.log, cfg.threshold_tau);
        std::printf("steps_to_threshold(tau=%g): %s\n", cfg.threshold_tau,
                    s ? std::to_string(*s).c_str() : "never");
    }
    return kExitOk;
}

int cmd_finetune(const std::string& ckpt_path, const TrainFlags& flags,
                 const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    train::TrainConfig cfg = flags.resolve();
    cfg.snapshot_path = (dir / "abort_snapshot.ckpt").string();
    if (cfg.topologies.size() != 1)
        throw ValidationError("finetune: exactly one --data directory required");
    const auto target = data::load_dataset(cfg.topologies.front());
    const auto ckpt = train::load_checkpoint(ckpt_path);
    json resolved = train::config_to_json(cfg);
    resolved["checkpoint"] = ckpt_path;
    write_resolved_config(dir, "finetune", std::move(resolved));

    const auto result = train::finetune(ckpt, target, cfg);
    train::save_checkpoint(result.checkpoint, dir / "checkpoint.ckpt");
    result.log.to_csv(dir / "train_log.csv");
    std::printf("finetune: %lld steps on %s -> %s (final viol %.6g)\n",
                static_cast<long long>(cfg.steps), target.case_id().c_str(),
                dir.string().c_str(), result.log.rows.back().viol.total);
    return kExitOk;
}

train::Split parse_split(const std::string& s) {
    if (s == "train") return train::Split::train;
    if (s == "validation") return train::Split::validation;
    if (s == "test") return train::Split::test;
    throw ValidationError("unknown split '" + s + "'");
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split, bool save_predictions, const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    const auto ckpt = train::load_checkpoint(ckpt_path);
    const auto ds = data::load_dataset(data_dir);
    write_resolved_config(dir, "eval",
                          json{{"checkpoint", ckpt_path},
                               {"data", data_dir},
                               {"split", split},
                               {"save_predictions", save_predictions}});
    std::vector<pf::OperatingPoint> points;
    const auto m = train::evaluate_with_predictions(
        ckpt, ds, parse_split(split), save_predictions ? &points : nullptr);
    json metrics{{"opf_sol_err", m.opf_sol_err},
                 {"viol", m.viol},
                 {"viol_families", summary_to_json(m.viol_mean)},
                 {"zero_shot", m.zero_shot},
                 {"n_instances", m.n_instances},
                 {"topology", ds.case_id()},
                 {"split", split}};
    runio::write_json_file(dir / "metrics.json", metrics);
    if (save_predictions) {
        json preds = json::array();
        for (const auto& pt : points)
            preds.push_back(json{
                {"vm", pt.vm}, {"va", pt.va}, {"pg", pt.pg}, {"qg", pt.qg}});
        runio::write_json_file(dir / "predictions.json",
                               json{{"topology", ds.case_id()},
                                    {"split", split},
                                    {"points", std::move(preds)}});
    }
    std::printf("eval: %s on %s/%s -> sol_err=%.6g viol=%.6g%s\n", ckpt_path.c_str(),
                ds.case_id().c_str(), split.c_str(), m.opf_sol_err, m.viol,
                m.zero_shot ? " (zero-shot)" : "");
    return kExitOk;
}

int cmd_transfer(const std::vector<std::string>& ckpt_specs,
                 const std::vector<std::string>& data_dirs, const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    std::vector<train::Checkpoint> ckpts;
    std::vector<std::string> labels;
    for (const auto& spec : ckpt_specs) {
        const auto eq = spec.find('=');
        std::string label, path;
        if (eq != std::string::npos) {
            label = spec.substr(0, eq);
            path = spec.substr(eq + 1);
        } else {
            path = spec;
            label = std::filesystem::path(spec).stem().string();
        }
        ckpts.push_back(train::load_checkpoint(path));
        labels.push_back(label);
    }
    const auto datasets = load_datasets(data_dirs);
    write_resolved_config(dir, "transfer",
                          json{{"checkpoints", ckpt_specs}, {"data", data_dirs}});

    std::vector<std::pair<std::string, const train::Checkpoint*>> pairs;
    for (size_t i = 0; i < ckpts.size(); ++i) pairs.push_back({labels[i], &ckpts[i]});
    std::vector<const data::TopologyDataset*> ptrs;
    for (const auto& d : datasets) ptrs.push_back(&d);
    const auto matrix = diag::transfer_matrix(pairs, ptrs);

    std::string csv =
        "train_label,eval_topology,opf_sol_err,viol,zero_shot,best_sol_err,best_viol\r\n";
    json cells = json::array();
    for (const auto& c : matrix.cells) {
        csv += runio::csv_field(c.train_label) + "," + runio::csv_field(c.eval_topology) +
               "," + fmt(c.opf_sol_err) + "," + fmt(c.viol) + "," +
               (c.zero_shot ? "1" : "0") + "," + (c.best_sol_err ? "1" : "0") + "," +
               (c.best_viol ? "1" : "0") + "\r\n";
        cells.push_back(json{{"train_label", c.train_label},
                             {"eval_topology", c.eval_topology},
                             {"opf_sol_err", c.opf_sol_err},
                             {"viol", c.viol},
                             {"zero_shot", c.zero_shot}});
        std::printf("transfer %-18s -> %-8s sol_err=%.6g viol=%.6g\n",
                    c.train_label.c_str(), c.eval_topology.c_str(), c.opf_sol_err,
                    c.viol);
    }
    runio::write_text_file(dir / "transfer.csv", csv);
    runio::write_json_file(dir / "transfer.json", json{{"cells", std::move(cells)}});
    return kExitOk;
}

int cmd_stress(const std::string& ckpt_path, const std::string& data_dir, int bins,
               std::string tag, const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    const auto ckpt = train::load_checkpoint(ckpt_path);
    const auto ds = data::load_dataset(data_dir);
    if (tag.empty()) tag = runio::timestamp_tag();
    write_resolved_config(dir, "stress",
                          json{{"checkpoint", ckpt_path},
                               {"data", data_dir},
                               {"bins", bins},
                               {"tag", tag}});

    const auto load_bins = diag::load_stratified_error(ckpt, ds, bins);
    std::string csv = "bin_lo,bin_hi,count,mean_err,mean_viol\r\n";
    for (const auto& b : load_bins)
        csv += fmt(b.lo) + "," + fmt(b.hi) + "," + std::to_string(b.count) + "," +
               fmt(b.mean_err) + "," + fmt(b.mean_viol) + "\r\n";
    runio::write_text_file(dir / ("diag_load_stratified_" + tag + ".csv"), csv);

    const auto deg = diag::degree_error_correlation(ckpt, ds);
    std::string dcsv = "bus,degree_norm,mean_err\r\n";
    for (size_t b = 0; b < deg.per_bus_error.size(); ++b)
        dcsv += std::to_string(b) + "," + fmt(deg.normalized_degree[b]) + "," +
                fmt(deg.per_bus_error[b]) + "\r\n";
    runio::write_text_file(dir / ("diag_degree_error_" + tag + ".csv"), dcsv);

    runio::write_json_file(dir / ("diag_stress_" + tag + ".json"),
                           json{{"topology", ds.case_id()},
                                {"n_bins", bins},
                                {"bins_used", load_bins.size()},
                                {"pearson_r", deg.r}});
    std::printf("stress: %s -> %zu load bins, degree-error r=%.4f\n",
                ds.case_id().c_str(), load_bins.size(), deg.r);
    return kExitOk;
}

int cmd_probe(const std::string& ckpt_path, const std::string& data_dir, int layer,
              int components, std::string tag, const std::string& out) {
    const auto dir = runio::prepare_run_dir(out);
    const auto ckpt = train::load_checkpoint(ckpt_path);
    const auto ds = data::load_dataset(data_dir);
    if (tag.empty()) tag = runio::timestamp_tag();
    write_resolved_config(dir, "probe",
                          json{{"checkpoint", ckpt_path},
                               {"data", data_dir},
                               {"layer", layer},
                               {"components", components},
                               {"tag", tag}});

    const auto pca = diag::activation_pca(ckpt, ds, layer, components);
    std::string csv = "instance";
    for (int c = 0; c < components; ++c) csv += ",proj_" + std::to_string(c + 1);
    csv += ",total_load\r\n";
    const int64_t n = static_cast<int64_t>(pca.total_load.size());
    for (int64_t i = 0; i < n; ++i) {
        csv += std::to_string(i);
        for (int c = 0; c < components; ++c)
            csv += "," + fmt(pca.projections[i * components + c]);
        csv += "," + fmt(pca.total_load[i]) + "\r\n";
    }
    runio::write_text_file(dir / ("diag_pca_" + tag + ".csv"), csv);

    const auto probe = diag::linear_probe(ckpt, ds);
    std::string pcsv = "layer,r2\r\n";
    for (size_t l = 0; l < probe.r2_by_layer.size(); ++l)
        pcsv += std::to_string(l) + "," + fmt(probe.r2_by_layer[l]) + "\r\n";
    runio::write_text_file(dir / ("diag_probe_" + tag + ".csv"), pcsv);

    runio::write_json_file(dir / ("diag_probe_" + tag + ".json"),
                           json{{"topology", ds.case_id()},
                                {"layer", layer},
                                {"explained", pca.explained},
                                {"explained_ratio", pca.explained_ratio},
                                {"r2_by_layer", probe.r2_by_layer},
                                {"used_ridge", probe.used_ridge}});
    std::printf("probe: %s layer %d -> top-%d PCA + per-layer R2 written\n",
                ds.case_id().c_str(), layer, components);
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"constraint-aware ACOPF surrogate laboratory"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_case, gd_policy = "strict", gd_out = "runs/gen-data";
    int64_t gd_count = 100;
    uint64_t gd_seed = 0;
    double gd_lo = 0.8, gd_hi = 1.2;
    auto* gen = app.add_subcommand("gen-data", "generate labeled instances");
    gen->add_option("--case", gd_case, "case JSON file")->required();
    gen->add_option("--count", gd_count, "accepted instances to produce");
    gen->add_option("--seed", gd_seed);
    gen->add_option("--perturb-lo", gd_lo);
    gen->add_option("--perturb-hi", gd_hi);
    gen->add_option("--limit-policy", gd_policy, "strict|relaxed");
    gen->add_option("--out", gd_out, "output directory");

    // train
    TrainFlags tr_flags;
    std::string tr_out = "runs/train";
    auto* tr = app.add_subcommand("train", "train a surrogate");
    tr_flags.add_to(tr, false);
    tr->add_option("--out", tr_out, "run directory");

    // finetune
    TrainFlags ft_flags;
    std::string ft_ckpt, ft_out = "runs/finetune";
    auto* ft = app.add_subcommand("finetune", "warm-start training from a checkpoint");
    ft->add_option("--checkpoint", ft_ckpt)->required();
    ft_flags.add_to(ft, true);
    ft->add_option("--out", ft_out, "run directory");

    // eval
    std::string ev_ckpt, ev_data, ev_split = "test", ev_out = "runs/eval";
    bool ev_no_preds = false;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--split", ev_split, "train|validation|test");
    ev->add_flag("--no-predictions", ev_no_preds, "skip predictions.json");
    ev->add_option("--out", ev_out, "run directory");

    // transfer
    std::vector<std::string> tf_ckpts, tf_data;
    std::string tf_out = "runs/transfer";
    auto* tf = app.add_subcommand("transfer", "zero-shot transfer matrix");
    tf->add_option("--checkpoint", tf_ckpts, "label=path or path (repeatable)")
        ->required();
    tf->add_option("--data", tf_data, "dataset directories")->required();
    tf->add_option("--out", tf_out, "run directory");

    // stress
    std::string st_ckpt, st_data, st_tag, st_out = "runs/stress";
    int st_bins = 10;
    auto* st = app.add_subcommand("stress",
                                  "load-stratified error and degree correlation");
    st->add_option("--checkpoint", st_ckpt)->required();
    st->add_option("--data", st_data)->required();
    st->add_option("--bins", st_bins);
    st->add_option("--tag", st_tag, "output tag (default: timestamp)");
    st->add_option("--out", st_out, "run directory");

    // probe
    std::string pr_ckpt, pr_data, pr_tag, pr_out = "runs/probe";
    int pr_layer = -1, pr_components = 2;
    auto* pr = app.add_subcommand("probe", "activation PCA and linear probing");
    pr->add_option("--checkpoint", pr_ckpt)->required();
    pr->add_option("--data", pr_data)->required();
    pr->add_option("--layer", pr_layer, "activation level (default: top layer)");
    pr->add_option("--components", pr_components);
    pr->add_option("--tag", pr_tag, "output tag (default: timestamp)");
    pr->add_option("--out", pr_out, "run directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gd_case, gd_count, gd_seed, gd_lo, gd_hi, gd_policy,
                                gd_out);
        if (tr->parsed()) return cmd_train(tr_flags, tr_out);
        if (ft->parsed()) return cmd_finetune(ft_ckpt, ft_flags, ft_out);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_split, !ev_no_preds, ev_out);
        if (tf->parsed()) return cmd_transfer(tf_ckpts, tf_data, tf_out);
        if (st->parsed()) return cmd_stress(st_ckpt, st_data, st_bins, st_tag, st_out);
        if (pr->parsed()) {
            if (pr_layer < 0) {
                const auto ckpt = train::load_checkpoint(pr_ckpt);
                pr_layer = ckpt.config.model.layers;  // top of the stack
            }
            return cmd_probe(pr_ckpt, pr_data, pr_layer, pr_components, pr_tag, pr_out);
        }
    } catch (const TrainAbort& e) {
        std::fprintf(stderr, "aborted: %s\n", e.what());
        if (!e.snapshot_path.empty())
            std::fprintf(stderr, "snapshot: %s\n", e.snapshot_path.c_str());
        return kExitNanAbort;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace lumina::cli
