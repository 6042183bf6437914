#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lumina/gnn.hpp"
#include "lumina/objectives.hpp"

namespace lumina::train {

enum class Precision { single, double_ };
Precision parse_precision(const std::string& s);
std::string precision_name(Precision p);

enum class Split { train, validation, test };

struct TrainConfig {
    std::vector<std::string> topologies;  // dataset directories or case ids
    obj::Objective objective = obj::Objective::mse;
    gnn::ModelConfig model;
    int64_t steps = 1000;
    int batch_size = 8;
    double lr = 1e-3;
    uint64_t seed = 0;
    Precision precision = Precision::double_;
    int64_t eval_every = 100;
    double threshold_tau = 0.0;
    // Constraint-objective knobs.
    double rho = 0.1;
    int64_t update_period = 200;
    double rho_gamma = 1.0;  // optional geometric penalty ramp per dual update
    bool clip_quadratic = false;
    // When set, a NaN abort writes a checkpoint snapshot here before throwing.
    std::string snapshot_path;

    void validate() const;
};

struct EvalRow {
    int64_t step = 0;
    std::string topology;
    double loss = 0.0;  // mean train loss since the previous eval (nan before any step)
    double opf_sol_err = 0.0;
    res::ViolationSummary viol;
    double wall_ms = 0.0;      // since training start
    double step_ms_avg = 0.0;  // mean per-step wall clock since the previous eval
};

struct TrainLog {
    std::vector<EvalRow> rows;

    void to_csv(const std::filesystem::path& path) const;
    std::string to_csv_string() const;
    /// Equality over everything except the wall-clock measurement columns.
    bool same_metrics(const TrainLog& other) const;
};

/// First logged step whose violation (mean across topologies, or the named
/// topology's) is <= tau; nullopt when never reached.
std::optional<int64_t> steps_to_threshold(const TrainLog& log, double tau,
                                          const std::string& topology = "");

struct Checkpoint {
    Precision precision = Precision::double_;
    int64_t step = 0;
    TrainConfig config;  // echo of the producing run
    std::variant<gnn::ParamStore<float>, gnn::ParamStore<double>> params;
    std::map<std::string, data::NormStats> stats;  // per topology
    std::map<std::string, obj::DualState> duals;   // per topology

    bool has_topology(const std::string& case_id) const { return stats.count(case_id); }
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Reinterpret a checkpoint at another precision (parameters are cast).
Checkpoint cast_checkpoint(const Checkpoint& ckpt, Precision target);

struct EvalMetrics {
    double opf_sol_err = 0.0;
    double viol = 0.0;               // mean ViolationSummary.total
    res::ViolationSummary viol_mean; // elementwise mean of summaries
    bool zero_shot = false;
    int64_t n_instances = 0;
};

/// Mean test metrics. Topologies absent from the checkpoint stats are scored
/// zero-shot with statistics from the target's own train split.
EvalMetrics evaluate(const Checkpoint& ckpt, const data::TopologyDataset& ds,
                     Split split = Split::test);

/// Evaluate and also return the predicted operating points (split order).
EvalMetrics evaluate_with_predictions(const Checkpoint& ckpt,
                                      const data::TopologyDataset& ds, Split split,
                                      std::vector<pf::OperatingPoint>* out_points);

/// Mean-pooled activations per layer for every instance of a split
/// (diagnostics input). Output: [layer][instance][hidden].
std::vector<std::vector<std::vector<double>>> collect_activations(
    const Checkpoint& ckpt, const data::TopologyDataset& ds, Split split);

struct TrainResult {
    Checkpoint checkpoint;
    TrainLog log;
};

/// Multi-topology training: each step samples one topology uniformly, then a
/// minibatch of its train instances. Deterministic at double precision.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<const data::TopologyDataset*>& datasets);

/// Warm-start from a checkpoint on one target topology; duals for the target
/// start at zero and the optimizer state is fresh.
TrainResult finetune(const Checkpoint& ckpt, const data::TopologyDataset& target,
                     const TrainConfig& cfg);

}  // namespace lumina::train
