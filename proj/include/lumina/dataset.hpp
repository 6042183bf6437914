#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lumina/powerflow.hpp"

namespace lumina::data {

using pf::LabeledInstance;

struct SplitManifest {
    std::vector<int64_t> train, validation, test;
    uint64_t seed = 0;
};

/// Deterministic shuffled split; sizes are within one element of the exact
/// proportions (largest-remainder rounding). Requires n >= 3 and positive
/// ratios summing to 1.
SplitManifest make_splits(int64_t n_instances, std::array<double, 3> ratios,
                          uint64_t seed);

/// Per-column mean and standard deviation; zero-variance columns fall back to
/// std = 1 so normalization is always invertible.
struct ColumnStats {
    std::vector<double> mean;
    std::vector<double> std;
};

ColumnStats column_stats(const std::vector<double>& rows_flat, int64_t n_rows,
                         int64_t width);

/// x -> (x - mean) / std, column-wise over a row-major matrix.
std::vector<double> normalize(const std::vector<double>& rows_flat, int64_t width,
                              const ColumnStats& stats);
/// Inverse of normalize; round-trips within 1e-12.
std::vector<double> denormalize(const std::vector<double>& rows_flat, int64_t width,
                                const ColumnStats& stats);

/// Feature and target statistics for one topology, train split only.
struct NormStats {
    std::array<ColumnStats, 4> node_features;  // per node type
    ColumnStats bus_targets;  // [vm, va]
    ColumnStats gen_targets;  // [pg, qg]
};

/// Uniform per-load scaling in [lo, hi]; pd and qd share the factor so power
/// factor is preserved. Deterministic in (case, seed).
std::vector<std::array<double, 2>> perturb_loads(const grid::GridCase& c, uint64_t seed,
                                                 double lo, double hi);

/// Parse and validate a case file (schema documented in the README).
grid::GridCase load_case(const std::filesystem::path& path);

/// Optional solved operating point stored with a case file.
struct CaseFile {
    grid::GridCase grid_case;
    bool has_solution = false;
    pf::OperatingPoint solution;
};
CaseFile load_case_file(const std::filesystem::path& path);

struct GenerationParams {
    uint64_t seed = 0;
    int64_t count = 0;
    double perturb_lo = 0.8;
    double perturb_hi = 1.2;
    pf::LimitPolicy policy = pf::LimitPolicy::strict;
    std::array<double, 3> split_ratios = {0.9, 0.05, 0.05};
};

/// In-memory labeled dataset for one topology.
struct TopologyDataset {
    grid::GridCase grid_case;
    std::vector<LabeledInstance> instances;
    SplitManifest splits;
    NormStats stats;  // computed on the train split
    GenerationParams params;
    std::map<std::string, int64_t> rejections;  // reason -> count

    const std::string& case_id() const { return grid_case.case_id; }
};

/// Rejection-sampled generation: consecutive seeds are drawn until `count`
/// accepted instances exist; rejection reasons are tallied.
TopologyDataset generate_dataset(const grid::GridCase& c, const GenerationParams& p);

/// Compute stats from the train split (load features vary per instance; the
/// other node features are case constants).
NormStats compute_norm_stats(const TopologyDataset& d);

void save_dataset(const TopologyDataset& d, const std::filesystem::path& dir);
TopologyDataset load_dataset(const std::filesystem::path& dir);

/// Flatten an operating point into the normalized target vector
/// [bus (vm va) rows..., gen (pg qg) rows...] used by the losses.
std::vector<double> normalized_targets(const pf::OperatingPoint& pt,
                                       const NormStats& stats);

}  // namespace lumina::data
