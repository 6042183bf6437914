#pragma once

#include "lumina/trainer.hpp"

namespace lumina::diag {

struct TransferCell {
    std::string train_label;
    std::string eval_topology;
    double opf_sol_err = 0.0;
    double viol = 0.0;
    bool zero_shot = false;
    bool best_sol_err = false;  // row minimum flags
    bool best_viol = false;
};

struct TransferMatrix {
    std::vector<TransferCell> cells;  // row-major: one row per checkpoint
    int64_t n_rows = 0, n_cols = 0;
};

/// Evaluate every checkpoint on every topology; diagonal cells (training
/// topology = eval topology) take the exact trainer::evaluate path.
TransferMatrix transfer_matrix(
    const std::vector<std::pair<std::string, const train::Checkpoint*>>& checkpoints,
    const std::vector<const data::TopologyDataset*>& topologies);

struct LoadBin {
    double lo = 0.0, hi = 0.0;
    int64_t count = 0;
    double mean_err = 0.0;
    double mean_viol = 0.0;
};

/// Equal-width binning over the observed load range; empty bins are omitted.
std::vector<LoadBin> bin_by_load(std::span<const double> loads,
                                 std::span<const double> errs,
                                 std::span<const double> viols, int n_bins);

/// Equal-width bins over observed total_load of the split; empty bins are
/// omitted.
std::vector<LoadBin> load_stratified_error(const train::Checkpoint& ckpt,
                                           const data::TopologyDataset& ds, int n_bins,
                                           train::Split split = train::Split::test);

/// Pearson correlation; throws when either series has zero variance.
double pearson_r(std::span<const double> xs, std::span<const double> ys);

struct DegreeErrorResult {
    std::vector<double> per_bus_error;       // mean squared normalized error
    std::vector<double> normalized_degree;   // bus rows of the homogeneous view
    double r = 0.0;
};

/// Per-bus mean error (vm/va plus the bus's generators' pg/qg, normalized
/// space) against normalized bus degree.
DegreeErrorResult degree_error_correlation(const train::Checkpoint& ckpt,
                                           const data::TopologyDataset& ds,
                                           train::Split split = train::Split::test);

struct PcaResult {
    std::vector<double> components;        // k x d, row-major (rows orthonormal)
    std::vector<double> explained;         // k eigenvalues (descending)
    std::vector<double> explained_ratio;   // eigenvalue / total variance
    std::vector<double> projections;       // n x k
    std::vector<double> total_load;        // n
};

/// PCA of centered rows: top-k eigenpairs of the sample covariance.
PcaResult pca_rows(const std::vector<std::vector<double>>& rows, int k);

/// PCA of mean-pooled activations at one layer (0 = encoder output).
PcaResult activation_pca(const train::Checkpoint& ckpt, const data::TopologyDataset& ds,
                         int layer_index, int k, train::Split split = train::Split::test);

struct ProbeResult {
    std::vector<double> r2_by_layer;
    bool used_ridge = false;
};

/// OLS with intercept from pooled activations to total_load, R^2 on a
/// held-out 20% tail of a seeded shuffle; singular normal equations fall back
/// to ridge (lambda = 1e-6).
ProbeResult linear_probe(const train::Checkpoint& ckpt, const data::TopologyDataset& ds,
                         train::Split split = train::Split::test, uint64_t seed = 0);

/// Probe a single layer's activation matrix (n x d) against a target.
double linear_probe_r2(const std::vector<std::vector<double>>& acts,
                       std::span<const double> target, uint64_t seed, bool* used_ridge);

}  // namespace lumina::diag
