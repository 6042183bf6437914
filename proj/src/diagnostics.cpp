#include "lumina/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lumina/linalg.hpp"

namespace lumina::diag {

TransferMatrix transfer_matrix(
    const std::vector<std::pair<std::string, const train::Checkpoint*>>& checkpoints,
    const std::vector<const data::TopologyDataset*>& topologies) {
    TransferMatrix m;
    m.n_rows = static_cast<int64_t>(checkpoints.size());
    m.n_cols = static_cast<int64_t>(topologies.size());
    for (const auto& [label, ckpt] : checkpoints) {
        const size_t row_start = m.cells.size();
        for (const auto* ds : topologies) {
            const train::EvalMetrics em = train::evaluate(*ckpt, *ds);
            TransferCell cell;
            cell.train_label = label;
            cell.eval_topology = ds->case_id();
            cell.opf_sol_err = em.opf_sol_err;
            cell.viol = em.viol;
            cell.zero_shot = em.zero_shot;
            m.cells.push_back(std::move(cell));
        }
        // Row minimum flags per metric.
        size_t best_e = row_start, best_v = row_start;
        for (size_t i = row_start; i < m.cells.size(); ++i) {
            if (m.cells[i].opf_sol_err < m.cells[best_e].opf_sol_err) best_e = i;
            if (m.cells[i].viol < m.cells[best_v].viol) best_v = i;
        }
        m.cells[best_e].best_sol_err = true;
        m.cells[best_v].best_viol = true;
    }
    return m;
}

namespace {

struct PerInstanceEval {
    std::vector<double> err;      // normalized MSE per instance
    std::vector<double> viol;     // violation total per instance
    std::vector<double> load;     // total_load per instance
    std::vector<std::vector<double>> sq_err_rows;  // per instance, per component
    size_t n_components = 0;
};

PerInstanceEval per_instance_eval(const train::Checkpoint& ckpt,
                                  const data::TopologyDataset& ds, train::Split split) {
    std::vector<pf::OperatingPoint> points;
    train::evaluate_with_predictions(ckpt, ds, split, &points);
    const bool zero_shot = !ckpt.has_topology(ds.case_id());
    const data::NormStats& stats = zero_shot ? ds.stats : ckpt.stats.at(ds.case_id());
    const auto& indices = split == train::Split::train
                              ? ds.splits.train
                              : (split == train::Split::validation ? ds.splits.validation
                                                                   : ds.splits.test);
    const grid::SparseComplexMatrix y = grid::build_admittance(ds.grid_case);

    PerInstanceEval out;
    for (size_t k = 0; k < indices.size(); ++k) {
        const auto& inst = ds.instances[indices[k]];
        const std::vector<double> label = data::normalized_targets(inst.label, stats);
        const std::vector<double> pred = data::normalized_targets(points[k], stats);
        out.n_components = label.size();
        std::vector<double> sq(label.size());
        double se = 0.0;
        for (size_t i = 0; i < label.size(); ++i) {
            const double d = pred[i] - label[i];
            sq[i] = d * d;
            se += d * d;
        }
        out.err.push_back(se / static_cast<double>(label.size()));
        out.sq_err_rows.push_back(std::move(sq));
        out.load.push_back(inst.total_load);

        res::ResidualReport rep;
        const auto eq = res::equality_residuals(ds.grid_case, y, inst.load_profile,
                                                points[k]);
        const auto iq = res::inequality_violations(ds.grid_case, points[k]);
        rep.p_balance = eq.p_balance;
        rep.q_balance = eq.q_balance;
        rep.ref_angle = eq.ref_angle;
        rep.vm_viol = iq.vm_viol;
        rep.pg_viol = iq.pg_viol;
        rep.qg_viol = iq.qg_viol;
        rep.line_viol = iq.line_viol;
        out.viol.push_back(
            res::violation_summary(rep, ds.grid_case.n_bus()).total);
    }
    return out;
}

}  // namespace

std::vector<LoadBin> bin_by_load(std::span<const double> loads,
                                 std::span<const double> errs,
                                 std::span<const double> viols, int n_bins) {
    if (n_bins < 2) throw ValidationError("bin_by_load: n_bins must be >= 2");
    if (loads.size() != errs.size() || loads.size() != viols.size())
        throw ValidationError("bin_by_load: series length mismatch");
    if (loads.empty()) return {};
    const auto [lo_it, hi_it] = std::minmax_element(loads.begin(), loads.end());
    const double lo = *lo_it, hi = *hi_it;
    const double width = hi > lo ? (hi - lo) / n_bins : 1.0;

    std::vector<LoadBin> bins(n_bins);
    for (int b = 0; b < n_bins; ++b) {
        bins[b].lo = lo + b * width;
        bins[b].hi = b + 1 == n_bins ? hi : lo + (b + 1) * width;
    }
    for (size_t i = 0; i < loads.size(); ++i) {
        int b = hi > lo ? static_cast<int>((loads[i] - lo) / width) : 0;
        b = std::clamp(b, 0, n_bins - 1);
        bins[b].count += 1;
        bins[b].mean_err += errs[i];
        bins[b].mean_viol += viols[i];
    }
    std::vector<LoadBin> out;
    for (auto& b : bins) {
        if (b.count == 0) continue;  // empty bins reported as absent
        b.mean_err /= static_cast<double>(b.count);
        b.mean_viol /= static_cast<double>(b.count);
        out.push_back(b);
    }
    return out;
}

std::vector<LoadBin> load_stratified_error(const train::Checkpoint& ckpt,
                                           const data::TopologyDataset& ds, int n_bins,
                                           train::Split split) {
    const PerInstanceEval ev = per_instance_eval(ckpt, ds, split);
    return bin_by_load(ev.load, ev.err, ev.viol, n_bins);
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw ValidationError("pearson_r: need two equal-length series");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw ValidationError("pearson_r: undefined correlation (zero variance)");
    return sxy / std::sqrt(sxx * syy);
}

DegreeErrorResult degree_error_correlation(const train::Checkpoint& ckpt,
                                           const data::TopologyDataset& ds,
                                           train::Split split) {
    const PerInstanceEval ev = per_instance_eval(ckpt, ds, split);
    if (ev.sq_err_rows.empty())
        throw ValidationError("degree_error_correlation: empty split");
    const int n_bus = ds.grid_case.n_bus();
    const int n_gen = ds.grid_case.n_gen();

    // Mean squared error attributed per bus: its own vm/va components plus
    // the pg/qg components of generators at that bus.
    std::vector<double> err_sum(n_bus, 0.0);
    std::vector<double> comp_count(n_bus, 0.0);
    for (const auto& row : ev.sq_err_rows) {
        for (int b = 0; b < n_bus; ++b) {
            err_sum[b] += row[2 * b] + row[2 * b + 1];
        }
        for (int g = 0; g < n_gen; ++g) {
            const int bus = ds.grid_case.generators[g].bus;
            err_sum[bus] += row[2 * n_bus + 2 * g] + row[2 * n_bus + 2 * g + 1];
        }
    }
    for (int b = 0; b < n_bus; ++b) comp_count[b] = 2.0;
    for (int g = 0; g < n_gen; ++g) comp_count[ds.grid_case.generators[g].bus] += 2.0;

    DegreeErrorResult out;
    out.per_bus_error.resize(n_bus);
    const double n_inst = static_cast<double>(ev.sq_err_rows.size());
    for (int b = 0; b < n_bus; ++b)
        out.per_bus_error[b] = err_sum[b] / (comp_count[b] * n_inst);

    const grid::HomoGraph homo =
        grid::to_homogeneous(grid::build_hetero_graph(ds.grid_case));
    const grid::NodeDegrees deg = grid::node_degrees(homo);
    out.normalized_degree.assign(deg.normalized.begin(),
                                 deg.normalized.begin() + n_bus);

    std::vector<double> distinct(out.normalized_degree);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2)
        throw ValidationError("degree_error_correlation: fewer than 2 distinct degrees");
    out.r = pearson_r(out.normalized_degree, out.per_bus_error);
    return out;
}

PcaResult pca_rows(const std::vector<std::vector<double>>& rows, int k) {
    const int64_t n = static_cast<int64_t>(rows.size());
    if (n < k)
        throw ValidationError("pca_rows: fewer instances (" + std::to_string(n) +
                              ") than requested components (" + std::to_string(k) + ")");
    const int64_t d = static_cast<int64_t>(rows.front().size());

    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (int64_t c = 0; c < d; ++c) mean[c] += r[c];
    for (auto& m : mean) m /= static_cast<double>(n);

    std::vector<double> cov(d * d, 0.0);
    for (const auto& r : rows)
        for (int64_t a = 0; a < d; ++a) {
            const double da = r[a] - mean[a];
            for (int64_t b = 0; b < d; ++b) cov[a * d + b] += da * (r[b] - mean[b]);
        }
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (auto& v : cov) v /= denom;

    const linalg::SymmetricEigen eig = linalg::symmetric_eigen(cov, static_cast<int>(d));
    double total = 0.0;
    for (double v : eig.values) total += std::max(v, 0.0);

    PcaResult out;
    out.components.resize(k * d);
    out.explained.resize(k);
    out.explained_ratio.resize(k);
    for (int c = 0; c < k; ++c) {
        out.explained[c] = eig.values[c];
        out.explained_ratio[c] = total > 0.0 ? std::max(eig.values[c], 0.0) / total : 0.0;
        std::copy(eig.vectors.begin() + c * d, eig.vectors.begin() + (c + 1) * d,
                  out.components.begin() + c * d);
    }
    out.projections.resize(n * k);
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c) {
            double dot = 0.0;
            for (int64_t a = 0; a < d; ++a)
                dot += (rows[i][a] - mean[a]) * out.components[c * d + a];
            out.projections[i * k + c] = dot;
        }
    return out;
}

PcaResult activation_pca(const train::Checkpoint& ckpt, const data::TopologyDataset& ds,
                         int layer_index, int k, train::Split split) {
    const auto acts = train::collect_activations(ckpt, ds, split);
    if (layer_index < 0 || layer_index >= static_cast<int>(acts.size()))
        throw ValidationError("activation_pca: layer " + std::to_string(layer_index) +
                              " out of range (model has " +
                              std::to_string(acts.size()) + " activation levels)");
    PcaResult out = pca_rows(acts[layer_index], k);
    const auto& indices = split == train::Split::train
                              ? ds.splits.train
                              : (split == train::Split::validation ? ds.splits.validation
                                                                   : ds.splits.test);
    for (int64_t idx : indices) out.total_load.push_back(ds.instances[idx].total_load);
    return out;
}

double linear_probe_r2(const std::vector<std::vector<double>>& acts,
                       std::span<const double> target, uint64_t seed, bool* used_ridge) {
    const int64_t n = static_cast<int64_t>(acts.size());
    if (n < 10) throw ValidationError("linear_probe: need at least 10 instances");
    if (target.size() != acts.size())
        throw ValidationError("linear_probe: target length mismatch");
    const int64_t d = static_cast<int64_t>(acts.front().size());

    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto g = rng::make_stream(seed, 0x9a0be);
    for (int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int64_t>(rng::uniform_index(g, i + 1));
        std::swap(order[i], order[j]);
    }
    const int64_t n_test = std::max<int64_t>(1, n / 5);
    const int64_t n_train = n - n_test;

    // Normal equations over [1 | x].
    const int64_t p = d + 1;
    std::vector<double> xtx(p * p, 0.0), xty(p, 0.0);
    for (int64_t t = 0; t < n_train; ++t) {
        const auto& row = acts[order[t]];
        const double y = target[order[t]];
        std::vector<double> x(p);
        x[0] = 1.0;
        for (int64_t c = 0; c < d; ++c) x[c + 1] = row[c];
        for (int64_t a = 0; a < p; ++a) {
            xty[a] += x[a] * y;
            for (int64_t b = 0; b < p; ++b) xtx[a * p + b] += x[a] * x[b];
        }
    }
    std::vector<double> beta;
    bool ridge = false;
    try {
        beta = linalg::lu_solve(xtx, xty, static_cast<int>(p));
    } catch (const NumericError&) {
        ridge = true;
        std::vector<double> xtx_r = xtx;
        for (int64_t a = 0; a < p; ++a) xtx_r[a * p + a] += 1e-6;
        beta = linalg::lu_solve(std::move(xtx_r), xty, static_cast<int>(p));
    }
    if (used_ridge) *used_ridge = ridge;

    double y_mean = 0.0;
    for (int64_t t = n_train; t < n; ++t) y_mean += target[order[t]];
    y_mean /= static_cast<double>(n_test);
    double ss_res = 0.0, ss_tot = 0.0;
    for (int64_t t = n_train; t < n; ++t) {
        const auto& row = acts[order[t]];
        double pred = beta[0];
        for (int64_t c = 0; c < d; ++c) pred += beta[c + 1] * row[c];
        const double y = target[order[t]];
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    if (ss_tot == 0.0)
        throw ValidationError("linear_probe: zero-variance target on holdout");
    return 1.0 - ss_res / ss_tot;
}

ProbeResult linear_probe(const train::Checkpoint& ckpt, const data::TopologyDataset& ds,
                         train::Split split, uint64_t seed) {
    const auto acts = train::collect_activations(ckpt, ds, split);
    const auto& indices = split == train::Split::train
                              ? ds.splits.train
                              : (split == train::Split::validation ? ds.splits.validation
                                                                   : ds.splits.test);
    std::vector<double> target;
    for (int64_t idx : indices) target.push_back(ds.instances[idx].total_load);

    ProbeResult out;
    for (const auto& layer : acts) {
        bool ridge = false;
        out.r2_by_layer.push_back(linear_probe_r2(layer, target, seed, &ridge));
        out.used_ridge = out.used_ridge || ridge;
    }
    return out;
}

}  // namespace lumina::diag
