#include "lumina/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lumina/linalg.hpp"
#include "lumina/residuals.hpp"

namespace lumina::pf {

void OperatingPoint::check_sizes(const grid::GridCase& c) const {
    const size_t nb = c.buses.size();
    const size_t ng = c.generators.size();
    if (vm.size() != nb || va.size() != nb)
        throw ValidationError("operating point: voltage vectors sized " +
                              std::to_string(vm.size()) + "/" + std::to_string(va.size()) +
                              ", case has " + std::to_string(nb) + " buses");
    if (pg.size() != ng || qg.size() != ng)
        throw ValidationError("operating point: injection vectors sized " +
                              std::to_string(pg.size()) + "/" + std::to_string(qg.size()) +
                              ", case has " + std::to_string(ng) + " generators");
}

std::vector<double> dispatch_heuristic(const grid::GridCase& c,
                                       const std::vector<std::array<double, 2>>& loads) {
    if (loads.size() != c.loads.size())
        throw ValidationError("dispatch_heuristic: load profile length mismatch");
    double total_pd = 0.0;
    for (const auto& l : loads) total_pd += l[0];
    double pmin_sum = 0.0, pmax_sum = 0.0;
    for (const auto& g : c.generators) {
        pmin_sum += g.pmin;
        pmax_sum += g.pmax;
    }
    if (total_pd > pmax_sum)
        throw ValidationError("dispatch_heuristic: insufficient capacity (total load " +
                              std::to_string(total_pd) + " > total pmax " +
                              std::to_string(pmax_sum) + ")");

    double headroom_sum = 0.0;
    for (const auto& g : c.generators) headroom_sum += g.pmax - g.pmin;
    const double excess = total_pd - pmin_sum;
    std::vector<double> pg(c.generators.size());
    for (const auto& g : c.generators) {
        const double share =
            headroom_sum > 0.0 ? (g.pmax - g.pmin) / headroom_sum * excess : 0.0;
        pg[g.index] = std::clamp(g.pmin + share, g.pmin, g.pmax);
    }
    return pg;
}

namespace {

struct BusTyping {
    int slack = -1;
    std::vector<int> pv;  // non-slack buses holding generators
    std::vector<int> pq;  // everything else
    std::vector<std::vector<int>> gens_at;  // per bus
};

BusTyping type_buses(const grid::GridCase& c) {
    BusTyping t;
    t.slack = c.reference_bus();
    t.gens_at.resize(c.buses.size());
    for (const auto& g : c.generators) t.gens_at[g.bus].push_back(g.index);
    for (const auto& b : c.buses) {
        if (b.index == t.slack) continue;
        if (t.gens_at[b.index].empty())
            t.pq.push_back(b.index);
        else
            t.pv.push_back(b.index);
    }
    return t;
}

}  // namespace

PowerFlowResult nr_solve(const grid::GridCase& c,
                         const std::vector<std::array<double, 2>>& loads,
                         const std::vector<double>& pg_setpoints, double tol,
                         int max_iter, const OperatingPoint* warm_start) {
    if (loads.size() != c.loads.size())
        throw ValidationError("nr_solve: load profile length mismatch");
    if (pg_setpoints.size() != c.generators.size())
        throw ValidationError("nr_solve: pg setpoint length mismatch");

    const int n = c.n_bus();
    const grid::SparseComplexMatrix y = grid::build_admittance(c);
    const BusTyping typing = type_buses(c);

    // Net specified injections per bus (slack P and PV/slack Q recovered later).
    std::vector<double> p_spec(n, 0.0), q_spec(n, 0.0);
    for (const auto& g : c.generators) p_spec[g.bus] += pg_setpoints[g.index];
    for (const auto& l : c.loads) {
        p_spec[l.bus] -= loads[l.index][0];
        q_spec[l.bus] -= loads[l.index][1];
    }

    std::vector<double> vm(n, 1.0), va(n, 0.0);
    if (warm_start) {
        warm_start->check_sizes(c);
        vm = warm_start->vm;
        va = warm_start->va;
    }
    // PV and slack magnitudes are held at the setpoint, warm start or not.
    for (const auto& b : c.buses) {
        if (!typing.gens_at[b.index].empty())
            vm[b.index] = c.generators[typing.gens_at[b.index].front()].vm_setpoint;
    }

    // Unknown ordering: [va for pv..., va for pq..., vm for pq...].
    std::vector<int> angle_buses = typing.pv;
    angle_buses.insert(angle_buses.end(), typing.pq.begin(), typing.pq.end());
    const int na = static_cast<int>(angle_buses.size());
    const int nq = static_cast<int>(typing.pq.size());
    const int m = na + nq;
    std::vector<int> pos_va(n, -1), pos_vm(n, -1);
    for (int i = 0; i < na; ++i) pos_va[angle_buses[i]] = i;
    for (int i = 0; i < nq; ++i) pos_vm[typing.pq[i]] = na + i;

    std::vector<double> p_calc(n), q_calc(n);
    const auto compute_injections = [&]() {
        for (int i = 0; i < n; ++i) {
            double pi = 0.0, qi = 0.0;
            for (int k = y.row_ptr[i]; k < y.row_ptr[i + 1]; ++k) {
                const int j = y.col[k];
                const double g = y.val[k].real();
                const double b = y.val[k].imag();
                const double t = va[i] - va[j];
                const double ct = std::cos(t), st = std::sin(t);
                pi += vm[j] * (g * ct + b * st);
                qi += vm[j] * (g * st - b * ct);
            }
            p_calc[i] = vm[i] * pi;
            q_calc[i] = vm[i] * qi;
        }
    };

    const auto mismatch = [&](std::vector<double>& f) {
        f.assign(m, 0.0);
        double worst = 0.0;
        for (int i = 0; i < na; ++i) {
            f[i] = p_spec[angle_buses[i]] - p_calc[angle_buses[i]];
            worst = std::max(worst, std::abs(f[i]));
        }
        for (int i = 0; i < nq; ++i) {
            f[na + i] = q_spec[typing.pq[i]] - q_calc[typing.pq[i]];
            worst = std::max(worst, std::abs(f[na + i]));
        }
        return worst;
    };

    PowerFlowResult out;
    std::vector<double> f;
    compute_injections();
    double worst = mismatch(f);
    out.mismatch_trace.push_back(worst);

    int iter = 0;
    while (worst > tol && iter < max_iter) {
        // Dense Jacobian of calculated injections w.r.t. the unknowns.
        std::vector<double> jac(static_cast<size_t>(m) * m, 0.0);
        const auto add_j = [&](int row, int colidx, double v) {
            if (row >= 0 && colidx >= 0) jac[static_cast<size_t>(row) * m + colidx] += v;
        };
        for (int i = 0; i < n; ++i) {
            const int rp = pos_va[i];                    // row of P_i equation
            const int rq = pos_vm[i] >= 0 ? pos_vm[i] - na : -1;  // index into pq list
            const int rowq = rq >= 0 ? na + rq : -1;     // row of Q_i equation
            for (int k = y.row_ptr[i]; k < y.row_ptr[i + 1]; ++k) {
                const int j = y.col[k];
                const double g = y.val[k].real();
                const double b = y.val[k].imag();
                const double t = va[i] - va[j];
                const double ct = std::cos(t), st = std::sin(t);
                if (j == i) {
                    // Diagonal contributions use the full sums.
                    add_j(rp, pos_va[i], -q_calc[i] - b * vm[i] * vm[i]);
                    add_j(rp, pos_vm[i], p_calc[i] / vm[i] + g * vm[i]);
                    add_j(rowq, pos_va[i], p_calc[i] - g * vm[i] * vm[i]);
                    add_j(rowq, pos_vm[i], q_calc[i] / vm[i] - b * vm[i]);
                } else {
                    const double vv = vm[i] * vm[j];
                    add_j(rp, pos_va[j], vv * (g * st - b * ct));
                    add_j(rp, pos_vm[j], vm[i] * (g * ct + b * st));
                    add_j(rowq, pos_va[j], -vv * (g * ct + b * st));
                    add_j(rowq, pos_vm[j], vm[i] * (g * st - b * ct));
                }
            }
        }
        std::vector<double> dx;
        try {
            dx = linalg::lu_solve(std::move(jac), f, m);
        } catch (const NumericError&) {
            throw NumericError("nr_solve: singular Jacobian at iteration " +
                               std::to_string(iter));
        }
        for (int i = 0; i < na; ++i) va[angle_buses[i]] += dx[i];
        for (int i = 0; i < nq; ++i) vm[typing.pq[i]] += dx[na + i];
        ++iter;
        compute_injections();
        worst = mismatch(f);
        out.mismatch_trace.push_back(worst);
    }

    out.iterations = iter;
    out.converged = worst <= tol;
    out.max_mismatch = worst;

    OperatingPoint pt;
    pt.vm = vm;
    pt.va = va;
    pt.pg.assign(c.generators.size(), 0.0);
    pt.qg.assign(c.generators.size(), 0.0);
    // Recover reactive injections at generator buses and active power at the
    // slack; ties at multi-generator buses split equally.
    for (int i = 0; i < n; ++i) {
        const auto& gens = typing.gens_at[i];
        if (gens.empty()) continue;
        double qd = 0.0, pd = 0.0;
        for (const auto& l : c.loads)
            if (l.bus == i) {
                pd += loads[l.index][0];
                qd += loads[l.index][1];
            }
        const double q_total = q_calc[i] + qd;
        for (int gi : gens) pt.qg[gi] = q_total / gens.size();
        if (i == typing.slack) {
            const double p_total = p_calc[i] + pd;
            for (int gi : gens) pt.pg[gi] = p_total / gens.size();
        } else {
            for (int gi : gens) pt.pg[gi] = pg_setpoints[gi];
        }
    }
    out.point = std::move(pt);
    return out;
}

std::vector<std::array<double, 2>> draw_load_profile(const grid::GridCase& c,
                                                     uint64_t seed, double lo,
                                                     double hi) {
    if (!(lo > 0.0) || lo > hi)
        throw ValidationError("draw_load_profile: need 0 < lo <= hi");
    std::vector<std::array<double, 2>> profile(c.loads.size());
    auto rng = rng::make_stream(seed, 0x10ad);
    for (size_t i = 0; i < c.loads.size(); ++i) {
        const double s = rng::uniform(rng, lo, hi);
        profile[i] = {c.loads[i].pd * s, c.loads[i].qd * s};
    }
    return profile;
}

GenerationOutcome generate_labeled_instance(const grid::GridCase& c, uint64_t seed,
                                            double perturb_lo, double perturb_hi,
                                            LimitPolicy policy) {
    GenerationOutcome out;
    std::vector<std::array<double, 2>> profile =
        draw_load_profile(c, seed, perturb_lo, perturb_hi);

    std::vector<double> pg;
    try {
        pg = dispatch_heuristic(c, profile);
    } catch (const ValidationError&) {
        out.rejection_reason = "insufficient capacity";
        return out;
    }
    PowerFlowResult r = nr_solve(c, profile, pg);
    if (!r.converged) {
        out.rejection_reason = "no convergence";
        return out;
    }

    const res::EqualityResult eq = res::equality_residuals(c, profile, r.point);
    double eq_norm = 0.0;
    for (double v : eq.p_balance) eq_norm += v * v;
    for (double v : eq.q_balance) eq_norm += v * v;
    eq_norm += eq.ref_angle * eq.ref_angle;
    eq_norm = std::sqrt(eq_norm);
    if (eq_norm >= 1e-6) {
        out.rejection_reason = "equality residual too large";
        return out;
    }

    const res::InequalityResult iq = res::inequality_violations(c, r.point);
    const auto any_pos = [](const std::vector<double>& v) {
        return std::any_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
    };
    if (any_pos(iq.vm_viol)) {
        out.rejection_reason = "voltage limit violated";
        return out;
    }
    if (any_pos(iq.pg_viol) || any_pos(iq.qg_viol)) {
        out.rejection_reason = "generator limit violated";
        return out;
    }
    if (policy == LimitPolicy::strict && any_pos(iq.line_viol)) {
        out.rejection_reason = "thermal limit violated";
        return out;
    }

    LabeledInstance inst;
    inst.case_id = c.case_id;
    inst.load_profile = profile;
    inst.label = std::move(r.point);
    inst.total_load = 0.0;
    for (const auto& l : profile) inst.total_load += l[0];
    out.instance = std::move(inst);
    return out;
}

}  // namespace lumina::pf
