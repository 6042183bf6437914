#include "lumina/residuals.hpp"

#include <cmath>

namespace lumina::res {

ConstraintLayout ConstraintLayout::from_case(const grid::GridCase& c) {
    ConstraintLayout l;
    l.n_bus = c.n_bus();
    l.n_gen = c.n_gen();
    for (const auto& br : c.branches)
        if (br.s_max > 0.0) l.limited_branches.push_back(br.index);
    return l;
}

const std::vector<std::string>& ViolationSummary::family_names() {
    static const std::vector<std::string> names = {"p", "q", "ref", "vm",
                                                   "pg", "qg", "line"};
    return names;
}

EqualityResult equality_residuals(const grid::GridCase& c,
                                  const std::vector<std::array<double, 2>>& loads,
                                  const pf::OperatingPoint& pt) {
    return equality_residuals(c, grid::build_admittance(c), loads, pt);
}

EqualityResult equality_residuals(const grid::GridCase& c,
                                  const grid::SparseComplexMatrix& y,
                                  const std::vector<std::array<double, 2>>& loads,
                                  const pf::OperatingPoint& pt) {
    pt.check_sizes(c);
    if (loads.size() != c.loads.size())
        throw ValidationError("equality_residuals: load profile length " +
                              std::to_string(loads.size()) + " != case load count " +
                              std::to_string(c.loads.size()));
    const int n = c.n_bus();

    EqualityResult r;
    r.p_balance.assign(n, 0.0);
    r.q_balance.assign(n, 0.0);
    for (const auto& g : c.generators) {
        r.p_balance[g.bus] += pt.pg[g.index];
        r.q_balance[g.bus] += pt.qg[g.index];
    }
    for (const auto& l : c.loads) {
        r.p_balance[l.bus] -= loads[l.index][0];
        r.q_balance[l.bus] -= loads[l.index][1];
    }
    // p_i -= vm_i sum_j vm_j (G cos t + B sin t), q_i -= vm_i sum_j vm_j (G sin t - B cos t)
    for (int i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (int k = y.row_ptr[i]; k < y.row_ptr[i + 1]; ++k) {
            const int j = y.col[k];
            const double gij = y.val[k].real();
            const double bij = y.val[k].imag();
            const double t = pt.va[i] - pt.va[j];
            const double ct = std::cos(t);
            const double st = std::sin(t);
            pi += pt.vm[j] * (gij * ct + bij * st);
            qi += pt.vm[j] * (gij * st - bij * ct);
        }
        r.p_balance[i] -= pt.vm[i] * pi;
        r.q_balance[i] -= pt.vm[i] * qi;
    }
    r.ref_angle = pt.va[c.reference_bus()];
    return r;
}

namespace {

struct BranchFlow {
    double s_from, s_to;  // apparent power magnitudes, p.u.
};

BranchFlow branch_flow(const grid::Branch& br, const pf::OperatingPoint& pt) {
    const grid::BranchAdmittance a = grid::branch_admittance(br);
    const std::complex<double> vf = std::polar(pt.vm[br.from_bus], pt.va[br.from_bus]);
    const std::complex<double> vt = std::polar(pt.vm[br.to_bus], pt.va[br.to_bus]);
    const std::complex<double> sf = vf * std::conj(a.yff * vf + a.yft * vt);
    const std::complex<double> st = vt * std::conj(a.ytf * vf + a.ytt * vt);
    return {std::abs(sf), std::abs(st)};
}

}  // namespace

InequalityResult inequality_violations(const grid::GridCase& c,
                                       const pf::OperatingPoint& pt) {
    pt.check_sizes(c);
    InequalityResult r;
    r.vm_viol.resize(c.buses.size());
    for (const auto& b : c.buses)
        r.vm_viol[b.index] =
            std::max({b.vmin - pt.vm[b.index], pt.vm[b.index] - b.vmax, 0.0});
    r.pg_viol.resize(c.generators.size());
    r.qg_viol.resize(c.generators.size());
    for (const auto& g : c.generators) {
        r.pg_viol[g.index] =
            std::max({g.pmin - pt.pg[g.index], pt.pg[g.index] - g.pmax, 0.0});
        r.qg_viol[g.index] =
            std::max({g.qmin - pt.qg[g.index], pt.qg[g.index] - g.qmax, 0.0});
    }
    r.line_viol.resize(c.branches.size());
    for (const auto& br : c.branches) {
        if (br.s_max <= 0.0) {
            r.line_viol[br.index] = 0.0;
            continue;
        }
        const BranchFlow f = branch_flow(br, pt);
        r.line_viol[br.index] =
            std::max({f.s_from - br.s_max, f.s_to - br.s_max, 0.0});
    }
    return r;
}

std::vector<double> equality_vector(const grid::GridCase& c,
                                    const std::vector<std::array<double, 2>>& loads,
                                    const pf::OperatingPoint& pt) {
    const EqualityResult e = equality_residuals(c, loads, pt);
    std::vector<double> r;
    r.reserve(2 * e.p_balance.size() + 1);
    r.insert(r.end(), e.p_balance.begin(), e.p_balance.end());
    r.insert(r.end(), e.q_balance.begin(), e.q_balance.end());
    r.push_back(e.ref_angle);
    return r;
}

std::vector<double> inequality_vector(const grid::GridCase& c,
                                      const pf::OperatingPoint& pt) {
    pt.check_sizes(c);
    const ConstraintLayout layout = ConstraintLayout::from_case(c);
    std::vector<double> h;
    h.reserve(layout.ineq_count());
    for (const auto& b : c.buses) h.push_back(b.vmin - pt.vm[b.index]);
    for (const auto& b : c.buses) h.push_back(pt.vm[b.index] - b.vmax);
    for (const auto& g : c.generators) h.push_back(g.pmin - pt.pg[g.index]);
    for (const auto& g : c.generators) h.push_back(pt.pg[g.index] - g.pmax);
    for (const auto& g : c.generators) h.push_back(g.qmin - pt.qg[g.index]);
    for (const auto& g : c.generators) h.push_back(pt.qg[g.index] - g.qmax);
    std::vector<double> from_side, to_side;
    for (int idx : layout.limited_branches) {
        const BranchFlow f = branch_flow(c.branches[idx], pt);
        from_side.push_back(f.s_from - c.branches[idx].s_max);
        to_side.push_back(f.s_to - c.branches[idx].s_max);
    }
    h.insert(h.end(), from_side.begin(), from_side.end());
    h.insert(h.end(), to_side.begin(), to_side.end());
    return h;
}

ResidualReport residual_report(const grid::GridCase& c,
                               const std::vector<std::array<double, 2>>& loads,
                               const pf::OperatingPoint& pt) {
    const EqualityResult e = equality_residuals(c, loads, pt);
    const InequalityResult i = inequality_violations(c, pt);
    ResidualReport r;
    r.p_balance = e.p_balance;
    r.q_balance = e.q_balance;
    r.ref_angle = e.ref_angle;
    r.vm_viol = i.vm_viol;
    r.pg_viol = i.pg_viol;
    r.qg_viol = i.qg_viol;
    r.line_viol = i.line_viol;
    return r;
}

namespace {

double family_norm(const std::vector<double>& v, double scale) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s) / scale;
}

}  // namespace

ViolationSummary violation_summary(const ResidualReport& r, int n_bus) {
    if (n_bus <= 0) throw ValidationError("violation_summary: n_bus must be positive");
    const double scale = std::sqrt(static_cast<double>(n_bus));
    ViolationSummary s;
    s.p = family_norm(r.p_balance, scale);
    s.q = family_norm(r.q_balance, scale);
    s.ref = std::abs(r.ref_angle) / scale;
    s.vm = family_norm(r.vm_viol, scale);
    s.pg = family_norm(r.pg_viol, scale);
    s.qg = family_norm(r.qg_viol, scale);
    s.line = family_norm(r.line_viol, scale);
    s.total = s.p + s.q + s.ref + s.vm + s.pg + s.qg + s.line;
    return s;
}

}  // namespace lumina::res
