#include "lumina/residuals_ad.hpp"

namespace lumina::res {

ResidualPlan ResidualPlan::from_case(const grid::GridCase& c) {
    ResidualPlan p;
    p.n_bus = c.n_bus();
    p.n_gen = c.n_gen();
    p.ref_bus = c.reference_bus();
    p.layout = ConstraintLayout::from_case(c);

    const grid::SparseComplexMatrix y = grid::build_admittance(c);
    std::vector<ad::Index> ei, ej;
    for (int i = 0; i < y.n; ++i) {
        for (int k = y.row_ptr[i]; k < y.row_ptr[i + 1]; ++k) {
            ei.push_back(i);
            ej.push_back(y.col[k]);
            p.ent_g.push_back(y.val[k].real());
            p.ent_b.push_back(y.val[k].imag());
        }
    }
    p.ent_i = ad::make_indices(std::move(ei));
    p.ent_j = ad::make_indices(std::move(ej));

    std::vector<ad::Index> gb;
    for (const auto& g : c.generators) {
        gb.push_back(g.bus);
        p.pmin.push_back(g.pmin);
        p.pmax.push_back(g.pmax);
        p.qmin.push_back(g.qmin);
        p.qmax.push_back(g.qmax);
    }
    p.gen_bus = ad::make_indices(std::move(gb));

    for (const auto& b : c.buses) {
        p.vmin.push_back(b.vmin);
        p.vmax.push_back(b.vmax);
    }

    std::vector<ad::Index> lf, lt;
    for (int idx : p.layout.limited_branches) {
        const auto& br = c.branches[idx];
        const grid::BranchAdmittance a = grid::branch_admittance(br);
        lf.push_back(br.from_bus);
        lt.push_back(br.to_bus);
        p.gff.push_back(a.yff.real());
        p.bff.push_back(a.yff.imag());
        p.gft.push_back(a.yft.real());
        p.bft.push_back(a.yft.imag());
        p.gtf.push_back(a.ytf.real());
        p.btf.push_back(a.ytf.imag());
        p.gtt.push_back(a.ytt.real());
        p.btt.push_back(a.ytt.imag());
        p.smax.push_back(br.s_max);
    }
    p.lim_from = ad::make_indices(std::move(lf));
    p.lim_to = ad::make_indices(std::move(lt));

    for (const auto& l : c.loads) p.load_bus_.push_back(l.bus);
    return p;
}

void ResidualPlan::bus_loads(const std::vector<std::array<double, 2>>& profile,
                             std::vector<double>& pd_bus,
                             std::vector<double>& qd_bus) const {
    if (profile.size() != load_bus_.size())
        throw ValidationError("bus_loads: load profile length mismatch");
    pd_bus.assign(n_bus, 0.0);
    qd_bus.assign(n_bus, 0.0);
    for (size_t i = 0; i < profile.size(); ++i) {
        pd_bus[load_bus_[i]] += profile[i][0];
        qd_bus[load_bus_[i]] += profile[i][1];
    }
}

namespace {

template <class T>
std::vector<T> cast_vec(const std::vector<double>& v) {
    return std::vector<T>(v.begin(), v.end());
}

}  // namespace

template <class T>
TracedResiduals<T> differentiable_residuals(ad::Tape<T>& tape, const ResidualPlan& plan,
                                            typename ad::Tape<T>::Id vm,
                                            typename ad::Tape<T>::Id va,
                                            typename ad::Tape<T>::Id pg,
                                            typename ad::Tape<T>::Id qg,
                                            const std::vector<double>& pd_bus,
                                            const std::vector<double>& qd_bus) {
    using Id = typename ad::Tape<T>::Id;
    const int n = plan.n_bus;
    const auto vecc = [&](const std::vector<double>& v) {
        const auto cv = cast_vec<T>(v);
        return tape.constant(ad::Shape::vec(static_cast<int64_t>(cv.size())),
                             std::span<const T>(cv));
    };

    // Flow terms per admittance entry (i, j).
    const Id vi = tape.gather_rows(vm, plan.ent_i);
    const Id vj = tape.gather_rows(vm, plan.ent_j);
    const Id theta = tape.sub(tape.gather_rows(va, plan.ent_i),
                              tape.gather_rows(va, plan.ent_j));
    const Id ct = tape.vcos(theta);
    const Id st = tape.vsin(theta);
    const Id gv = vecc(plan.ent_g);
    const Id bv = vecc(plan.ent_b);
    const Id vivj = tape.mul(vi, vj);
    const Id p_term = tape.mul(vivj, tape.add(tape.mul(gv, ct), tape.mul(bv, st)));
    const Id q_term = tape.mul(vivj, tape.sub(tape.mul(gv, st), tape.mul(bv, ct)));
    const Id p_flow = tape.scatter_add_rows(p_term, plan.ent_i, n);
    const Id q_flow = tape.scatter_add_rows(q_term, plan.ent_i, n);

    const Id pg_bus = tape.scatter_add_rows(pg, plan.gen_bus, n);
    const Id qg_bus = tape.scatter_add_rows(qg, plan.gen_bus, n);
    const Id p_bal = tape.sub(tape.sub(pg_bus, vecc(pd_bus)), p_flow);
    const Id q_bal = tape.sub(tape.sub(qg_bus, vecc(qd_bus)), q_flow);

    const Id ref = tape.gather_rows(
        va, ad::make_indices({static_cast<ad::Index>(plan.ref_bus)}));
    const Id r = tape.concat(tape.concat(p_bal, q_bal, 0), ref, 0);

    // Box constraints, unclipped.
    Id h = tape.sub(vecc(plan.vmin), vm);                      // vm_lo
    h = tape.concat(h, tape.sub(vm, vecc(plan.vmax)), 0);      // vm_hi
    h = tape.concat(h, tape.sub(vecc(plan.pmin), pg), 0);      // pg_lo
    h = tape.concat(h, tape.sub(pg, vecc(plan.pmax)), 0);      // pg_hi
    h = tape.concat(h, tape.sub(vecc(plan.qmin), qg), 0);      // qg_lo
    h = tape.concat(h, tape.sub(qg, vecc(plan.qmax)), 0);      // qg_hi

    if (!plan.smax.empty()) {
        // Rectangular voltages at the branch ends.
        const Id vmf = tape.gather_rows(vm, plan.lim_from);
        const Id vaf = tape.gather_rows(va, plan.lim_from);
        const Id vmt = tape.gather_rows(vm, plan.lim_to);
        const Id vat = tape.gather_rows(va, plan.lim_to);
        const Id ef = tape.mul(vmf, tape.vcos(vaf));
        const Id ff = tape.mul(vmf, tape.vsin(vaf));
        const Id et = tape.mul(vmt, tape.vcos(vat));
        const Id ft = tape.mul(vmt, tape.vsin(vat));
        const Id Gff = vecc(plan.gff), Bff = vecc(plan.bff);
        const Id Gft = vecc(plan.gft), Bft = vecc(plan.bft);
        const Id Gtf = vecc(plan.gtf), Btf = vecc(plan.btf);
        const Id Gtt = vecc(plan.gtt), Btt = vecc(plan.btt);
        const Id smax = vecc(plan.smax);

        const auto apparent = [&](Id e_self, Id f_self, Id g1, Id b1, Id e1, Id f1,
                                  Id g2, Id b2, Id e2, Id f2) {
            // I = (g1 + j b1)(e1 + j f1) + (g2 + j b2)(e2 + j f2)
            const Id ire = tape.add(tape.sub(tape.mul(g1, e1), tape.mul(b1, f1)),
                                    tape.sub(tape.mul(g2, e2), tape.mul(b2, f2)));
            const Id iim = tape.add(tape.add(tape.mul(g1, f1), tape.mul(b1, e1)),
                                    tape.add(tape.mul(g2, f2), tape.mul(b2, e2)));
            // S = V conj(I)
            const Id pr = tape.add(tape.mul(e_self, ire), tape.mul(f_self, iim));
            const Id qr = tape.sub(tape.mul(f_self, ire), tape.mul(e_self, iim));
            return tape.vsqrt(tape.add(tape.square(pr), tape.square(qr)));
        };

        const Id s_from = apparent(ef, ff, Gff, Bff, ef, ff, Gft, Bft, et, ft);
        const Id s_to = apparent(et, ft, Gtf, Btf, ef, ff, Gtt, Btt, et, ft);
        h = tape.concat(h, tape.sub(s_from, smax), 0);
        h = tape.concat(h, tape.sub(s_to, smax), 0);
    }

    return {r, h};
}

template TracedResiduals<float> differentiable_residuals<float>(
    ad::Tape<float>&, const ResidualPlan&, ad::Tape<float>::Id, ad::Tape<float>::Id,
    ad::Tape<float>::Id, ad::Tape<float>::Id, const std::vector<double>&,
    const std::vector<double>&);
template TracedResiduals<double> differentiable_residuals<double>(
    ad::Tape<double>&, const ResidualPlan&, ad::Tape<double>::Id, ad::Tape<double>::Id,
    ad::Tape<double>::Id, ad::Tape<double>::Id, const std::vector<double>&,
    const std::vector<double>&);

}  // namespace lumina::res
