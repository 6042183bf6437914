#pragma once

#include "lumina/residuals.hpp"
#include "lumina/tape.hpp"

namespace lumina::res {

/// Topology-constant structure for building residuals on a tape: flattened
/// admittance entries, component-to-bus maps, limits, and branch admittance
/// blocks for the thermally limited branches.
struct ResidualPlan {
    int n_bus = 0;
    int n_gen = 0;
    int ref_bus = 0;
    ad::IndexList ent_i, ent_j;      // admittance entry endpoints
    std::vector<double> ent_g, ent_b;
    ad::IndexList gen_bus;
    std::vector<double> vmin, vmax, pmin, pmax, qmin, qmax;
    // Limited branches (s_max > 0), in ConstraintLayout order.
    ad::IndexList lim_from, lim_to;
    std::vector<double> gff, bff, gft, bft, gtf, btf, gtt, btt, smax;
    ConstraintLayout layout;

    static ResidualPlan from_case(const grid::GridCase& c);
    /// Per-bus aggregated load injections for one instance.
    void bus_loads(const std::vector<std::array<double, 2>>& profile,
                   std::vector<double>& pd_bus, std::vector<double>& qd_bus) const;

private:
    std::vector<int> load_bus_;
};

/// Traced residual tensors with gradients flowing to vm, va, pg, qg.
template <class T>
struct TracedResiduals {
    typename ad::Tape<T>::Id r;  // equality vector, layout as equality_vector
    typename ad::Tape<T>::Id h;  // raw inequality vector, layout as inequality_vector
};

/// Build r and h on the tape; numerically matches the pure path within 1e-12
/// in double precision.
template <class T>
TracedResiduals<T> differentiable_residuals(ad::Tape<T>& tape, const ResidualPlan& plan,
                                            typename ad::Tape<T>::Id vm,
                                            typename ad::Tape<T>::Id va,
                                            typename ad::Tape<T>::Id pg,
                                            typename ad::Tape<T>::Id qg,
                                            const std::vector<double>& pd_bus,
                                            const std::vector<double>& qd_bus);

}  // namespace lumina::res
