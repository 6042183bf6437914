#pragma once

#include <array>
#include <string>
#include <vector>

#include "lumina/powerflow.hpp"

namespace lumina::res {

/// Index bookkeeping for the flattened constraint vectors.
///
/// Equalities r (length 2 n_bus + 1):
///   [p_balance(n_bus) | q_balance(n_bus) | ref_angle]
/// Inequalities h (length 2 n_bus + 4 n_gen + 2 n_limited):
///   [vm_lo | vm_hi | pg_lo | pg_hi | qg_lo | qg_hi | line_from | line_to]
/// Branches with s_max = 0 carry no thermal constraint and are excluded.
struct ConstraintLayout {
    int n_bus = 0;
    int n_gen = 0;
    std::vector<int> limited_branches;  // branch indices with s_max > 0

    static ConstraintLayout from_case(const grid::GridCase& c);
    int n_limited() const { return static_cast<int>(limited_branches.size()); }
    int64_t eq_count() const { return 2 * n_bus + 1; }
    int64_t ineq_count() const { return 2 * n_bus + 4 * n_gen + 2 * n_limited(); }
};

/// Per-family equality residuals and clipped inequality violations.
struct ResidualReport {
    std::vector<double> p_balance;  // per bus
    std::vector<double> q_balance;  // per bus
    double ref_angle = 0.0;
    std::vector<double> vm_viol;    // per bus, >= 0
    std::vector<double> pg_viol;    // per generator, >= 0
    std::vector<double> qg_viol;    // per generator, >= 0
    std::vector<double> line_viol;  // per branch (worst end), >= 0
};

/// Family L2 norms, each divided by sqrt(n_bus); total is their sum.
struct ViolationSummary {
    double p = 0, q = 0, ref = 0;
    double vm = 0, pg = 0, qg = 0, line = 0;
    double total = 0;

    static const std::vector<std::string>& family_names();
    std::array<double, 7> families() const { return {p, q, ref, vm, pg, qg, line}; }
};

struct EqualityResult {
    std::vector<double> p_balance;
    std::vector<double> q_balance;
    double ref_angle = 0.0;
};

/// Polar power-balance residuals. `loads` is the instance load profile; pass
/// the case nominal loads for unperturbed evaluation.
EqualityResult equality_residuals(const grid::GridCase& c,
                                  const std::vector<std::array<double, 2>>& loads,
                                  const pf::OperatingPoint& pt);

/// Same, reusing a prebuilt admittance matrix.
EqualityResult equality_residuals(const grid::GridCase& c,
                                  const grid::SparseComplexMatrix& y,
                                  const std::vector<std::array<double, 2>>& loads,
                                  const pf::OperatingPoint& pt);

struct InequalityResult {
    std::vector<double> vm_viol;
    std::vector<double> pg_viol;
    std::vector<double> qg_viol;
    std::vector<double> line_viol;
};

InequalityResult inequality_violations(const grid::GridCase& c,
                                       const pf::OperatingPoint& pt);

/// Raw constraint vectors in the ConstraintLayout order. h is unclipped
/// (negative entries mean slack); the losses clip where the formulation says.
std::vector<double> equality_vector(const grid::GridCase& c,
                                    const std::vector<std::array<double, 2>>& loads,
                                    const pf::OperatingPoint& pt);
std::vector<double> inequality_vector(const grid::GridCase& c,
                                      const pf::OperatingPoint& pt);

ResidualReport residual_report(const grid::GridCase& c,
                               const std::vector<std::array<double, 2>>& loads,
                               const pf::OperatingPoint& pt);

ViolationSummary violation_summary(const ResidualReport& r, int n_bus);

}  // namespace lumina::res
