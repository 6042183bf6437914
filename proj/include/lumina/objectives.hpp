#pragma once

#include <span>
#include <string>
#include <vector>

#include "lumina/residuals_ad.hpp"

namespace lumina::obj {

enum class Objective { mse, al, vbl };

Objective parse_objective(const std::string& s);
std::string objective_name(Objective o);

/// Per-topology multipliers for the constraint vectors, plus the shared
/// penalty/step size. mu stays elementwise nonnegative.
struct DualState {
    std::vector<double> lambda;  // one per equality constraint
    std::vector<double> mu;      // one per inequality constraint
    double rho = 0.1;
    int64_t update_period = 200;

    static DualState zeros(const res::ConstraintLayout& layout, double rho,
                           int64_t update_period);
    void check_sizes(const res::ConstraintLayout& layout) const;
};

template <class T>
using Id = typename ad::Tape<T>::Id;

/// Mean squared error over all solution components (normalized target space).
template <class T>
Id<T> mse_loss(ad::Tape<T>& tape, Id<T> pred, Id<T> label);

/// Augmented Lagrangian:
///   mse + lambda^T r + (rho/2)||r||^2 + mu^T max(h,0) + (rho/2)||h||^2.
/// The quadratic inequality term uses raw h by default; clip_quadratic
/// switches it to the clipped variant.
template <class T>
Id<T> al_loss(ad::Tape<T>& tape, Id<T> pred, Id<T> label,
              const res::TracedResiduals<T>& rh, const DualState& duals,
              bool clip_quadratic = false);

/// Violation-based Lagrangian: mse + lambda^T |r| + mu^T max(h,0).
/// Requires nonnegative multipliers.
template <class T>
Id<T> vbl_loss(ad::Tape<T>& tape, Id<T> pred, Id<T> label,
               const res::TracedResiduals<T>& rh, const DualState& duals);

/// Ascent step from window-averaged residuals: lambda += rho * r,
/// mu += rho * max(h, 0), then project mu to be nonnegative.
void dual_update_al(DualState& duals, std::span<const double> r_mean,
                    std::span<const double> h_mean);

/// Ascent step: lambda += rho * |r|, mu += rho * max(h, 0). Both multiplier
/// vectors are monotonically non-decreasing under this update.
void dual_update_vbl(DualState& duals, std::span<const double> r_mean,
                     std::span<const double> h_mean);

}  // namespace lumina::obj
