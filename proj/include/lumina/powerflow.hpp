#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lumina/grid.hpp"

namespace lumina::pf {

/// Full ACOPF decision vector: the supervision target y and the prediction.
struct OperatingPoint {
    std::vector<double> vm;  // per bus, p.u.
    std::vector<double> va;  // per bus, radians; reference bus at 0
    std::vector<double> pg;  // per generator, p.u.
    std::vector<double> qg;  // per generator, p.u.

    void check_sizes(const grid::GridCase& c) const;
};

struct PowerFlowResult {
    OperatingPoint point;
    bool converged = false;
    int iterations = 0;
    double max_mismatch = 0.0;
    std::vector<double> mismatch_trace;  // max |mismatch| before each update
};

/// Proportional-headroom dispatch: pg_i = pmin_i + headroom_i / sum(headroom)
/// * (total_pd - sum(pmin)), clamped to the box; the slack generator absorbs
/// the network residual during the solve. Throws ValidationError
/// ("insufficient capacity") when total load exceeds total pmax.
std::vector<double> dispatch_heuristic(const grid::GridCase& c,
                                       const std::vector<std::array<double, 2>>& loads);

/// Polar Newton-Raphson with PV/PQ/slack typing. Buses holding generators are
/// PV at the generator vm setpoint; flat start unless warm_start is given.
PowerFlowResult nr_solve(const grid::GridCase& c,
                         const std::vector<std::array<double, 2>>& loads,
                         const std::vector<double>& pg_setpoints, double tol = 1e-8,
                         int max_iter = 50,
                         const OperatingPoint* warm_start = nullptr);

enum class LimitPolicy {
    strict,   // reject any inequality violation
    relaxed,  // tolerate thermal (line) violations only
};

/// Per-load uniform scaling factors in [lo, hi] applied to nominal (pd, qd);
/// the deterministic primitive behind dataset::perturb_loads and instance
/// generation.
std::vector<std::array<double, 2>> draw_load_profile(const grid::GridCase& c,
                                                     uint64_t seed, double lo,
                                                     double hi);

struct LabeledInstance {
    std::string case_id;
    std::vector<std::array<double, 2>> load_profile;
    OperatingPoint label;
    double total_load = 0.0;  // sum of pd, p.u.
};

struct GenerationOutcome {
    std::optional<LabeledInstance> instance;  // empty on rejection
    std::string rejection_reason;             // set on rejection
};

/// Draw a perturbed load profile, dispatch, and solve; accept only points that
/// satisfy the equality check (< 1e-6) and the limit policy. Rejection is a
/// normal outcome, never an exception.
GenerationOutcome generate_labeled_instance(const grid::GridCase& c, uint64_t seed,
                                            double perturb_lo, double perturb_hi,
                                            LimitPolicy policy = LimitPolicy::strict);

}  // namespace lumina::pf
