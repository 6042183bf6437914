#include "lumina/objectives.hpp"

#include <algorithm>

namespace lumina::obj {

Objective parse_objective(const std::string& s) {
    if (s == "mse") return Objective::mse;
    if (s == "al") return Objective::al;
    if (s == "vbl") return Objective::vbl;
    throw ValidationError("unknown objective '" + s + "' (expected mse|al|vbl)");
}

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::mse: return "mse";
        case Objective::al: return "al";
        case Objective::vbl: return "vbl";
    }
    return "?";
}

DualState DualState::zeros(const res::ConstraintLayout& layout, double rho,
                           int64_t update_period) {
    if (rho <= 0.0) throw ValidationError("DualState: rho must be positive");
    DualState d;
    d.lambda.assign(layout.eq_count(), 0.0);
    d.mu.assign(layout.ineq_count(), 0.0);
    d.rho = rho;
    d.update_period = update_period;
    return d;
}

void DualState::check_sizes(const res::ConstraintLayout& layout) const {
    if (static_cast<int64_t>(lambda.size()) != layout.eq_count() ||
        static_cast<int64_t>(mu.size()) != layout.ineq_count())
        throw ValidationError(
            "dual state sized " + std::to_string(lambda.size()) + "/" +
            std::to_string(mu.size()) + " does not match constraint counts " +
            std::to_string(layout.eq_count()) + "/" + std::to_string(layout.ineq_count()));
}

template <class T>
Id<T> mse_loss(ad::Tape<T>& tape, Id<T> pred, Id<T> label) {
    return tape.mean(tape.square(tape.sub(pred, label)));
}

namespace {

template <class T>
Id<T> dual_dot(ad::Tape<T>& tape, const std::vector<double>& mult, Id<T> vec) {
    const std::vector<T> cast(mult.begin(), mult.end());
    const auto c = tape.constant(ad::Shape::vec(static_cast<int64_t>(cast.size())),
                                 std::span<const T>(cast));
    return tape.sum(tape.mul(c, vec));
}

}  // namespace

template <class T>
Id<T> al_loss(ad::Tape<T>& tape, Id<T> pred, Id<T> label,
              const res::TracedResiduals<T>& rh, const DualState& duals,
              bool clip_quadratic) {
    if (tape.shape(rh.r).numel() != static_cast<int64_t>(duals.lambda.size()) ||
        tape.shape(rh.h).numel() != static_cast<int64_t>(duals.mu.size()))
        throw ValidationError("al_loss: dual size mismatch");
    const T half_rho = static_cast<T>(duals.rho / 2.0);
    Id<T> loss = mse_loss(tape, pred, label);
    loss = tape.add(loss, dual_dot(tape, duals.lambda, rh.r));
    loss = tape.add(loss, tape.mul(tape.constant_scalar(half_rho),
                                   tape.sum(tape.square(rh.r))));
    loss = tape.add(loss, dual_dot(tape, duals.mu, tape.max_with_zero(rh.h)));
    const Id<T> h_quad = clip_quadratic ? tape.max_with_zero(rh.h) : rh.h;
    loss = tape.add(loss, tape.mul(tape.constant_scalar(half_rho),
                                   tape.sum(tape.square(h_quad))));
    return loss;
}

template <class T>
Id<T> vbl_loss(ad::Tape<T>& tape, Id<T> pred, Id<T> label,
               const res::TracedResiduals<T>& rh, const DualState& duals) {
    if (tape.shape(rh.r).numel() != static_cast<int64_t>(duals.lambda.size()) ||
        tape.shape(rh.h).numel() != static_cast<int64_t>(duals.mu.size()))
        throw ValidationError("vbl_loss: dual size mismatch");
    for (double v : duals.lambda)
        if (v < 0.0) throw ValidationError("vbl_loss: negative lambda multiplier");
    for (double v : duals.mu)
        if (v < 0.0) throw ValidationError("vbl_loss: negative mu multiplier");
    Id<T> loss = mse_loss(tape, pred, label);
    loss = tape.add(loss, dual_dot(tape, duals.lambda, tape.vabs(rh.r)));
    loss = tape.add(loss, dual_dot(tape, duals.mu, tape.max_with_zero(rh.h)));
    return loss;
}

void dual_update_al(DualState& duals, std::span<const double> r_mean,
                    std::span<const double> h_mean) {
    if (r_mean.size() != duals.lambda.size() || h_mean.size() != duals.mu.size())
        throw ValidationError("dual_update_al: residual size mismatch");
    for (size_t i = 0; i < duals.lambda.size(); ++i)
        duals.lambda[i] += duals.rho * r_mean[i];
    for (size_t i = 0; i < duals.mu.size(); ++i) {
        duals.mu[i] += duals.rho * std::max(h_mean[i], 0.0);
        duals.mu[i] = std::max(duals.mu[i], 0.0);
    }
}

void dual_update_vbl(DualState& duals, std::span<const double> r_mean,
                     std::span<const double> h_mean) {
    if (r_mean.size() != duals.lambda.size() || h_mean.size() != duals.mu.size())
        throw ValidationError("dual_update_vbl: residual size mismatch");
    for (size_t i = 0; i < duals.lambda.size(); ++i)
        duals.lambda[i] += duals.rho * std::abs(r_mean[i]);
    for (size_t i = 0; i < duals.mu.size(); ++i)
        duals.mu[i] += duals.rho * std::max(h_mean[i], 0.0);
}

#define LUMINA_INSTANTIATE(T)                                                        \
    template Id<T> mse_loss<T>(ad::Tape<T>&, Id<T>, Id<T>);                          \
    template Id<T> al_loss<T>(ad::Tape<T>&, Id<T>, Id<T>,                            \
                              const res::TracedResiduals<T>&, const DualState&,      \
                              bool);                                                 \
    template Id<T> vbl_loss<T>(ad::Tape<T>&, Id<T>, Id<T>,                           \
                               const res::TracedResiduals<T>&, const DualState&);

LUMINA_INSTANTIATE(float)
LUMINA_INSTANTIATE(double)
#undef LUMINA_INSTANTIATE

}  // namespace lumina::obj
