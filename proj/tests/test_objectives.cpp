#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lumina/dataset.hpp"
#include "lumina/objectives.hpp"

using namespace lumina;
using ad::Shape;
using ad::Tape;
using Id = Tape<double>::Id;

namespace {

grid::GridCase fixture(const std::string& name) {
    return data::load_case(std::string(LUMINA_FIXTURE_DIR) + "/" + name + ".json");
}

std::vector<std::array<double, 2>> nominal(const grid::GridCase& c) {
    std::vector<std::array<double, 2>> out;
    for (const auto& l : c.loads) out.push_back({l.pd, l.qd});
    return out;
}

struct TracedPoint {
    Tape<double> tape;
    Id vm, va, pg, qg;
    Id pred, label;
    res::TracedResiduals<double> rh;

    TracedPoint(const grid::GridCase& c, const res::ResidualPlan& plan,
                const pf::OperatingPoint& pt, const pf::OperatingPoint& target,
                const std::vector<std::array<double, 2>>& loads) {
        vm = tape.param(Shape::vec(c.n_bus()), pt.vm);
        va = tape.param(Shape::vec(c.n_bus()), pt.va);
        pg = tape.param(Shape::vec(c.n_gen()), pt.pg);
        qg = tape.param(Shape::vec(c.n_gen()), pt.qg);
        std::vector<double> pd_bus, qd_bus;
        plan.bus_loads(loads, pd_bus, qd_bus);
        rh = res::differentiable_residuals(tape, plan, vm, va, pg, qg, pd_bus, qd_bus);
        // Prediction/label vectors: raw stacked decision values.
        pred = tape.concat(tape.concat(vm, va, 0), tape.concat(pg, qg, 0), 0);
        std::vector<double> tvec;
        tvec.insert(tvec.end(), target.vm.begin(), target.vm.end());
        tvec.insert(tvec.end(), target.va.begin(), target.va.end());
        tvec.insert(tvec.end(), target.pg.begin(), target.pg.end());
        tvec.insert(tvec.end(), target.qg.begin(), target.qg.end());
        label = tape.constant(Shape::vec(static_cast<int64_t>(tvec.size())), tvec);
    }
};

pf::OperatingPoint random_point(const grid::GridCase& c, std::mt19937_64& g) {
    pf::OperatingPoint pt;
    for (int i = 0; i < c.n_bus(); ++i) {
        pt.vm.push_back(rng::uniform(g, 0.92, 1.08));
        pt.va.push_back(i == c.reference_bus() ? 0.0 : rng::uniform(g, -0.2, 0.2));
    }
    for (int i = 0; i < c.n_gen(); ++i) {
        pt.pg.push_back(rng::uniform(g, 0.0, 1.5));
        pt.qg.push_back(rng::uniform(g, -0.8, 0.8));
    }
    return pt;
}

}  // namespace

TEST_CASE("mse_loss basics") {
    Tape<double> t;
    const std::vector<double> y = {1.0, -2.0, 0.5};
    const auto a = t.constant(Shape::vec(3), y);
    CHECK(t.value(obj::mse_loss(t, a, a))[0] == 0.0);

    std::vector<double> y1 = {2.0, -1.0, 1.5};  // y + 1
    const auto b = t.constant(Shape::vec(3), y1);
    CHECK(t.value(obj::mse_loss(t, b, a))[0] == doctest::Approx(1.0).epsilon(1e-15));

    // Independent sum-of-squares oracle on random pairs.
    auto g = rng::make_stream(1, 1);
    std::vector<double> u(7), v(7);
    for (auto& x : u) x = rng::uniform(g, -2, 2);
    for (auto& x : v) x = rng::uniform(g, -2, 2);
    double want = 0.0;
    for (int i = 0; i < 7; ++i) want += (u[i] - v[i]) * (u[i] - v[i]);
    want /= 7.0;
    const auto iu = t.constant(Shape::vec(7), u);
    const auto iv = t.constant(Shape::vec(7), v);
    CHECK(std::abs(t.value(obj::mse_loss(t, iu, iv))[0] - want) < 1e-12);
}

TEST_CASE("al_loss and vbl_loss reduce exactly to mse at zero duals") {
    const auto c = fixture("case3");
    const auto plan = res::ResidualPlan::from_case(c);
    auto g = rng::make_stream(2, 0);
    const auto pt = random_point(c, g);
    const auto target = random_point(c, g);

    obj::DualState zero;
    zero.lambda.assign(plan.layout.eq_count(), 0.0);
    zero.mu.assign(plan.layout.ineq_count(), 0.0);
    zero.rho = 0.0;

    TracedPoint tp(c, plan, pt, target, nominal(c));
    const double mse = tp.tape.value(obj::mse_loss(tp.tape, tp.pred, tp.label))[0];
    const double al =
        tp.tape.value(obj::al_loss(tp.tape, tp.pred, tp.label, tp.rh, zero))[0];
    const double vbl =
        tp.tape.value(obj::vbl_loss(tp.tape, tp.pred, tp.label, tp.rh, zero))[0];
    CHECK(std::abs(al - mse) < 1e-12);
    CHECK(std::abs(vbl - mse) < 1e-12);
}

TEST_CASE("AL on a feasible point keeps the raw-h quadratic, per the printed form") {
    // Single-line network held at the exact flat solution: r is exactly zero,
    // every inequality is satisfied (pg sits on its lower bound, max{h,0}=0).
    auto c = fixture("case2");
    c.branches[0].b_charging = 0.0;
    const auto plan = res::ResidualPlan::from_case(c);
    std::vector<std::array<double, 2>> zero_loads = {{0.0, 0.0}};
    pf::OperatingPoint pt;
    pt.vm = {1.0, 1.0};
    pt.va = {0.0, 0.0};
    pt.pg = {0.0};
    pt.qg = {0.0};
    auto g = rng::make_stream(3, 0);
    const auto target = random_point(c, g);

    const auto r_pure = res::equality_vector(c, zero_loads, pt);
    for (double v : r_pure) REQUIRE(v == 0.0);
    const auto h_pure = res::inequality_vector(c, pt);
    for (double v : h_pure) REQUIRE(v <= 0.0);
    double h_sq = 0.0;
    for (double v : h_pure) h_sq += v * v;

    obj::DualState duals;
    duals.lambda.assign(plan.layout.eq_count(), 0.0);
    duals.mu.assign(plan.layout.ineq_count(), 0.7);  // arbitrary, clipped term is 0
    duals.rho = 2.0;

    TracedPoint tp(c, plan, pt, target, zero_loads);
    const double mse = tp.tape.value(obj::mse_loss(tp.tape, tp.pred, tp.label))[0];
    const double al =
        tp.tape.value(obj::al_loss(tp.tape, tp.pred, tp.label, tp.rh, duals))[0];
    CHECK(std::abs(al - (mse + duals.rho / 2.0 * h_sq)) < 1e-12);

    // The clipped variant drops the slack quadratic entirely here.
    const double al_clip = tp.tape.value(
        obj::al_loss(tp.tape, tp.pred, tp.label, tp.rh, duals, true))[0];
    CHECK(std::abs(al_clip - mse) < 1e-12);
    CHECK(al != al_clip);
}

TEST_CASE("AL and VBL match a term-by-term oracle on random case3 points") {
    const auto c = fixture("case3");
    const auto plan = res::ResidualPlan::from_case(c);
    auto g = rng::make_stream(4, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto pt = random_point(c, g);
        const auto target = random_point(c, g);
        const auto loads = nominal(c);

        obj::DualState duals;
        for (int64_t i = 0; i < plan.layout.eq_count(); ++i)
            duals.lambda.push_back(rng::uniform(g, 0.0, 1.0));
        for (int64_t i = 0; i < plan.layout.ineq_count(); ++i)
            duals.mu.push_back(rng::uniform(g, 0.0, 1.0));
        duals.rho = 2.0;

        const auto r = res::equality_vector(c, loads, pt);
        const auto h = res::inequality_vector(c, pt);
        double mse = 0.0;
        {
            std::vector<double> a, b;
            a.insert(a.end(), pt.vm.begin(), pt.vm.end());
            a.insert(a.end(), pt.va.begin(), pt.va.end());
            a.insert(a.end(), pt.pg.begin(), pt.pg.end());
            a.insert(a.end(), pt.qg.begin(), pt.qg.end());
            b.insert(b.end(), target.vm.begin(), target.vm.end());
            b.insert(b.end(), target.va.begin(), target.va.end());
            b.insert(b.end(), target.pg.begin(), target.pg.end());
            b.insert(b.end(), target.qg.begin(), target.qg.end());
            for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
            mse /= static_cast<double>(a.size());
        }
        double lam_r = 0.0, r_sq = 0.0, mu_h = 0.0, h_sq = 0.0, lam_abs = 0.0;
        for (size_t i = 0; i < r.size(); ++i) {
            lam_r += duals.lambda[i] * r[i];
            lam_abs += duals.lambda[i] * std::abs(r[i]);
            r_sq += r[i] * r[i];
        }
        for (size_t i = 0; i < h.size(); ++i) {
            mu_h += duals.mu[i] * std::max(h[i], 0.0);
            h_sq += h[i] * h[i];
        }
        const double want_al =
            mse + lam_r + duals.rho / 2.0 * r_sq + mu_h + duals.rho / 2.0 * h_sq;
        const double want_vbl = mse + lam_abs + mu_h;

        TracedPoint tp(c, plan, pt, target, loads);
        const double al =
            tp.tape.value(obj::al_loss(tp.tape, tp.pred, tp.label, tp.rh, duals))[0];
        const double vbl =
            tp.tape.value(obj::vbl_loss(tp.tape, tp.pred, tp.label, tp.rh, duals))[0];
        CHECK(std::abs(al - want_al) < 1e-10);
        CHECK(std::abs(vbl - want_vbl) < 1e-10);
    }
}

TEST_CASE("vbl_loss rejects negative multipliers") {
    const auto c = fixture("case2");
    const auto plan = res::ResidualPlan::from_case(c);
    auto g = rng::make_stream(5, 0);
    const auto pt = random_point(c, g);
    obj::DualState duals;
    duals.lambda.assign(plan.layout.eq_count(), 0.1);
    duals.mu.assign(plan.layout.ineq_count(), 0.1);
    duals.lambda[0] = -0.5;
    TracedPoint tp(c, plan, pt, pt, nominal(c));
    CHECK_THROWS_AS(obj::vbl_loss(tp.tape, tp.pred, tp.label, tp.rh, duals),
                    ValidationError);
}

TEST_CASE("loss gradients w.r.t. the prediction match finite differences") {
    const auto c = fixture("case3");
    const auto plan = res::ResidualPlan::from_case(c);
    auto g0 = rng::make_stream(6, 0);
    const auto pt0 = random_point(c, g0);
    const auto target = random_point(c, g0);
    const auto loads = nominal(c);
    // Away from the clipping kink: no h within eps of zero.
    for (double h : res::inequality_vector(c, pt0)) REQUIRE(std::abs(h) > 1e-4);

    obj::DualState duals;
    auto gd = rng::make_stream(7, 0);
    for (int64_t i = 0; i < plan.layout.eq_count(); ++i)
        duals.lambda.push_back(rng::uniform(gd, 0.0, 1.0));
    for (int64_t i = 0; i < plan.layout.ineq_count(); ++i)
        duals.mu.push_back(rng::uniform(gd, 0.0, 1.0));
    duals.rho = 1.5;

    std::vector<double> x0;
    x0.insert(x0.end(), pt0.vm.begin(), pt0.vm.end());
    x0.insert(x0.end(), pt0.va.begin(), pt0.va.end());
    x0.insert(x0.end(), pt0.pg.begin(), pt0.pg.end());
    x0.insert(x0.end(), pt0.qg.begin(), pt0.qg.end());
    const int nb = c.n_bus(), ng = c.n_gen();

    for (const bool use_al : {true, false}) {
        const auto rebuild = [&](std::span<const double> x) {
            pf::OperatingPoint p;
            p.vm.assign(x.begin(), x.begin() + nb);
            p.va.assign(x.begin() + nb, x.begin() + 2 * nb);
            p.pg.assign(x.begin() + 2 * nb, x.begin() + 2 * nb + ng);
            p.qg.assign(x.begin() + 2 * nb + ng, x.begin() + 2 * nb + 2 * ng);
            return p;
        };
        const auto value = [&](std::span<const double> x) {
            TracedPoint tp(c, plan, rebuild(x), target, loads);
            const auto id =
                use_al ? obj::al_loss(tp.tape, tp.pred, tp.label, tp.rh, duals)
                       : obj::vbl_loss(tp.tape, tp.pred, tp.label, tp.rh, duals);
            return tp.tape.value(id)[0];
        };
        const auto grad = [&](std::span<const double> x) {
            TracedPoint tp(c, plan, rebuild(x), target, loads);
            const auto id =
                use_al ? obj::al_loss(tp.tape, tp.pred, tp.label, tp.rh, duals)
                       : obj::vbl_loss(tp.tape, tp.pred, tp.label, tp.rh, duals);
            tp.tape.backward(id);
            std::vector<double> out;
            for (auto pid : {tp.vm, tp.va, tp.pg, tp.qg}) {
                const auto gi = tp.tape.grad(pid);
                out.insert(out.end(), gi.begin(), gi.end());
            }
            return out;
        };
        const auto rep = ad::grad_check(value, grad, x0, 1e-6);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("dual updates follow the ascent rules") {
    obj::DualState d;
    d.lambda = {0.0, 0.0};
    d.mu = {0.0, 0.0};
    d.rho = 0.1;

    SUBCASE("zero residuals leave duals unchanged") {
        const std::vector<double> r = {0.0, 0.0}, h = {0.0, 0.0};
        obj::dual_update_al(d, r, h);
        CHECK(d.lambda == std::vector<double>{0.0, 0.0});
        CHECK(d.mu == std::vector<double>{0.0, 0.0});
        obj::dual_update_vbl(d, r, h);
        CHECK(d.lambda == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("AL: lambda moves by rho * r") {
        const std::vector<double> r = {1.0, -0.5}, h = {0.0, 0.0};
        obj::dual_update_al(d, r, h);
        CHECK(d.lambda[0] == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(d.lambda[1] == doctest::Approx(-0.05).epsilon(1e-15));
    }
    SUBCASE("VBL: lambda moves by rho * |r|") {
        d.rho = 0.5;
        const std::vector<double> r = {-2.0, 0.0}, h = {0.0, 0.0};
        obj::dual_update_vbl(d, r, h);
        CHECK(d.lambda[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(d.lambda[1] == 0.0);
    }
    SUBCASE("mu is projected nonnegative and clips negative h") {
        const std::vector<double> r = {0.0, 0.0}, h = {-3.0, 0.4};
        obj::dual_update_al(d, r, h);
        CHECK(d.mu[0] == 0.0);
        CHECK(d.mu[1] == doctest::Approx(0.04).epsilon(1e-15));
    }
    SUBCASE("size mismatch is rejected") {
        const std::vector<double> r = {0.0};
        const std::vector<double> h = {0.0, 0.0};
        CHECK_THROWS_AS(obj::dual_update_al(d, r, h), ValidationError);
    }
}

TEST_CASE("recorded residual streams: cumulative-sum oracle and monotonicity") {
    auto g = rng::make_stream(8, 0);
    obj::DualState al;
    al.lambda.assign(3, 0.0);
    al.mu.assign(2, 0.0);
    al.rho = 0.3;
    obj::DualState vbl = al;

    std::vector<double> lam_sum_al(3, 0.0), lam_sum_vbl(3, 0.0), mu_sum(2, 0.0);
    std::vector<double> prev_vbl_lambda(3, 0.0), prev_mu(2, 0.0);
    for (int step = 0; step < 5; ++step) {
        std::vector<double> r(3), h(2);
        for (auto& v : r) v = rng::uniform(g, -1.0, 1.0);
        for (auto& v : h) v = rng::uniform(g, -1.0, 1.0);
        obj::dual_update_al(al, r, h);
        obj::dual_update_vbl(vbl, r, h);
        for (int i = 0; i < 3; ++i) {
            lam_sum_al[i] += 0.3 * r[i];
            lam_sum_vbl[i] += 0.3 * std::abs(r[i]);
        }
        for (int i = 0; i < 2; ++i) mu_sum[i] += 0.3 * std::max(h[i], 0.0);

        // Monotonicity: VBL lambda and both mu vectors never decrease.
        for (int i = 0; i < 3; ++i) CHECK(vbl.lambda[i] >= prev_vbl_lambda[i]);
        for (int i = 0; i < 2; ++i) {
            CHECK(al.mu[i] >= prev_mu[i]);
            CHECK(al.mu[i] >= 0.0);
            CHECK(vbl.mu[i] >= 0.0);
        }
        prev_vbl_lambda = vbl.lambda;
        prev_mu = al.mu;
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(al.lambda[i] == doctest::Approx(lam_sum_al[i]).epsilon(1e-12));
        CHECK(vbl.lambda[i] == doctest::Approx(lam_sum_vbl[i]).epsilon(1e-12));
    }
    for (int i = 0; i < 2; ++i)
        CHECK(al.mu[i] == doctest::Approx(mu_sum[i]).epsilon(1e-12));
}

TEST_CASE("DualState::zeros validates sizes and rho") {
    const auto c = fixture("case3");
    const auto layout = res::ConstraintLayout::from_case(c);
    const auto d = obj::DualState::zeros(layout, 0.2, 100);
    CHECK(static_cast<int64_t>(d.lambda.size()) == layout.eq_count());
    CHECK(static_cast<int64_t>(d.mu.size()) == layout.ineq_count());
    d.check_sizes(layout);
    CHECK_THROWS_AS(obj::DualState::zeros(layout, 0.0, 100), ValidationError);
}
