#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "lumina/dataset.hpp"
#include "lumina/residuals_ad.hpp"

using namespace lumina;

namespace {

grid::GridCase fixture(const std::string& name) {
    return data::load_case(std::string(LUMINA_FIXTURE_DIR) + "/" + name + ".json");
}

std::vector<std::array<double, 2>> nominal(const grid::GridCase& c) {
    std::vector<std::array<double, 2>> out;
    for (const auto& l : c.loads) out.push_back({l.pd, l.qd});
    return out;
}

pf::OperatingPoint random_point(const grid::GridCase& c, std::mt19937_64& g) {
    pf::OperatingPoint pt;
    for (int i = 0; i < c.n_bus(); ++i) {
        pt.vm.push_back(rng::uniform(g, 0.9, 1.1));
        pt.va.push_back(i == c.reference_bus() ? 0.0 : rng::uniform(g, -0.3, 0.3));
    }
    for (int i = 0; i < c.n_gen(); ++i) {
        pt.pg.push_back(rng::uniform(g, -0.5, 2.0));
        pt.qg.push_back(rng::uniform(g, -1.0, 1.0));
    }
    return pt;
}

// Independent oracle: complex bus power S_i = V_i conj(sum_j Y_ij V_j) built
// directly from the branch and shunt data in plain complex arithmetic.
struct ComplexOracle {
    std::vector<std::vector<std::complex<double>>> y;

    explicit ComplexOracle(const grid::GridCase& c)
        : y(c.n_bus(), std::vector<std::complex<double>>(c.n_bus())) {
        for (const auto& br : c.branches) {
            const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
            const std::complex<double> jb(0.0, br.b_charging / 2.0);
            const std::complex<double> sh = std::polar(1.0, br.shift);
            y[br.from_bus][br.from_bus] += (ys + jb) / (br.tap * br.tap);
            y[br.from_bus][br.to_bus] += -ys / (br.tap * std::conj(sh));
            y[br.to_bus][br.from_bus] += -ys / (br.tap * sh);
            y[br.to_bus][br.to_bus] += ys + jb;
        }
        for (const auto& s : c.shunts)
            y[s.bus][s.bus] += std::complex<double>(s.gs, s.bs);
    }

    std::complex<double> injection(const pf::OperatingPoint& pt, int i) const {
        std::complex<double> acc = 0.0;
        const std::complex<double> vi = std::polar(pt.vm[i], pt.va[i]);
        for (size_t j = 0; j < y.size(); ++j)
            acc += y[i][j] * std::polar(pt.vm[j], pt.va[j]);
        return vi * std::conj(acc);
    }
};

}  // namespace

TEST_CASE("converged solves leave residuals below the solver tolerance") {
    const auto c = fixture("case3");
    const auto loads = nominal(c);
    const auto r = pf::nr_solve(c, loads, pf::dispatch_heuristic(c, loads));
    REQUIRE(r.converged);
    const auto eq = res::equality_residuals(c, loads, r.point);
    for (double v : eq.p_balance) CHECK(std::abs(v) < 1e-8);
    for (double v : eq.q_balance) CHECK(std::abs(v) < 1e-8);
}

TEST_CASE("flat voltage, zero injection, bare network: exact zeros") {
    auto c = fixture("case2");
    c.branches[0].b_charging = 0.0;
    std::vector<std::array<double, 2>> zero = {{0.0, 0.0}};
    pf::OperatingPoint pt;
    pt.vm = {1.0, 1.0};
    pt.va = {0.0, 0.0};
    pt.pg = {0.0};
    pt.qg = {0.0};
    const auto eq = res::equality_residuals(c, zero, pt);
    for (double v : eq.p_balance) CHECK(v == 0.0);
    for (double v : eq.q_balance) CHECK(v == 0.0);
    CHECK(eq.ref_angle == 0.0);
}

TEST_CASE("equality residuals match the complex-power oracle to 1e-12") {
    for (const char* name : {"case2", "case3"}) {
        const auto c = fixture(name);
        const ComplexOracle oracle(c);
        auto g = rng::make_stream(99, 1);
        for (int trial = 0; trial < 100; ++trial) {
            const auto pt = random_point(c, g);
            const auto loads = nominal(c);
            const auto eq = res::equality_residuals(c, loads, pt);
            for (int i = 0; i < c.n_bus(); ++i) {
                double pg = 0.0, qg = 0.0, pd = 0.0, qd = 0.0;
                for (const auto& gen : c.generators)
                    if (gen.bus == i) {
                        pg += pt.pg[gen.index];
                        qg += pt.qg[gen.index];
                    }
                for (const auto& l : c.loads)
                    if (l.bus == i) {
                        pd += loads[l.index][0];
                        qd += loads[l.index][1];
                    }
                const auto s = oracle.injection(pt, i);
                CHECK(std::abs(eq.p_balance[i] - (pg - pd - s.real())) < 1e-12);
                CHECK(std::abs(eq.q_balance[i] - (qg - qd - s.imag())) < 1e-12);
            }
        }
    }
}

TEST_CASE("inequality violations: interior points are all zero") {
    const auto c = fixture("case3");
    pf::OperatingPoint pt;
    pt.vm = {1.0, 1.0, 1.0};
    pt.va = {0.0, 0.01, -0.01};
    pt.pg = {0.5, 0.5};
    pt.qg = {0.1, 0.1};
    const auto iq = res::inequality_violations(c, pt);
    for (double v : iq.vm_viol) CHECK(v == 0.0);
    for (double v : iq.pg_viol) CHECK(v == 0.0);
    for (double v : iq.qg_viol) CHECK(v == 0.0);
    for (double v : iq.line_viol) CHECK(v == 0.0);
}

TEST_CASE("inequality violations: box arithmetic is exact") {
    const auto c = fixture("case3");
    pf::OperatingPoint pt;
    pt.vm = {1.0, c.buses[1].vmax + 0.05, 1.0};
    pt.va = {0.0, 0.0, 0.0};
    pt.pg = {0.5, 0.5};
    pt.qg = {0.1, 0.1};
    const auto iq = res::inequality_violations(c, pt);
    CHECK(iq.vm_viol[0] == 0.0);
    CHECK(iq.vm_viol[1] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(iq.vm_viol[2] == 0.0);
}

TEST_CASE("line violations match a brute-force pi-model flow oracle") {
    const auto c = fixture("case3");
    auto g = rng::make_stream(17, 0);
    for (int trial = 0; trial < 20; ++trial) {
        auto pt = random_point(c, g);
        // Exaggerate angles to push flows over the limits.
        for (auto& a : pt.va) a *= 3.0;
        const auto iq = res::inequality_violations(c, pt);
        for (const auto& br : c.branches) {
            const auto a = grid::branch_admittance(br);
            const auto vf = std::polar(pt.vm[br.from_bus], pt.va[br.from_bus]);
            const auto vt = std::polar(pt.vm[br.to_bus], pt.va[br.to_bus]);
            const double sf = std::abs(vf * std::conj(a.yff * vf + a.yft * vt));
            const double st = std::abs(vt * std::conj(a.ytf * vf + a.ytt * vt));
            const double want =
                br.s_max > 0 ? std::max({sf - br.s_max, st - br.s_max, 0.0}) : 0.0;
            CHECK(iq.line_viol[br.index] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("branches without a thermal limit contribute nothing") {
    auto c = fixture("case2");
    c.branches[0].s_max = 0.0;
    pf::OperatingPoint pt;
    pt.vm = {1.1, 0.9};
    pt.va = {0.0, -0.8};
    pt.pg = {1.0};
    pt.qg = {0.0};
    const auto iq = res::inequality_violations(c, pt);
    CHECK(iq.line_viol[0] == 0.0);
    const auto h = res::inequality_vector(c, pt);
    CHECK(static_cast<int64_t>(h.size()) ==
          res::ConstraintLayout::from_case(c).ineq_count());
    CHECK(res::ConstraintLayout::from_case(c).n_limited() == 0);
}

TEST_CASE("violation summary arithmetic and guards") {
    res::ResidualReport rep;
    rep.p_balance.assign(4, 0.0);
    rep.q_balance.assign(4, 0.0);
    rep.vm_viol.assign(4, 0.0);
    rep.pg_viol.assign(2, 0.0);
    rep.qg_viol.assign(2, 0.0);
    rep.line_viol.assign(3, 0.0);

    SUBCASE("all-zero report totals zero") {
        const auto s = res::violation_summary(rep, 4);
        CHECK(s.total == 0.0);
    }
    SUBCASE("single violation of 3.0 with nine buses gives norm 1.0") {
        rep.vm_viol.assign(9, 0.0);
        rep.p_balance.assign(9, 0.0);
        rep.q_balance.assign(9, 0.0);
        rep.vm_viol[2] = 3.0;
        const auto s = res::violation_summary(rep, 9);
        CHECK(s.vm == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(s.total == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("total is the sum of the seven families") {
        rep.p_balance[0] = 0.3;
        rep.vm_viol[1] = 0.2;
        rep.line_viol[0] = 0.1;
        rep.ref_angle = 0.05;
        const auto s = res::violation_summary(rep, 4);
        double sum = 0.0;
        for (double f : s.families()) sum += f;
        CHECK(s.total == doctest::Approx(sum).epsilon(1e-15));
        CHECK(res::ViolationSummary::family_names().size() == 7);
    }
    SUBCASE("zero buses rejected") {
        CHECK_THROWS_AS(res::violation_summary(rep, 0), ValidationError);
    }
}

TEST_CASE("duplicating a report doubles nothing after normalization") {
    const auto c = fixture("case3");
    auto g = rng::make_stream(5, 2);
    const auto pt = random_point(c, g);
    const auto rep = res::residual_report(c, nominal(c), pt);
    const auto s1 = res::violation_summary(rep, c.n_bus());

    // Two disconnected copies: every family vector doubles, n_bus doubles.
    res::ResidualReport rep2 = rep;
    const auto dup = [](std::vector<double>& v) {
        const auto copy = v;
        v.insert(v.end(), copy.begin(), copy.end());
    };
    dup(rep2.p_balance);
    dup(rep2.q_balance);
    dup(rep2.vm_viol);
    dup(rep2.pg_viol);
    dup(rep2.qg_viol);
    dup(rep2.line_viol);
    const auto s2 = res::violation_summary(rep2, 2 * c.n_bus());

    // Unnormalized family norms scale by sqrt(2); normalized ones are equal.
    const auto f1 = s1.families();
    const auto f2 = s2.families();
    for (int k = 0; k < 7; ++k) {
        if (k == 2) continue;  // ref_angle is a scalar, not duplicated
        CHECK(f2[k] == doctest::Approx(f1[k]).epsilon(1e-12));
    }
}

TEST_CASE("permuting bus order permutes residuals and keeps summaries") {
    const auto c = fixture("case3");
    // Relabel buses with permutation p: new index p[i] for old bus i.
    const std::vector<int> p = {2, 0, 1};
    grid::GridCase cp = c;
    for (auto& b : cp.buses) b.index = p[b.index];
    std::sort(cp.buses.begin(), cp.buses.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    for (auto& g : cp.generators) g.bus = p[g.bus];
    for (auto& l : cp.loads) l.bus = p[l.bus];
    for (auto& s : cp.shunts) s.bus = p[s.bus];
    for (auto& br : cp.branches) {
        br.from_bus = p[br.from_bus];
        br.to_bus = p[br.to_bus];
    }
    cp.validate();

    auto g = rng::make_stream(21, 0);
    const auto pt = random_point(c, g);
    pf::OperatingPoint ptp;
    ptp.vm.resize(3);
    ptp.va.resize(3);
    for (int i = 0; i < 3; ++i) {
        ptp.vm[p[i]] = pt.vm[i];
        ptp.va[p[i]] = pt.va[i];
    }
    ptp.pg = pt.pg;
    ptp.qg = pt.qg;

    const auto loads = nominal(c);
    const auto e1 = res::equality_residuals(c, loads, pt);
    const auto e2 = res::equality_residuals(cp, loads, ptp);
    for (int i = 0; i < 3; ++i) {
        CHECK(e2.p_balance[p[i]] == doctest::Approx(e1.p_balance[i]).epsilon(1e-14));
        CHECK(e2.q_balance[p[i]] == doctest::Approx(e1.q_balance[i]).epsilon(1e-14));
    }
    const auto s1 = res::violation_summary(res::residual_report(c, loads, pt), 3);
    const auto s2 = res::violation_summary(res::residual_report(cp, loads, ptp), 3);
    CHECK(s1.total == doctest::Approx(s2.total).epsilon(1e-13));
}

TEST_CASE("traced residuals match the pure path to 1e-12 on random points") {
    for (const char* name : {"case2", "case3", "case5"}) {
        const auto c = fixture(name);
        const auto plan = res::ResidualPlan::from_case(c);
        auto g = rng::make_stream(3, 7);
        for (int trial = 0; trial < 100; ++trial) {
            const auto pt = random_point(c, g);
            const auto loads = nominal(c);
            const auto r_pure = res::equality_vector(c, loads, pt);
            const auto h_pure = res::inequality_vector(c, pt);

            ad::Tape<double> tape;
            const auto vm = tape.param(ad::Shape::vec(c.n_bus()), pt.vm);
            const auto va = tape.param(ad::Shape::vec(c.n_bus()), pt.va);
            const auto pg = tape.param(ad::Shape::vec(c.n_gen()), pt.pg);
            const auto qg = tape.param(ad::Shape::vec(c.n_gen()), pt.qg);
            std::vector<double> pd_bus, qd_bus;
            plan.bus_loads(loads, pd_bus, qd_bus);
            const auto rh =
                res::differentiable_residuals(tape, plan, vm, va, pg, qg, pd_bus, qd_bus);
            const auto rv = tape.value(rh.r);
            const auto hv = tape.value(rh.h);
            REQUIRE(rv.size() == r_pure.size());
            REQUIRE(hv.size() == h_pure.size());
            for (size_t i = 0; i < r_pure.size(); ++i)
                CHECK(std::abs(rv[i] - r_pure[i]) < 1e-12);
            for (size_t i = 0; i < h_pure.size(); ++i)
                CHECK(std::abs(hv[i] - h_pure[i]) < 1e-12);
        }
    }
}

TEST_CASE("traced residual gradients match central finite differences") {
    const auto c = fixture("case3");
    const auto plan = res::ResidualPlan::from_case(c);
    const auto loads = nominal(c);
    std::vector<double> pd_bus, qd_bus;
    plan.bus_loads(loads, pd_bus, qd_bus);
    auto g = rng::make_stream(13, 13);
    const auto pt = random_point(c, g);

    // Pack all four decision vectors into one parameter block.
    std::vector<double> x0;
    x0.insert(x0.end(), pt.vm.begin(), pt.vm.end());
    x0.insert(x0.end(), pt.va.begin(), pt.va.end());
    x0.insert(x0.end(), pt.pg.begin(), pt.pg.end());
    x0.insert(x0.end(), pt.qg.begin(), pt.qg.end());
    const int nb = c.n_bus(), ng = c.n_gen();

    const auto build = [&](ad::Tape<double>& t, std::span<const double> x,
                           ad::Tape<double>::Id* vm_out) {
        const auto vm = t.param(ad::Shape::vec(nb), x.subspan(0, nb));
        const auto va = t.param(ad::Shape::vec(nb), x.subspan(nb, nb));
        const auto pg = t.param(ad::Shape::vec(ng), x.subspan(2 * nb, ng));
        const auto qg = t.param(ad::Shape::vec(ng), x.subspan(2 * nb + ng, ng));
        if (vm_out) {
            vm_out[0] = vm;
            vm_out[1] = va;
            vm_out[2] = pg;
            vm_out[3] = qg;
        }
        const auto rh = res::differentiable_residuals(t, plan, vm, va, pg, qg, pd_bus,
                                                      qd_bus);
        // Weighted scalar over both residual vectors.
        return t.add(t.sum(t.square(rh.r)), t.sum(t.square(t.max_with_zero(rh.h))));
    };
    const auto value = [&](std::span<const double> x) {
        ad::Tape<double> t;
        return t.value(build(t, x, nullptr))[0];
    };
    const auto grad = [&](std::span<const double> x) {
        ad::Tape<double> t;
        ad::Tape<double>::Id ids[4];
        t.backward(build(t, x, ids));
        std::vector<double> out;
        for (auto id : ids) {
            const auto gi = t.grad(id);
            out.insert(out.end(), gi.begin(), gi.end());
        }
        return out;
    };
    const auto rep = ad::grad_check(value, grad, x0, 1e-6);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("satisfied inequalities are gradient-silent") {
    const auto c = fixture("case3");
    const auto plan = res::ResidualPlan::from_case(c);
    const auto loads = nominal(c);
    std::vector<double> pd_bus, qd_bus;
    plan.bus_loads(loads, pd_bus, qd_bus);

    // Strict interior: every h component negative.
    pf::OperatingPoint pt;
    pt.vm = {1.0, 1.0, 1.0};
    pt.va = {0.0, 0.005, -0.005};
    pt.pg = {0.5, 0.5};
    pt.qg = {0.1, 0.1};
    const auto h_pure = res::inequality_vector(c, pt);
    for (double h : h_pure) REQUIRE(h < 0.0);

    ad::Tape<double> t;
    const auto vm = t.param(ad::Shape::vec(3), pt.vm);
    const auto va = t.param(ad::Shape::vec(3), pt.va);
    const auto pg = t.param(ad::Shape::vec(2), pt.pg);
    const auto qg = t.param(ad::Shape::vec(2), pt.qg);
    const auto rh = res::differentiable_residuals(t, plan, vm, va, pg, qg, pd_bus,
                                                  qd_bus);
    t.backward(t.sum(t.max_with_zero(rh.h)));
    for (auto id : {vm, va, pg, qg})
        for (double gv : t.grad(id)) CHECK(gv == 0.0);
}
