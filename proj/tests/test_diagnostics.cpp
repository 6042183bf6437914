#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "lumina/diagnostics.hpp"

using namespace lumina;

namespace {

data::TopologyDataset make_dataset(const std::string& name, uint64_t seed,
                                   int64_t count) {
    const auto c =
        data::load_case(std::string(LUMINA_FIXTURE_DIR) + "/" + name + ".json");
    data::GenerationParams p;
    p.seed = seed;
    p.count = count;
    return data::generate_dataset(c, p);
}

train::TrainResult quick_train(const data::TopologyDataset& ds, gnn::Arch arch,
                               int64_t steps, uint64_t seed) {
    train::TrainConfig cfg;
    cfg.topologies = {ds.case_id()};
    cfg.model.architecture = arch;
    cfg.model.layers = 2;
    cfg.model.hidden = 16;
    cfg.model.heads = 2;
    cfg.steps = steps;
    cfg.batch_size = 4;
    cfg.eval_every = steps;
    cfg.seed = seed;
    return train::train(cfg, {&ds});
}

}  // namespace

TEST_CASE("pearson: planted correlations are exact") {
    std::vector<double> deg = {1, 2, 3, 4, 5, 6};
    std::vector<double> err;
    for (double d : deg) err.push_back(2.5 * d);
    CHECK(std::abs(diag::pearson_r(deg, err) - 1.0) < 1e-12);
    for (auto& e : err) e = -e;
    CHECK(std::abs(diag::pearson_r(deg, err) + 1.0) < 1e-12);
}

TEST_CASE("pearson: affine rescaling with positive scale is invariant") {
    auto g = rng::make_stream(1, 0);
    std::vector<double> xs(40), ys(40);
    for (auto& v : xs) v = rng::uniform(g, -2, 2);
    for (size_t i = 0; i < ys.size(); ++i)
        ys[i] = 0.7 * xs[i] + rng::uniform(g, -0.5, 0.5);
    const double r0 = diag::pearson_r(xs, ys);
    std::vector<double> xs2(xs), ys2(ys);
    for (auto& v : xs2) v = 3.0 * v + 11.0;
    for (auto& v : ys2) v = 0.25 * v - 4.0;
    CHECK(std::abs(diag::pearson_r(xs2, ys2) - r0) < 1e-12);
}

TEST_CASE("pearson: matches the direct covariance formula") {
    auto g = rng::make_stream(2, 0);
    std::vector<double> xs(25), ys(25);
    for (auto& v : xs) v = rng::uniform(g, -1, 1);
    for (auto& v : ys) v = rng::uniform(g, -1, 1);
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double cxy = 0, cxx = 0, cyy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        cxy += (xs[i] - mx) * (ys[i] - my);
        cxx += (xs[i] - mx) * (xs[i] - mx);
        cyy += (ys[i] - my) * (ys[i] - my);
    }
    CHECK(std::abs(diag::pearson_r(xs, ys) - cxy / std::sqrt(cxx * cyy)) < 1e-12);
}

TEST_CASE("pearson: zero variance is an error") {
    std::vector<double> xs = {1, 1, 1};
    std::vector<double> ys = {1, 2, 3};
    CHECK_THROWS_WITH_AS(diag::pearson_r(xs, ys), doctest::Contains("undefined"),
                         ValidationError);
}

TEST_CASE("bin_by_load: planted patterns") {
    SUBCASE("uniform error gives flat bins") {
        std::vector<double> loads, errs, viols;
        for (int i = 0; i < 50; ++i) {
            loads.push_back(1.0 + i * 0.01);
            errs.push_back(0.5);
            viols.push_back(0.1);
        }
        const auto bins = diag::bin_by_load(loads, errs, viols, 5);
        REQUIRE(bins.size() == 5);
        for (const auto& b : bins) CHECK(b.mean_err == doctest::Approx(0.5));
    }
    SUBCASE("error proportional to load gives strictly increasing bin means") {
        std::vector<double> loads, errs, viols;
        for (int i = 0; i < 60; ++i) {
            loads.push_back(i * 0.1);
            errs.push_back(i * 0.1 * 2.0);
            viols.push_back(0.0);
        }
        const auto bins = diag::bin_by_load(loads, errs, viols, 6);
        for (size_t b = 1; b < bins.size(); ++b)
            CHECK(bins[b].mean_err > bins[b - 1].mean_err);
    }
    SUBCASE("empty bins are absent") {
        // Clustered loads leave the middle bins empty.
        std::vector<double> loads = {0.0, 0.01, 0.02, 1.0, 1.01};
        std::vector<double> errs = {1, 1, 1, 2, 2};
        std::vector<double> viols = {0, 0, 0, 0, 0};
        const auto bins = diag::bin_by_load(loads, errs, viols, 10);
        CHECK(bins.size() == 2);
        int64_t total = 0;
        for (const auto& b : bins) total += b.count;
        CHECK(total == 5);
    }
    SUBCASE("n_bins below 2 rejected") {
        std::vector<double> v = {1.0};
        CHECK_THROWS_AS(diag::bin_by_load(v, v, v, 1), ValidationError);
    }
}

TEST_CASE("load_stratified_error matches a brute-force grouping oracle") {
    const auto ds = make_dataset("case3", 3, 60);
    const auto tr = quick_train(ds, gnn::Arch::heterognn, 80, 1);
    const int n_bins = 4;
    const auto bins = diag::load_stratified_error(tr.checkpoint, ds, n_bins);

    // Oracle: recompute per-instance series then group by equal-width bins.
    std::vector<pf::OperatingPoint> points;
    train::evaluate_with_predictions(tr.checkpoint, ds, train::Split::test, &points);
    std::vector<double> loads, errs;
    const auto& stats = tr.checkpoint.stats.at("case3");
    for (size_t k = 0; k < ds.splits.test.size(); ++k) {
        const auto& inst = ds.instances[ds.splits.test[k]];
        loads.push_back(inst.total_load);
        const auto a = data::normalized_targets(points[k], stats);
        const auto b = data::normalized_targets(inst.label, stats);
        double se = 0;
        for (size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
        errs.push_back(se / a.size());
    }
    const double lo = *std::min_element(loads.begin(), loads.end());
    const double hi = *std::max_element(loads.begin(), loads.end());
    std::map<int, std::pair<double, int>> groups;
    for (size_t i = 0; i < loads.size(); ++i) {
        int b = static_cast<int>((loads[i] - lo) / ((hi - lo) / n_bins));
        b = std::clamp(b, 0, n_bins - 1);
        groups[b].first += errs[i];
        groups[b].second += 1;
    }
    REQUIRE(bins.size() == groups.size());
    size_t bi = 0;
    for (const auto& [b, acc] : groups) {
        CHECK(bins[bi].count == acc.second);
        CHECK(bins[bi].mean_err == doctest::Approx(acc.first / acc.second).epsilon(1e-12));
        ++bi;
    }
}

TEST_CASE("degree-error correlation on a real toy model") {
    const auto ds = make_dataset("case5", 4, 60);
    const auto tr = quick_train(ds, gnn::Arch::gcn, 60, 2);
    const auto result = diag::degree_error_correlation(tr.checkpoint, ds);
    CHECK(result.per_bus_error.size() == 5);
    CHECK(result.normalized_degree.size() == 5);
    CHECK(std::abs(result.r) <= 1.0);
    // Cross-check against the direct formula.
    CHECK(std::abs(result.r -
                   diag::pearson_r(result.normalized_degree, result.per_bus_error)) <
          1e-12);
}

TEST_CASE("pca_rows: rank-1 data concentrates all variance in one component") {
    auto g = rng::make_stream(5, 0);
    std::vector<double> direction = {0.6, -0.8, 0.0};
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 30; ++i) {
        const double t = rng::uniform(g, -2, 2);
        rows.push_back({t * direction[0], t * direction[1], t * direction[2]});
    }
    const auto pca = diag::pca_rows(rows, 2);
    CHECK(pca.explained_ratio[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(pca.explained[1]) < 1e-12);
    // First component is the planted direction up to sign.
    const double dot = pca.components[0] * direction[0] +
                       pca.components[1] * direction[1] +
                       pca.components[2] * direction[2];
    CHECK(std::abs(std::abs(dot) - 1.0) < 1e-10);
}

TEST_CASE("pca_rows components are orthonormal") {
    auto g = rng::make_stream(6, 0);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> r(5);
        for (auto& v : r) v = rng::uniform(g, -1, 1);
        rows.push_back(std::move(r));
    }
    const int k = 3;
    const auto pca = diag::pca_rows(rows, k);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) {
            double dot = 0.0;
            for (int m = 0; m < 5; ++m)
                dot += pca.components[a * 5 + m] * pca.components[b * 5 + m];
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-10);
        }
}

TEST_CASE("pca_rows eigenvalues match the closed-form 2x2 oracle") {
    auto g = rng::make_stream(7, 0);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 200; ++i)
        rows.push_back({rng::uniform(g, -1, 1), rng::uniform(g, -2, 2)});
    // Brute-force covariance and its closed-form eigenvalues.
    double m0 = 0, m1 = 0;
    for (const auto& r : rows) {
        m0 += r[0];
        m1 += r[1];
    }
    m0 /= rows.size();
    m1 /= rows.size();
    double a = 0, b = 0, c = 0;  // cov = [[a, b], [b, c]]
    for (const auto& r : rows) {
        a += (r[0] - m0) * (r[0] - m0);
        b += (r[0] - m0) * (r[1] - m1);
        c += (r[1] - m1) * (r[1] - m1);
    }
    a /= rows.size() - 1;
    b /= rows.size() - 1;
    c /= rows.size() - 1;
    const double tr = a + c;
    const double det = a * c - b * b;
    const double disc = std::sqrt(tr * tr / 4.0 - det);
    const double l1 = tr / 2.0 + disc;
    const double l2 = tr / 2.0 - disc;

    const auto pca = diag::pca_rows(rows, 2);
    CHECK(pca.explained[0] == doctest::Approx(l1).epsilon(1e-10));
    CHECK(pca.explained[1] == doctest::Approx(l2).epsilon(1e-10));
}

TEST_CASE("pca projections are invariant to instance order up to sign") {
    auto g = rng::make_stream(8, 0);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 25; ++i) {
        std::vector<double> r(4);
        for (auto& v : r) v = rng::uniform(g, -1, 1);
        rows.push_back(std::move(r));
    }
    auto rows2 = rows;
    std::reverse(rows2.begin(), rows2.end());
    const auto p1 = diag::pca_rows(rows, 2);
    const auto p2 = diag::pca_rows(rows2, 2);
    for (int k = 0; k < 2; ++k) {
        CHECK(p1.explained[k] == doctest::Approx(p2.explained[k]).epsilon(1e-10));
        // Compare first instance of p1 against last of p2 (reversed order).
        const double a = p1.projections[0 * 2 + k];
        const double b = p2.projections[(rows.size() - 1) * 2 + k];
        CHECK(std::abs(std::abs(a) - std::abs(b)) < 1e-10);
    }
}

TEST_CASE("activation_pca guards layer index and instance count") {
    const auto ds = make_dataset("case3", 9, 40);
    const auto tr = quick_train(ds, gnn::Arch::gcn, 20, 3);
    CHECK_THROWS_AS(diag::activation_pca(tr.checkpoint, ds, 99, 1), ValidationError);
    // The test split holds 2 instances: 2 components fit, 5 cannot.
    const auto ok = diag::activation_pca(tr.checkpoint, ds, 0, 2);
    CHECK(ok.explained.size() == 2);
    CHECK_THROWS_AS(diag::activation_pca(tr.checkpoint, ds, 0, 5), ValidationError);
}

TEST_CASE("linear probe recovers a planted linear target") {
    auto g = rng::make_stream(10, 0);
    const int n = 100, d = 6;
    std::vector<std::vector<double>> acts;
    std::vector<double> w(d), target;
    for (auto& v : w) v = rng::uniform(g, -1, 1);
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(d);
        for (auto& v : row) v = rng::uniform(g, -1, 1);
        double y = 0.4;
        for (int k = 0; k < d; ++k) y += w[k] * row[k];
        acts.push_back(std::move(row));
        target.push_back(y);
    }
    bool ridge = false;
    CHECK(diag::linear_probe_r2(acts, target, 0, &ridge) >= 0.99);
}

TEST_CASE("linear probe on pure noise explains almost nothing") {
    auto g = rng::make_stream(11, 0);
    const int n = 100, d = 5;
    std::vector<std::vector<double>> acts;
    std::vector<double> target;
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(d);
        for (auto& v : row) v = rng::uniform(g, -1, 1);
        acts.push_back(std::move(row));
        target.push_back(rng::uniform(g, -1, 1));
    }
    CHECK(diag::linear_probe_r2(acts, target, 0, nullptr) <= 0.2);
}

TEST_CASE("linear probe needs at least ten instances") {
    std::vector<std::vector<double>> acts(5, std::vector<double>(3, 1.0));
    std::vector<double> target(5, 1.0);
    CHECK_THROWS_AS(diag::linear_probe_r2(acts, target, 0, nullptr), ValidationError);
}

TEST_CASE("transfer matrix: diagonal equals standalone evaluation bit-identically") {
    const auto ds3 = make_dataset("case3", 12, 50);
    const auto ds5 = make_dataset("case5", 12, 50);
    const auto t3 = quick_train(ds3, gnn::Arch::hgt, 40, 4);
    const auto t5 = quick_train(ds5, gnn::Arch::hgt, 40, 5);

    const auto matrix = diag::transfer_matrix(
        {{"case3", &t3.checkpoint}, {"case5", &t5.checkpoint}}, {&ds3, &ds5});
    REQUIRE(matrix.cells.size() == 4);

    const auto e33 = train::evaluate(t3.checkpoint, ds3);
    const auto e35 = train::evaluate(t3.checkpoint, ds5);
    const auto e55 = train::evaluate(t5.checkpoint, ds5);
    CHECK(matrix.cells[0].opf_sol_err == e33.opf_sol_err);
    CHECK(matrix.cells[0].viol == e33.viol);
    CHECK(!matrix.cells[0].zero_shot);
    CHECK(matrix.cells[1].opf_sol_err == e35.opf_sol_err);
    CHECK(matrix.cells[1].zero_shot);
    CHECK(matrix.cells[3].opf_sol_err == e55.opf_sol_err);

    // Exactly one best flag per row and metric.
    for (int row = 0; row < 2; ++row) {
        int best_e = 0, best_v = 0;
        for (int col = 0; col < 2; ++col) {
            best_e += matrix.cells[row * 2 + col].best_sol_err ? 1 : 0;
            best_v += matrix.cells[row * 2 + col].best_viol ? 1 : 0;
        }
        CHECK(best_e == 1);
        CHECK(best_v == 1);
    }
}

TEST_CASE("probe on a trained model emits one R2 per activation level") {
    const auto ds = make_dataset("case3", 13, 220);  // test split of 11
    const auto tr = quick_train(ds, gnn::Arch::heterognn, 60, 6);
    const auto probe = diag::linear_probe(tr.checkpoint, ds);
    CHECK(probe.r2_by_layer.size() == 3);  // encoder + 2 layers
    for (double r2 : probe.r2_by_layer) CHECK(r2 <= 1.0);
}
