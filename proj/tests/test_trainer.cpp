#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lumina/trainer.hpp"

using namespace lumina;
namespace fs = std::filesystem;

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

train::TrainConfig tiny_config(gnn::Arch arch, obj::Objective objective,
                               int64_t steps, uint64_t seed) {
    train::TrainConfig cfg;
    cfg.topologies = {"case3"};
    cfg.objective = objective;
    cfg.model.architecture = arch;
    cfg.model.layers = 2;
    cfg.model.hidden = 16;
    cfg.model.heads = 2;
    cfg.steps = steps;
    cfg.batch_size = 4;
    cfg.eval_every = 50;
    cfg.seed = seed;
    cfg.update_period = 25;
    return cfg;
}

}  // namespace

TEST_CASE("config validation guards") {
    auto cfg = tiny_config(gnn::Arch::gcn, obj::Objective::mse, 10, 0);
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.steps = 10;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.lr = 1e-3;
    cfg.topologies.clear();
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("smoke training: loss after 200 steps beats the start on most seeds") {
    const auto ds = make_dataset("case3", 1, 60);
    int improved = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const auto cfg = tiny_config(gnn::Arch::heterognn, obj::Objective::mse, 200,
                                     seed);
        const auto result = train::train(cfg, {&ds});
        // First row with a recorded train loss vs the last.
        double first = 0.0, last = 0.0;
        for (const auto& row : result.log.rows)
            if (!std::isnan(row.loss)) {
                first = row.loss;
                break;
            }
        last = result.log.rows.back().loss;
        if (last < first) ++improved;
    }
    CHECK(improved >= 4);
}

TEST_CASE("training is deterministic at double precision") {
    const auto ds = make_dataset("case3", 2, 40);
    const auto cfg = tiny_config(gnn::Arch::gat, obj::Objective::al, 60, 9);
    const auto r1 = train::train(cfg, {&ds});
    const auto r2 = train::train(cfg, {&ds});
    CHECK(r1.log.same_metrics(r2.log));
    // Parameters match bit-for-bit as well.
    const auto& p1 = std::get<gnn::ParamStore<double>>(r1.checkpoint.params);
    const auto& p2 = std::get<gnn::ParamStore<double>>(r2.checkpoint.params);
    REQUIRE(p1.entries.size() == p2.entries.size());
    for (size_t i = 0; i < p1.entries.size(); ++i)
        CHECK(p1.entries[i].tensor.data == p2.entries[i].tensor.data);
}

TEST_CASE("checkpoint save/load round-trips evaluation bit-identically") {
    const auto ds = make_dataset("case3", 3, 40);
    const auto cfg = tiny_config(gnn::Arch::hgt, obj::Objective::al, 40, 4);
    const auto result = train::train(cfg, {&ds});

    const auto before = train::evaluate(result.checkpoint, ds);
    const fs::path path = fs::temp_directory_path() / "lumina_ckpt_roundtrip.ckpt";
    train::save_checkpoint(result.checkpoint, path);
    const auto loaded = train::load_checkpoint(path);
    const auto after = train::evaluate(loaded, ds);
    CHECK(before.opf_sol_err == after.opf_sol_err);
    CHECK(before.viol == after.viol);
    CHECK(loaded.step == result.checkpoint.step);
    CHECK(loaded.duals.at("case3").lambda == result.checkpoint.duals.at("case3").lambda);
    CHECK(loaded.config.model.hidden == cfg.model.hidden);
}

TEST_CASE("finetune on the pretraining topology starts from the same metrics") {
    const auto ds = make_dataset("case3", 4, 40);
    const auto cfg = tiny_config(gnn::Arch::heterognn, obj::Objective::mse, 60, 5);
    const auto pre = train::train(cfg, {&ds});
    const auto final_row = pre.log.rows.back();

    auto fcfg = cfg;
    fcfg.steps = 10;
    const auto fine = train::finetune(pre.checkpoint, ds, fcfg);
    const auto& first_row = fine.log.rows.front();
    CHECK(first_row.step == 0);
    CHECK(first_row.opf_sol_err == final_row.opf_sol_err);
    CHECK(first_row.viol.total == final_row.viol.total);
}

TEST_CASE("finetune rejects checkpoints with incompatible shapes") {
    const auto ds = make_dataset("case3", 5, 40);
    const auto cfg = tiny_config(gnn::Arch::gcn, obj::Objective::mse, 10, 6);
    auto result = train::train(cfg, {&ds});
    auto bad = result.checkpoint;
    bad.config.model.hidden = 32;  // declared width no longer matches tensors
    CHECK_THROWS_WITH_AS(train::finetune(bad, ds, cfg),
                         doctest::Contains("incompatible"), ValidationError);
}

TEST_CASE("non-finite loss aborts with a snapshot") {
    const auto ds = make_dataset("case3", 6, 40);
    auto cfg = tiny_config(gnn::Arch::gcn, obj::Objective::al, 200, 7);
    cfg.lr = 1e18;  // guaranteed blow-up
    cfg.rho = 10.0;
    const fs::path snap = fs::temp_directory_path() / "lumina_abort_snapshot.ckpt";
    fs::remove(snap);
    cfg.snapshot_path = snap.string();
    bool aborted = false;
    try {
        train::train(cfg, {&ds});
    } catch (const TrainAbort& e) {
        aborted = true;
        CHECK(e.snapshot_path == snap.string());
        CHECK(fs::exists(snap));
        // The snapshot is loadable.
        const auto loaded = train::load_checkpoint(snap);
        CHECK(loaded.config.model.architecture == gnn::Arch::gcn);
    }
    CHECK(aborted);
}

TEST_CASE("precision analog: single evaluation of a double checkpoint within 1e-3") {
    const auto ds = make_dataset("case3", 7, 80);
    const auto cfg = tiny_config(gnn::Arch::heterognn, obj::Objective::mse, 150, 8);
    const auto result = train::train(cfg, {&ds});
    const auto m64 = train::evaluate(result.checkpoint, ds);
    const auto ckpt32 = train::cast_checkpoint(result.checkpoint, train::Precision::single);
    const auto m32 = train::evaluate(ckpt32, ds);
    CHECK(std::abs(m64.opf_sol_err - m32.opf_sol_err) /
              std::max(1e-9, std::abs(m64.opf_sol_err)) <
          1e-3);
    CHECK(std::abs(m64.viol - m32.viol) / std::max(1e-9, std::abs(m64.viol)) < 1e-3);
}

TEST_CASE("single-precision training runs end to end") {
    const auto ds = make_dataset("case3", 8, 40);
    auto cfg = tiny_config(gnn::Arch::gcn, obj::Objective::mse, 30, 9);
    cfg.precision = train::Precision::single;
    const auto result = train::train(cfg, {&ds});
    CHECK(result.checkpoint.precision == train::Precision::single);
    const auto m = train::evaluate(result.checkpoint, ds);
    CHECK(std::isfinite(m.opf_sol_err));
    // Round trip through disk preserves the dtype.
    const fs::path path = fs::temp_directory_path() / "lumina_f32.ckpt";
    train::save_checkpoint(result.checkpoint, path);
    const auto loaded = train::load_checkpoint(path);
    CHECK(loaded.precision == train::Precision::single);
    const auto m2 = train::evaluate(loaded, ds);
    CHECK(m.opf_sol_err == m2.opf_sol_err);
}

TEST_CASE("steps_to_threshold scans eval rows in order") {
    train::TrainLog log;
    const auto row = [](int64_t step, const std::string& topo, double viol) {
        train::EvalRow r;
        r.step = step;
        r.topology = topo;
        r.viol.total = viol;
        return r;
    };
    SUBCASE("monotone crossing returns the first qualifying step") {
        for (int64_t s : {0, 10, 20, 30})
            log.rows.push_back(row(s, "a", 4.0 - static_cast<double>(s) * 0.1));
        const auto hit = train::steps_to_threshold(log, 2.5);
        REQUIRE(hit.has_value());
        CHECK(*hit == 20);
    }
    SUBCASE("never crossing yields nullopt") {
        for (int64_t s : {0, 10, 20}) log.rows.push_back(row(s, "a", 9.0));
        CHECK(!train::steps_to_threshold(log, 1.0).has_value());
    }
    SUBCASE("multi-topology rows average per step; filter selects one") {
        for (int64_t s : {0, 10, 20}) {
            log.rows.push_back(row(s, "a", 3.0 - static_cast<double>(s) * 0.1));
            log.rows.push_back(row(s, "b", 5.0 - static_cast<double>(s) * 0.1));
        }
        // Means are 4.0, 3.0, 2.0: first step at or below 3.0 is 10.
        CHECK(*train::steps_to_threshold(log, 3.0) == 10);
        CHECK(*train::steps_to_threshold(log, 3.0, "a") == 0);
        CHECK(*train::steps_to_threshold(log, 3.0, "b") == 20);
        CHECK(!train::steps_to_threshold(log, 2.9, "b").has_value());
    }
    SUBCASE("noisy log matches an independent scan oracle") {
        auto g = rng::make_stream(10, 0);
        std::vector<double> vals;
        for (int64_t s = 0; s <= 200; s += 10) {
            const double v = rng::uniform(g, 0.0, 2.0);
            vals.push_back(v);
            log.rows.push_back(row(s, "a", v));
        }
        const double tau = 0.5;
        std::optional<int64_t> want;
        for (size_t i = 0; i < vals.size(); ++i)
            if (vals[i] <= tau) {
                want = static_cast<int64_t>(i) * 10;
                break;
            }
        CHECK(train::steps_to_threshold(log, tau) == want);
    }
    SUBCASE("empty log is rejected") {
        train::TrainLog empty;
        CHECK_THROWS_AS(train::steps_to_threshold(empty, 1.0), ValidationError);
    }
}

TEST_CASE("train log CSV round-trips through the writer") {
    const auto ds = make_dataset("case3", 9, 40);
    const auto cfg = tiny_config(gnn::Arch::gcn, obj::Objective::mse, 20, 10);
    const auto result = train::train(cfg, {&ds});
    const std::string csv = result.log.to_csv_string();
    CHECK(csv.find("step,topology,loss") == 0);
    CHECK(csv.find("\r\n") != std::string::npos);
    // One header plus one row per eval point.
    size_t lines = 0;
    for (size_t pos = 0; (pos = csv.find("\r\n", pos)) != std::string::npos; pos += 2)
        ++lines;
    CHECK(lines == result.log.rows.size() + 1);
}

TEST_CASE("zero-shot evaluation uses the target's own statistics") {
    const auto ds3 = make_dataset("case3", 10, 40);
    const auto ds5 = make_dataset("case5", 10, 40);
    const auto cfg = tiny_config(gnn::Arch::hgt, obj::Objective::mse, 30, 11);
    const auto result = train::train(cfg, {&ds3});
    CHECK(!result.checkpoint.has_topology("case5"));
    const auto m = train::evaluate(result.checkpoint, ds5);
    CHECK(m.zero_shot);
    CHECK(std::isfinite(m.opf_sol_err));
    const auto m3 = train::evaluate(result.checkpoint, ds3);
    CHECK(!m3.zero_shot);
}
