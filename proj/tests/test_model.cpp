#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lumina/gnn.hpp"
#include "lumina/objectives.hpp"

using namespace lumina;
using ad::Shape;
using ad::Tape;

namespace {

struct ModelHarness {
    grid::GridCase c;
    data::TopologyDataset ds;
    grid::HeteroGraph hetero;
    grid::HomoGraph homo;
    gnn::HomoWorkspace homo_ws;
    gnn::HeteroWorkspace hetero_ws;
    int ref_bus;

    explicit ModelHarness(const std::string& name) {
        c = data::load_case(std::string(LUMINA_FIXTURE_DIR) + "/" + name + ".json");
        data::GenerationParams p;
        p.seed = 4;
        p.count = 12;
        ds = data::generate_dataset(c, p);
        hetero = grid::build_hetero_graph(c);
        homo = grid::to_homogeneous(hetero);
        homo_ws = gnn::HomoWorkspace::build(homo);
        hetero_ws = gnn::HeteroWorkspace::build(hetero);
        ref_bus = c.reference_bus();
    }

    gnn::ForwardResult<double> forward(Tape<double>& t, const gnn::ModelConfig& cfg,
                                       const gnn::ParamStore<double>& params,
                                       size_t instance = 0,
                                       bool collect = false) const {
        const auto bound = gnn::BoundParams<double>::bind(t, params);
        gnn::ModelForwardOptions opts;
        opts.collect_activations = collect;
        return gnn::model_forward(t, cfg, bound, hetero, homo, homo_ws, hetero_ws,
                                  ds.instances[instance].load_profile, ds.stats,
                                  ref_bus, opts);
    }
};

gnn::ModelConfig small_config(gnn::Arch arch) {
    gnn::ModelConfig cfg;
    cfg.architecture = arch;
    cfg.layers = 1;
    cfg.hidden = 8;
    cfg.heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("model config validation") {
    gnn::ModelConfig cfg;
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.layers = 2;
    cfg.hidden = 12;
    cfg.heads = 5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.heads = 4;
    cfg.validate();
}

TEST_CASE("prediction shapes follow the case and va_ref is pinned to zero") {
    const ModelHarness h("case3");
    for (const auto arch : {gnn::Arch::gcn, gnn::Arch::gat, gnn::Arch::gin,
                            gnn::Arch::graph_transformer, gnn::Arch::heterognn,
                            gnn::Arch::hgt}) {
        const auto cfg = small_config(arch);
        const auto params = gnn::init_params<double>(cfg, 7);
        Tape<double> t;
        const auto fwd = h.forward(t, cfg, params);
        CHECK(t.shape(fwd.vm).numel() == 3);
        CHECK(t.shape(fwd.va).numel() == 3);
        CHECK(t.shape(fwd.pg).numel() == 2);
        CHECK(t.shape(fwd.qg).numel() == 2);
        CHECK(t.shape(fwd.pred_norm).numel() == 3 * 2 + 2 * 2);
        CHECK(t.value(fwd.va)[h.ref_bus] == 0.0);
    }
}

TEST_CASE("zero decoders predict the denormalized zero vector") {
    const ModelHarness h("case3");
    const auto cfg = small_config(gnn::Arch::gcn);
    auto params = gnn::init_params<double>(cfg, 7);
    for (const char* name : {"gcn/dec/bus/W", "gcn/dec/bus/b", "gcn/dec/gen/W",
                             "gcn/dec/gen/b"})
        std::fill(params.at(name).data.begin(), params.at(name).data.end(), 0.0);

    Tape<double> t;
    const auto fwd = h.forward(t, cfg, params);
    const auto& bt = h.ds.stats.bus_targets;
    const auto& gt = h.ds.stats.gen_targets;
    const auto vm = t.value(fwd.vm);
    const auto va = t.value(fwd.va);
    for (int i = 0; i < 3; ++i) {
        CHECK(vm[i] == doctest::Approx(bt.mean[0]).epsilon(1e-15));
        if (i == h.ref_bus)
            CHECK(va[i] == 0.0);
        else
            CHECK(va[i] == doctest::Approx(bt.mean[1]).epsilon(1e-15));
    }
    for (double v : t.value(fwd.pg)) CHECK(v == doctest::Approx(gt.mean[0]));
    for (double v : t.value(fwd.qg)) CHECK(v == doctest::Approx(gt.mean[1]));
}

TEST_CASE("architecture/view mismatch cannot happen through the public config") {
    // parse_arch rejects unknown names; the forward dispatches on the enum.
    CHECK_THROWS_AS(gnn::parse_arch("resnet"), ValidationError);
}

TEST_CASE("pooled activations have layer count layers+1 and hidden width") {
    const ModelHarness h("case3");
    for (const auto arch : {gnn::Arch::gat, gnn::Arch::hgt}) {
        auto cfg = small_config(arch);
        cfg.layers = 3;
        const auto params = gnn::init_params<double>(cfg, 1);
        Tape<double> t;
        const auto fwd = h.forward(t, cfg, params, 0, true);
        REQUIRE(fwd.pooled.size() == 4);
        for (const auto& layer : fwd.pooled) CHECK(layer.size() == 8);
    }
}

TEST_CASE("MSE gradients through the whole model match finite differences") {
    const ModelHarness h("case2");
    for (const auto arch : {gnn::Arch::gcn, gnn::Arch::hgt}) {
        const auto cfg = small_config(arch);
        const auto params0 = gnn::init_params<double>(cfg, 11);
        const auto label = data::normalized_targets(h.ds.instances[0].label, h.ds.stats);

        std::vector<double> x0;
        for (const auto& e : params0.entries)
            x0.insert(x0.end(), e.tensor.data.begin(), e.tensor.data.end());

        const auto with_params = [&](std::span<const double> x) {
            gnn::ParamStore<double> p = params0;
            size_t off = 0;
            for (auto& e : p.entries) {
                std::copy(x.begin() + off, x.begin() + off + e.tensor.data.size(),
                          e.tensor.data.begin());
                off += e.tensor.data.size();
            }
            return p;
        };
        const auto value = [&](std::span<const double> x) {
            Tape<double> t;
            const auto p = with_params(x);
            const auto fwd = h.forward(t, cfg, p);
            const auto lbl =
                t.constant(Shape::vec(static_cast<int64_t>(label.size())), label);
            return t.value(obj::mse_loss(t, fwd.pred_norm, lbl))[0];
        };
        const auto grad = [&](std::span<const double> x) {
            Tape<double> t;
            const auto p = with_params(x);
            const auto bound = gnn::BoundParams<double>::bind(t, p);
            const auto fwd = gnn::model_forward(t, cfg, bound, h.hetero, h.homo,
                                                h.homo_ws, h.hetero_ws,
                                                h.ds.instances[0].load_profile,
                                                h.ds.stats, h.ref_bus);
            const auto lbl =
                t.constant(Shape::vec(static_cast<int64_t>(label.size())), label);
            t.backward(obj::mse_loss(t, fwd.pred_norm, lbl));
            std::vector<double> out;
            for (auto id : bound.ids) {
                const auto gi = t.grad(id);
                out.insert(out.end(), gi.begin(), gi.end());
            }
            return out;
        };
        // Composite check: a slightly larger step keeps the difference
        // quotient above the roundoff floor for near-zero attention gradients.
        const auto rep = ad::grad_check(value, grad, x0, 1e-5);
        INFO(gnn::arch_name(arch));
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("parameter checkpoints name every tensor by layer and role") {
    const auto cfg = small_config(gnn::Arch::hgt);
    const auto params = gnn::init_params<double>(cfg, 0);
    CHECK(params.contains("hgt/enc/W/bus"));
    CHECK(params.contains("hgt/0/q/generator"));
    CHECK(params.contains("hgt/0/att/ac_line_rev"));
    CHECK(params.contains("hgt/dec/gen/W"));
    CHECK_THROWS_AS(params.at("hgt/9/q/bus"), ValidationError);
}
