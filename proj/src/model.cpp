#include <cmath>

#include "lumina/gnn.hpp"

namespace lumina::gnn {

namespace {

struct RelationSpec {
    std::string name;
    int feat_width;
};

// Canonical relation order; matches build_hetero_graph exactly.
const std::vector<RelationSpec>& relation_specs() {
    static const std::vector<RelationSpec> specs = {
        {"ac_line", grid::kBranchFeatureWidth},
        {"ac_line_rev", grid::kBranchFeatureWidth},
        {"transformer", grid::kBranchFeatureWidth},
        {"transformer_rev", grid::kBranchFeatureWidth},
        {"gen_link", 0},
        {"gen_link_rev", 0},
        {"load_link", 0},
        {"load_link_rev", 0},
        {"shunt_link", 0},
        {"shunt_link_rev", 0},
    };
    return specs;
}

}  // namespace

template <class T>
ad::Tensor<T>& ParamStore<T>::add(const std::string& name, ad::Shape shape) {
    if (index.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
    index[name] = entries.size();
    entries.push_back({name, ad::Tensor<T>::zeros(shape)});
    return entries.back().tensor;
}

template <class T>
const ad::Tensor<T>& ParamStore<T>::at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("missing parameter '" + name + "'");
    return entries[it->second].tensor;
}

template <class T>
ad::Tensor<T>& ParamStore<T>::at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("missing parameter '" + name + "'");
    return entries[it->second].tensor;
}

template <class T>
int64_t ParamStore<T>::total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.tensor.shape.numel();
    return n;
}

template <class T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    auto g = rng::make_stream(seed, 0x9a2a);

    const auto xavier = [&](ad::Tensor<T>& t, int64_t fan_in, int64_t fan_out) {
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : t.data) v = static_cast<T>(rng::uniform(g, -s, s));
    };
    const auto weight = [&](const std::string& name, int64_t in, int64_t out) {
        xavier(store.add(name, ad::Shape::mat(in, out)), in, out);
    };
    // Uniform-by-fan-in bias init; keeps units off the relu kink even when a
    // type's normalized features are identically zero (single-component types).
    const auto bias = [&](const std::string& name, int64_t n, int64_t fan_in) {
        auto& t = store.add(name, ad::Shape::vec(n));
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data) v = static_cast<T>(rng::uniform(g, -s, s));
    };
    const auto vec_param = [&](const std::string& name, int64_t n, int64_t fan_in) {
        xavier(store.add(name, ad::Shape::vec(n)), fan_in, 1);
    };

    const std::string p = arch_name(cfg.architecture) + "/";
    const int64_t hid = cfg.hidden;
    const int64_t dh = cfg.head_dim();

    if (is_hetero(cfg.architecture)) {
        for (int t = 0; t < grid::kNodeTypeCount; ++t) {
            weight(p + "enc/W/" + grid::kNodeTypeNames[t], grid::kNodeFeatureWidth[t],
                   hid);
            bias(p + "enc/b/" + grid::kNodeTypeNames[t], hid, grid::kNodeFeatureWidth[t]);
        }
    } else {
        weight(p + "enc/W", grid::kHomoFeatureWidth, hid);
        bias(p + "enc/b", hid, grid::kHomoFeatureWidth);
    }

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = p + std::to_string(l) + "/";
        switch (cfg.architecture) {
            case Arch::gcn:
                weight(lp + "W", hid, hid);
                break;
            case Arch::gat:
                weight(lp + "W", hid, hid);
                vec_param(lp + "a_src", hid, hid);
                vec_param(lp + "a_dst", hid, hid);
                break;
            case Arch::gin:
                weight(lp + "mlp1_W", hid, hid);
                bias(lp + "mlp1_b", hid, hid);
                weight(lp + "mlp2_W", hid, hid);
                bias(lp + "mlp2_b", hid, hid);
                if (cfg.epsilon_learnable) store.add(lp + "eps", ad::Shape::scalar());
                break;
            case Arch::graph_transformer:
                weight(lp + "Wq", hid, hid);
                weight(lp + "Wk", hid, hid);
                weight(lp + "Wv", hid, hid);
                break;
            case Arch::heterognn:
                for (int t = 0; t < grid::kNodeTypeCount; ++t)
                    weight(lp + "self/" + grid::kNodeTypeNames[t], hid, hid);
                for (const auto& spec : relation_specs())
                    weight(lp + "rel/" + spec.name, hid + spec.feat_width, hid);
                break;
            case Arch::hgt:
                for (int t = 0; t < grid::kNodeTypeCount; ++t)
                    weight(lp + "q/" + grid::kNodeTypeNames[t], hid, hid);
                for (int t = 0; t < grid::kNodeTypeCount; ++t)
                    weight(lp + "k/" + grid::kNodeTypeNames[t], hid, hid);
                for (int t = 0; t < grid::kNodeTypeCount; ++t)
                    weight(lp + "v/" + grid::kNodeTypeNames[t], hid, hid);
                for (const auto& spec : relation_specs())
                    weight(lp + "att/" + spec.name, cfg.heads * dh, dh);
                break;
        }
    }

    weight(p + "dec/bus/W", hid, 2);
    bias(p + "dec/bus/b", 2, hid);
    weight(p + "dec/gen/W", hid, 2);
    bias(p + "dec/gen/b", 2, hid);
    return store;
}

template <class T>
BoundParams<T> BoundParams<T>::bind(ad::Tape<T>& tape, const ParamStore<T>& store) {
    BoundParams<T> b;
    b.store = &store;
    b.ids.reserve(store.entries.size());
    for (const auto& e : store.entries)
        b.ids.push_back(tape.param(e.tensor.shape, std::span<const T>(e.tensor.data)));
    return b;
}

template <class T>
Id<T> BoundParams<T>::of(const std::string& name) const {
    auto it = store->index.find(name);
    if (it == store->index.end())
        throw ValidationError("missing parameter '" + name + "'");
    return ids[it->second];
}

namespace {

template <class T>
Id<T> const_from(ad::Tape<T>& tape, const std::vector<double>& v, ad::Shape s) {
    const std::vector<T> cv(v.begin(), v.end());
    return tape.constant(s, std::span<const T>(cv));
}

template <class T>
Id<T> linear(ad::Tape<T>& tape, Id<T> x, Id<T> w, Id<T> b) {
    const int64_t rows = tape.shape(x).d0;
    const int64_t out = tape.shape(w).d1;
    return tape.add(tape.matmul(x, w), tape.broadcast(b, ad::Shape::mat(rows, out)));
}

/// Column means over one or more row-major matrices (hetero: all node types).
template <class T>
std::vector<double> pool_columns(const std::vector<std::span<const T>>& mats,
                                 int64_t width) {
    std::vector<double> pooled(width, 0.0);
    int64_t rows = 0;
    for (const auto& m : mats) {
        const int64_t r = static_cast<int64_t>(m.size()) / width;
        for (int64_t i = 0; i < r; ++i)
            for (int64_t c = 0; c < width; ++c)
                pooled[c] += static_cast<double>(m[i * width + c]);
        rows += r;
    }
    if (rows > 0)
        for (auto& v : pooled) v /= static_cast<double>(rows);
    return pooled;
}

std::array<std::vector<double>, 4> normalized_typed_features(
    const grid::HeteroGraph& g, const std::vector<std::array<double, 2>>& profile,
    const data::NormStats& stats) {
    std::array<std::vector<double>, 4> out;
    for (int t = 0; t < grid::kNodeTypeCount; ++t) {
        if (t == static_cast<int>(grid::NodeType::load)) {
            std::vector<double> rows;
            rows.reserve(profile.size() * 2);
            for (const auto& l : profile) {
                rows.push_back(l[0]);
                rows.push_back(l[1]);
            }
            out[t] = data::normalize(rows, 2, stats.node_features[t]);
        } else {
            out[t] = data::normalize(g.features[t], grid::kNodeFeatureWidth[t],
                                     stats.node_features[t]);
        }
    }
    return out;
}

}  // namespace

template <class T>
ForwardResult<T> model_forward(ad::Tape<T>& tape, const ModelConfig& cfg,
                               const BoundParams<T>& params,
                               const grid::HeteroGraph& hetero,
                               const grid::HomoGraph& homo, const HomoWorkspace& homo_ws,
                               const HeteroWorkspace& hetero_ws,
                               const std::vector<std::array<double, 2>>& load_profile,
                               const data::NormStats& stats, int ref_bus,
                               const ModelForwardOptions& opts) {
    cfg.validate();
    if (static_cast<int>(load_profile.size()) != hetero.n_of(grid::NodeType::load))
        throw ValidationError("model_forward: load profile length mismatch");
    const std::string p = arch_name(cfg.architecture) + "/";
    const int n_bus = hetero.n_of(grid::NodeType::bus);
    const int n_gen = hetero.n_of(grid::NodeType::gen);
    const auto typed = normalized_typed_features(hetero, load_profile, stats);

    ForwardResult<T> out;
    Id<T> bus_h = -1, gen_h = -1;

    const auto maybe_pool = [&](const std::vector<Id<T>>& hs, int64_t width) {
        if (!opts.collect_activations) return;
        std::vector<std::span<const T>> mats;
        for (Id<T> h : hs)
            if (h >= 0) mats.push_back(tape.value(h));
        out.pooled.push_back(pool_columns<T>(mats, width));
    };

    if (is_hetero(cfg.architecture)) {
        TypedIds<T> h = {-1, -1, -1, -1};
        for (int t = 0; t < grid::kNodeTypeCount; ++t) {
            const int nt = hetero.n_by_type[t];
            if (nt == 0) continue;
            const Id<T> x = const_from(
                tape, typed[t], ad::Shape::mat(nt, grid::kNodeFeatureWidth[t]));
            h[t] = tape.max_with_zero(
                linear(tape, x, params.of(p + "enc/W/" + grid::kNodeTypeNames[t]),
                       params.of(p + "enc/b/" + grid::kNodeTypeNames[t])));
        }
        maybe_pool({h[0], h[1], h[2], h[3]}, cfg.hidden);

        for (int l = 0; l < cfg.layers; ++l) {
            const std::string lp = p + std::to_string(l) + "/";
            if (cfg.architecture == Arch::heterognn) {
                std::array<Id<T>, 4> w_self;
                for (int t = 0; t < grid::kNodeTypeCount; ++t)
                    w_self[t] = params.of(lp + "self/" + grid::kNodeTypeNames[t]);
                std::vector<Id<T>> w_rel;
                for (const auto& spec : relation_specs())
                    w_rel.push_back(params.of(lp + "rel/" + spec.name));
                h = heterognn_layer(tape, h, hetero, hetero_ws, w_self, w_rel,
                                    Activation::relu);
            } else {
                std::array<Id<T>, 4> wq, wk, wv;
                for (int t = 0; t < grid::kNodeTypeCount; ++t) {
                    wq[t] = params.of(lp + "q/" + grid::kNodeTypeNames[t]);
                    wk[t] = params.of(lp + "k/" + grid::kNodeTypeNames[t]);
                    wv[t] = params.of(lp + "v/" + grid::kNodeTypeNames[t]);
                }
                std::vector<Id<T>> w_att;
                for (const auto& spec : relation_specs())
                    w_att.push_back(params.of(lp + "att/" + spec.name));
                h = hgt_layer(tape, h, hetero, hetero_ws, wq, wk, wv, w_att, cfg.heads,
                              Activation::relu);
            }
            maybe_pool({h[0], h[1], h[2], h[3]}, cfg.hidden);
        }
        bus_h = h[static_cast<int>(grid::NodeType::bus)];
        gen_h = h[static_cast<int>(grid::NodeType::gen)];
    } else {
        // Assemble the homogeneous view from normalized typed blocks:
        // [one-hot(4) | typed features normalized then zero-padded].
        const int64_t n = homo.n_nodes;
        std::vector<double> feats(n * grid::kHomoFeatureWidth, 0.0);
        const std::array<int64_t, 4> base = {0, homo.n_bus, homo.n_bus + homo.n_gen,
                                             homo.n_bus + homo.n_gen + homo.n_load};
        for (int t = 0; t < grid::kNodeTypeCount; ++t) {
            const int w = grid::kNodeFeatureWidth[t];
            for (int i = 0; i < hetero.n_by_type[t]; ++i) {
                double* row = feats.data() + (base[t] + i) * grid::kHomoFeatureWidth;
                row[t] = 1.0;
                for (int k = 0; k < w; ++k)
                    row[grid::kNodeTypeCount + k] = typed[t][i * w + k];
            }
        }
        const Id<T> x =
            const_from(tape, feats, ad::Shape::mat(n, grid::kHomoFeatureWidth));
        Id<T> h = tape.max_with_zero(
            linear(tape, x, params.of(p + "enc/W"), params.of(p + "enc/b")));
        maybe_pool({h}, cfg.hidden);

        for (int l = 0; l < cfg.layers; ++l) {
            const std::string lp = p + std::to_string(l) + "/";
            switch (cfg.architecture) {
                case Arch::gcn:
                    h = gcn_layer(tape, h, homo_ws, params.of(lp + "W"),
                                  Activation::relu);
                    break;
                case Arch::gat:
                    h = gat_layer(tape, h, homo_ws, params.of(lp + "W"),
                                  params.of(lp + "a_src"), params.of(lp + "a_dst"),
                                  cfg.heads, static_cast<T>(cfg.leaky_slope),
                                  Activation::relu);
                    break;
                case Arch::gin: {
                    const Id<T> eps =
                        cfg.epsilon_learnable
                            ? params.of(lp + "eps")
                            : tape.constant_scalar(T(0));
                    h = gin_layer(tape, h, homo_ws, params.of(lp + "mlp1_W"),
                                  params.of(lp + "mlp1_b"), params.of(lp + "mlp2_W"),
                                  params.of(lp + "mlp2_b"), eps);
                    break;
                }
                case Arch::graph_transformer:
                    h = graph_transformer_layer(tape, h, homo_ws, params.of(lp + "Wq"),
                                                params.of(lp + "Wk"),
                                                params.of(lp + "Wv"), cfg.heads);
                    break;
                default:
                    throw ValidationError("model_forward: architecture/view mismatch");
            }
            maybe_pool({h}, cfg.hidden);
        }
        bus_h = tape.slice(h, 0, 0, n_bus);
        gen_h = tape.slice(h, 0, n_bus, n_gen);
    }

    if (bus_h < 0 || gen_h < 0)
        throw ValidationError("model_forward: case must have buses and generators");

    const Id<T> bus_out =
        linear(tape, bus_h, params.of(p + "dec/bus/W"), params.of(p + "dec/bus/b"));
    const Id<T> gen_out =
        linear(tape, gen_h, params.of(p + "dec/gen/W"), params.of(p + "dec/gen/b"));

    // Split decoder columns, force the reference angle in normalized space,
    // then denormalize; an outer mask pins va[ref] to exactly zero.
    const Id<T> vm_norm =
        tape.reshape(tape.slice(bus_out, 1, 0, 1), ad::Shape::vec(n_bus));
    const Id<T> va_norm_raw =
        tape.reshape(tape.slice(bus_out, 1, 1, 1), ad::Shape::vec(n_bus));

    std::vector<double> ref_mask(n_bus, 1.0), ref_add(n_bus, 0.0);
    ref_mask[ref_bus] = 0.0;
    const auto& bt = stats.bus_targets;
    ref_add[ref_bus] = (0.0 - bt.mean[1]) / bt.std[1];
    const Id<T> mask_c = const_from(tape, ref_mask, ad::Shape::vec(n_bus));
    const Id<T> va_norm =
        tape.add(tape.mul(va_norm_raw, mask_c),
                 const_from(tape, ref_add, ad::Shape::vec(n_bus)));

    const auto denorm_vec = [&](Id<T> v, double mean, double sd, int64_t len) {
        const Id<T> sd_c = const_from(tape, std::vector<double>(len, sd),
                                      ad::Shape::vec(len));
        const Id<T> mean_c = const_from(tape, std::vector<double>(len, mean),
                                        ad::Shape::vec(len));
        return tape.add(tape.mul(v, sd_c), mean_c);
    };

    out.vm = denorm_vec(vm_norm, bt.mean[0], bt.std[0], n_bus);
    out.va = tape.mul(denorm_vec(va_norm, bt.mean[1], bt.std[1], n_bus), mask_c);

    const Id<T> pg_norm =
        tape.reshape(tape.slice(gen_out, 1, 0, 1), ad::Shape::vec(n_gen));
    const Id<T> qg_norm =
        tape.reshape(tape.slice(gen_out, 1, 1, 1), ad::Shape::vec(n_gen));
    const auto& gt = stats.gen_targets;
    out.pg = denorm_vec(pg_norm, gt.mean[0], gt.std[0], n_gen);
    out.qg = denorm_vec(qg_norm, gt.mean[1], gt.std[1], n_gen);

    const Id<T> bus_fixed =
        tape.concat(tape.reshape(vm_norm, ad::Shape::mat(n_bus, 1)),
                    tape.reshape(va_norm, ad::Shape::mat(n_bus, 1)), 1);
    out.pred_norm =
        tape.concat(tape.reshape(bus_fixed, ad::Shape::vec(2 * n_bus)),
                    tape.reshape(gen_out, ad::Shape::vec(2 * n_gen)), 0);
    return out;
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template ParamStore<float> init_params<float>(const ModelConfig&, uint64_t);
template ParamStore<double> init_params<double>(const ModelConfig&, uint64_t);
template struct BoundParams<float>;
template struct BoundParams<double>;
template ForwardResult<float> model_forward<float>(
    ad::Tape<float>&, const ModelConfig&, const BoundParams<float>&,
    const grid::HeteroGraph&, const grid::HomoGraph&, const HomoWorkspace&,
    const HeteroWorkspace&, const std::vector<std::array<double, 2>>&,
    const data::NormStats&, int, const ModelForwardOptions&);
template ForwardResult<double> model_forward<double>(
    ad::Tape<double>&, const ModelConfig&, const BoundParams<double>&,
    const grid::HeteroGraph&, const grid::HomoGraph&, const HomoWorkspace&,
    const HeteroWorkspace&, const std::vector<std::array<double, 2>>&,
    const data::NormStats&, int, const ModelForwardOptions&);

}  // namespace lumina::gnn
