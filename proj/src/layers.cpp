#include <cmath>

#include "lumina/gnn.hpp"

namespace lumina::gnn {

Arch parse_arch(const std::string& s) {
    if (s == "gcn") return Arch::gcn;
    if (s == "gat") return Arch::gat;
    if (s == "gin") return Arch::gin;
    if (s == "graph_transformer" || s == "transformer") return Arch::graph_transformer;
    if (s == "heterognn") return Arch::heterognn;
    if (s == "hgt") return Arch::hgt;
    throw ValidationError("unknown architecture '" + s + "'");
}

std::string arch_name(Arch a) {
    switch (a) {
        case Arch::gcn: return "gcn";
        case Arch::gat: return "gat";
        case Arch::gin: return "gin";
        case Arch::graph_transformer: return "graph_transformer";
        case Arch::heterognn: return "heterognn";
        case Arch::hgt: return "hgt";
    }
    return "?";
}

bool is_hetero(Arch a) { return a == Arch::heterognn || a == Arch::hgt; }

void ModelConfig::validate() const {
    if (layers < 1) throw ValidationError("model config: layers must be >= 1");
    if (hidden < 1) throw ValidationError("model config: hidden must be >= 1");
    if (heads < 1 || hidden % heads != 0)
        throw ValidationError("model config: heads must divide hidden");
}

HomoWorkspace HomoWorkspace::build(const grid::HomoGraph& g) {
    HomoWorkspace ws;
    ws.n = g.n_nodes;
    ws.raw_src = g.edge_src;
    ws.raw_dst = g.edge_dst;

    std::vector<ad::Index> src(*g.edge_src), dst(*g.edge_dst);
    for (int64_t i = 0; i < g.n_nodes; ++i) {
        src.push_back(static_cast<ad::Index>(i));
        dst.push_back(static_cast<ad::Index>(i));
    }

    // Degrees with self loop: d_i = deg_i + 1.
    std::vector<double> deg(g.n_nodes, 1.0);
    for (ad::Index s : *g.edge_src) deg[s] += 1.0;

    ws.gcn_coeff.reserve(src.size());
    for (size_t e = 0; e < src.size(); ++e)
        ws.gcn_coeff.push_back(1.0 / std::sqrt(deg[src[e]] * deg[dst[e]]));

    ws.attn_mask.assign(g.n_nodes * g.n_nodes, ad::kMaskFloor);
    for (int64_t i = 0; i < g.n_nodes; ++i) ws.attn_mask[i * g.n_nodes + i] = 0.0;
    const auto& es = *g.edge_src;
    const auto& ed = *g.edge_dst;
    // Row = attending node, column = neighbor it may attend to.
    for (size_t e = 0; e < es.size(); ++e)
        ws.attn_mask[static_cast<int64_t>(ed[e]) * g.n_nodes + es[e]] = 0.0;

    ws.loop_src = ad::make_indices(std::move(src));
    ws.loop_dst = ad::make_indices(std::move(dst));
    return ws;
}

HeteroWorkspace HeteroWorkspace::build(const grid::HeteroGraph& g) {
    HeteroWorkspace ws;
    ws.inv_in_degree.resize(g.relations.size());
    for (size_t ri = 0; ri < g.relations.size(); ++ri) {
        const auto& rel = g.relations[ri];
        if (rel.n_edges() == 0) continue;
        const int n_dst = g.n_of(rel.dst);
        std::vector<double> deg(n_dst, 0.0);
        for (ad::Index d : *rel.dst_idx) deg[d] += 1.0;
        auto& inv = ws.inv_in_degree[ri];
        inv.resize(n_dst);
        for (int i = 0; i < n_dst; ++i) inv[i] = deg[i] > 0.0 ? 1.0 / deg[i] : 0.0;
    }

    for (int t = 0; t < grid::kNodeTypeCount; ++t) {
        const int n_t = g.n_by_type[t];
        if (n_t == 0) continue;
        int64_t cols = 0;
        for (size_t ri = 0; ri < g.relations.size(); ++ri) {
            const auto& rel = g.relations[ri];
            if (static_cast<int>(rel.dst) != t || rel.n_edges() == 0) continue;
            ws.blocks[t].push_back({static_cast<int>(ri), cols, g.n_of(rel.src)});
            cols += g.n_of(rel.src);
        }
        ws.n_candidates[t] = cols;
        if (cols == 0) continue;
        ws.attn_mask[t].assign(static_cast<size_t>(n_t) * cols, ad::kMaskFloor);
        for (const auto& blk : ws.blocks[t]) {
            const auto& rel = g.relations[blk.relation];
            const auto& src = *rel.src_idx;
            const auto& dst = *rel.dst_idx;
            for (size_t e = 0; e < src.size(); ++e)
                ws.attn_mask[t][static_cast<size_t>(dst[e]) * cols + blk.col_base +
                                src[e]] = 0.0;
        }
    }
    return ws;
}

namespace {

template <class T>
Id<T> apply_activation(ad::Tape<T>& tape, Id<T> x, Activation act) {
    switch (act) {
        case Activation::identity: return x;
        case Activation::relu: return tape.max_with_zero(x);
        case Activation::leaky_relu: return tape.leaky_relu(x, T(0.01));
    }
    return x;
}

template <class T>
Id<T> const_vec(ad::Tape<T>& tape, const std::vector<double>& v) {
    const std::vector<T> cv(v.begin(), v.end());
    return tape.constant(ad::Shape::vec(static_cast<int64_t>(cv.size())),
                         std::span<const T>(cv));
}

template <class T>
Id<T> const_mat(ad::Tape<T>& tape, const std::vector<double>& v, int64_t r, int64_t c) {
    const std::vector<T> cv(v.begin(), v.end());
    return tape.constant(ad::Shape::mat(r, c), std::span<const T>(cv));
}

template <class T>
Id<T> scale_rows(ad::Tape<T>& tape, Id<T> mat, Id<T> colvec) {
    // colvec is (r); broadcast as a column across the matrix columns.
    const ad::Shape s = tape.shape(mat);
    const Id<T> col = tape.reshape(colvec, ad::Shape::mat(s.d0, 1));
    return tape.mul(mat, tape.broadcast(col, s));
}

}  // namespace

template <class T>
Id<T> gcn_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws, Id<T> w,
                Activation act) {
    if (tape.shape(h).d0 != ws.n)
        throw ValidationError("gcn_layer: embedding rows do not match graph nodes");
    const Id<T> msgs = tape.gather_rows(h, ws.loop_src);
    const Id<T> weighted = scale_rows(tape, msgs, const_vec(tape, ws.gcn_coeff));
    const Id<T> agg = tape.scatter_add_rows(weighted, ws.loop_dst, ws.n);
    return apply_activation(tape, tape.matmul(agg, w), act);
}

template <class T>
Id<T> gat_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws, Id<T> w,
                Id<T> a_src, Id<T> a_dst, int heads, T score_slope, Activation act) {
    const int64_t n = ws.n;
    const int64_t out = tape.shape(w).d1;
    if (out % heads != 0) throw ValidationError("gat_layer: heads must divide width");
    const int64_t dh = out / heads;
    const Id<T> mask = const_mat(tape, ws.attn_mask, n, n);
    const Id<T> hw = tape.matmul(h, w);
    Id<T> result = -1;
    for (int k = 0; k < heads; ++k) {
        const Id<T> hk = tape.slice(hw, 1, k * dh, dh);
        const Id<T> ak_src = tape.reshape(tape.slice(a_src, 0, k * dh, dh),
                                          ad::Shape::mat(dh, 1));
        const Id<T> ak_dst = tape.reshape(tape.slice(a_dst, 0, k * dh, dh),
                                          ad::Shape::mat(dh, 1));
        // Score s_ij = a_src . Wh_i + a_dst . Wh_j; rows i attend over j.
        const Id<T> si = tape.matmul(hk, ak_src);  // (n, 1)
        const Id<T> sj = tape.matmul(hk, ak_dst);  // (n, 1)
        const Id<T> scores = tape.add(tape.broadcast(si, ad::Shape::mat(n, n)),
                                      tape.broadcast(tape.reshape(sj, ad::Shape::mat(1, n)),
                                                     ad::Shape::mat(n, n)));
        const Id<T> alpha =
            tape.masked_softmax(tape.leaky_relu(scores, score_slope), mask);
        const Id<T> head_out = tape.matmul(alpha, hk);
        result = k == 0 ? head_out : tape.concat(result, head_out, 1);
    }
    return apply_activation(tape, result, act);
}

template <class T>
Id<T> gin_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws, Id<T> w1, Id<T> b1,
                Id<T> w2, Id<T> b2, Id<T> eps_scalar) {
    const ad::Shape s = tape.shape(h);
    Id<T> agg;
    if (ws.raw_src->empty()) {
        std::vector<T> zeros(s.numel(), T(0));
        agg = tape.constant(s, std::span<const T>(zeros));
    } else {
        agg = tape.scatter_add_rows(tape.gather_rows(h, ws.raw_src), ws.raw_dst, ws.n);
    }
    const Id<T> one = tape.constant_scalar(T(1));
    const Id<T> scale = tape.broadcast(tape.add(one, eps_scalar), s);
    const Id<T> pre = tape.add(tape.mul(scale, h), agg);
    const Id<T> hidden1 = tape.max_with_zero(
        tape.add(tape.matmul(pre, w1), tape.broadcast(b1, ad::Shape::mat(s.d0, tape.shape(b1).d0))));
    return tape.add(tape.matmul(hidden1, w2),
                    tape.broadcast(b2, ad::Shape::mat(s.d0, tape.shape(b2).d0)));
}

template <class T>
Id<T> graph_transformer_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws,
                              Id<T> wq, Id<T> wk, Id<T> wv, int heads) {
    const int64_t n = ws.n;
    const int64_t width = tape.shape(wq).d1;
    if (width % heads != 0)
        throw ValidationError("graph_transformer_layer: heads must divide width");
    const int64_t dh = width / heads;
    const Id<T> mask = const_mat(tape, ws.attn_mask, n, n);
    const Id<T> q = tape.matmul(h, wq);
    const Id<T> k = tape.matmul(h, wk);
    const Id<T> v = tape.matmul(h, wv);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    Id<T> result = -1;
    for (int hd = 0; hd < heads; ++hd) {
        const Id<T> qh = tape.slice(q, 1, hd * dh, dh);
        const Id<T> kh = tape.slice(k, 1, hd * dh, dh);
        const Id<T> vh = tape.slice(v, 1, hd * dh, dh);
        Id<T> scores = tape.matmul_nt(qh, kh);
        scores = tape.mul(scores, tape.broadcast(tape.constant_scalar(inv_sqrt),
                                                 ad::Shape::mat(n, n)));
        const Id<T> alpha = tape.masked_softmax(scores, mask);
        const Id<T> head_out = tape.matmul(alpha, vh);
        result = hd == 0 ? head_out : tape.concat(result, head_out, 1);
    }
    return result;
}

template <class T>
TypedIds<T> heterognn_layer(ad::Tape<T>& tape, const TypedIds<T>& h,
                            const grid::HeteroGraph& g, const HeteroWorkspace& ws,
                            const std::array<Id<T>, 4>& w_self,
                            const std::vector<Id<T>>& w_rel, Activation act) {
    TypedIds<T> out = {-1, -1, -1, -1};
    for (int t = 0; t < grid::kNodeTypeCount; ++t) {
        if (h[t] < 0) continue;
        Id<T> acc = tape.matmul(h[t], w_self[t]);
        for (size_t ri = 0; ri < g.relations.size(); ++ri) {
            const auto& rel = g.relations[ri];
            if (static_cast<int>(rel.dst) != t || rel.n_edges() == 0) continue;
            const int src_t = static_cast<int>(rel.src);
            if (h[src_t] < 0) continue;
            Id<T> msg_in = tape.gather_rows(h[src_t], rel.src_idx);
            if (rel.feat_width > 0) {
                const Id<T> efeat = const_mat(tape, rel.edge_features, rel.n_edges(),
                                              rel.feat_width);
                msg_in = tape.concat(msg_in, efeat, 1);
            }
            const Id<T> msgs = tape.matmul(msg_in, w_rel[ri]);
            const Id<T> summed =
                tape.scatter_add_rows(msgs, rel.dst_idx, g.n_by_type[t]);
            const Id<T> mean =
                scale_rows(tape, summed, const_vec(tape, ws.inv_in_degree[ri]));
            acc = tape.add(acc, mean);
        }
        out[t] = apply_activation(tape, acc, act);
    }
    return out;
}

template <class T>
TypedIds<T> hgt_layer(ad::Tape<T>& tape, const TypedIds<T>& h,
                      const grid::HeteroGraph& g, const HeteroWorkspace& ws,
                      const std::array<Id<T>, 4>& wq, const std::array<Id<T>, 4>& wk,
                      const std::array<Id<T>, 4>& wv, const std::vector<Id<T>>& w_att,
                      int heads, Activation act) {
    TypedIds<T> out = {-1, -1, -1, -1};
    std::array<Id<T>, 4> q{-1, -1, -1, -1}, kk{-1, -1, -1, -1}, vv{-1, -1, -1, -1};
    for (int t = 0; t < grid::kNodeTypeCount; ++t) {
        if (h[t] < 0) continue;
        q[t] = tape.matmul(h[t], wq[t]);
        kk[t] = tape.matmul(h[t], wk[t]);
        vv[t] = tape.matmul(h[t], wv[t]);
    }
    for (int t = 0; t < grid::kNodeTypeCount; ++t) {
        if (h[t] < 0) continue;
        const int64_t n_t = g.n_by_type[t];
        if (ws.blocks[t].empty()) {
            out[t] = h[t];  // no incoming edges: residual only
            continue;
        }
        const int64_t width = tape.shape(q[t]).d1;
        const int64_t dh = width / heads;
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
        const Id<T> mask = const_mat(tape, ws.attn_mask[t], n_t, ws.n_candidates[t]);
        Id<T> agg = -1;
        for (int hd = 0; hd < heads; ++hd) {
            const Id<T> qh = tape.slice(q[t], 1, hd * dh, dh);
            Id<T> scores = -1;
            Id<T> values = -1;
            for (const auto& blk : ws.blocks[t]) {
                const auto& rel = g.relations[blk.relation];
                const int src_t = static_cast<int>(rel.src);
                const Id<T> kh = tape.slice(kk[src_t], 1, hd * dh, dh);
                const Id<T> wa_h = tape.slice(w_att[blk.relation], 0, hd * dh, dh);
                const Id<T> transformed = tape.matmul_nt(kh, wa_h);  // K W_A^T
                Id<T> s_blk = tape.matmul_nt(qh, transformed);
                s_blk = tape.mul(s_blk,
                                 tape.broadcast(tape.constant_scalar(inv_sqrt),
                                                tape.shape(s_blk)));
                const Id<T> v_blk = tape.slice(vv[src_t], 1, hd * dh, dh);
                scores = scores < 0 ? s_blk : tape.concat(scores, s_blk, 1);
                values = values < 0 ? v_blk : tape.concat(values, v_blk, 0);
            }
            const Id<T> alpha = tape.masked_softmax(scores, mask);
            const Id<T> head_out = tape.matmul(alpha, values);
            agg = hd == 0 ? head_out : tape.concat(agg, head_out, 1);
        }
        out[t] = tape.add(h[t], apply_activation(tape, agg, act));
    }
    return out;
}

#define LUMINA_INSTANTIATE(T)                                                            \
    template Id<T> gcn_layer<T>(ad::Tape<T>&, Id<T>, const HomoWorkspace&, Id<T>,        \
                                Activation);                                             \
    template Id<T> gat_layer<T>(ad::Tape<T>&, Id<T>, const HomoWorkspace&, Id<T>,        \
                                Id<T>, Id<T>, int, T, Activation);                       \
    template Id<T> gin_layer<T>(ad::Tape<T>&, Id<T>, const HomoWorkspace&, Id<T>,        \
                                Id<T>, Id<T>, Id<T>, Id<T>);                             \
    template Id<T> graph_transformer_layer<T>(ad::Tape<T>&, Id<T>,                      \
                                              const HomoWorkspace&, Id<T>, Id<T>,        \
                                              Id<T>, int);                               \
    template TypedIds<T> heterognn_layer<T>(ad::Tape<T>&, const TypedIds<T>&,            \
                                            const grid::HeteroGraph&,                   \
                                            const HeteroWorkspace&,                     \
                                            const std::array<Id<T>, 4>&,                \
                                            const std::vector<Id<T>>&, Activation);     \
    template TypedIds<T> hgt_layer<T>(ad::Tape<T>&, const TypedIds<T>&,                 \
                                      const grid::HeteroGraph&, const HeteroWorkspace&, \
                                      const std::array<Id<T>, 4>&,                      \
                                      const std::array<Id<T>, 4>&,                      \
                                      const std::array<Id<T>, 4>&,                      \
                                      const std::vector<Id<T>>&, int, Activation);

LUMINA_INSTANTIATE(float)
LUMINA_INSTANTIATE(double)
#undef LUMINA_INSTANTIATE

}  // namespace lumina::gnn
