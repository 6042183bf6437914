#include "lumina/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace lumina::grid {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ValidationError(msg);
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

int GridCase::reference_bus() const {
    for (const auto& b : buses)
        if (b.is_reference) return b.index;
    throw ValidationError("case " + case_id + ": no reference bus");
}

void GridCase::validate() const {
    require(!buses.empty(), "case " + case_id + ": no buses");
    require(base_mva > 0, "case " + case_id + ": base_mva must be positive");

    int n_ref = 0;
    for (size_t i = 0; i < buses.size(); ++i) {
        const Bus& b = buses[i];
        require(b.index == static_cast<int>(i),
                "case " + case_id + ": bus " + std::to_string(i) + " has index " +
                    std::to_string(b.index));
        if (b.is_reference) ++n_ref;
        require(finite(b.vmin) && finite(b.vmax) && finite(b.base_kv),
                "case " + case_id + ": bus " + std::to_string(i) + " has non-finite data");
        require(b.vmin > 0 && b.vmin <= b.vmax,
                "case " + case_id + ": bus " + std::to_string(i) +
                    " voltage limits violate 0 < vmin <= vmax");
    }
    require(n_ref == 1, "case " + case_id + ": expected exactly one reference bus, found " +
                            std::to_string(n_ref));

    const int nb = n_bus();
    const auto check_bus_ref = [&](const char* kind, int rec, int bus) {
        require(bus >= 0 && bus < nb, "case " + case_id + ": " + kind + " " +
                                          std::to_string(rec) + " references unknown bus " +
                                          std::to_string(bus));
    };
    for (size_t i = 0; i < generators.size(); ++i) {
        const Generator& g = generators[i];
        check_bus_ref("generator", static_cast<int>(i), g.bus);
        require(finite(g.pmin) && finite(g.pmax) && finite(g.qmin) && finite(g.qmax) &&
                    finite(g.vm_setpoint),
                "case " + case_id + ": generator " + std::to_string(i) +
                    " has non-finite data");
        require(g.pmin <= g.pmax, "case " + case_id + ": generator " + std::to_string(i) +
                                      " violates pmin <= pmax");
        require(g.qmin <= g.qmax, "case " + case_id + ": generator " + std::to_string(i) +
                                      " violates qmin <= qmax");
    }
    for (size_t i = 0; i < loads.size(); ++i) {
        check_bus_ref("load", static_cast<int>(i), loads[i].bus);
        require(finite(loads[i].pd) && finite(loads[i].qd),
                "case " + case_id + ": load " + std::to_string(i) + " has non-finite data");
    }
    for (size_t i = 0; i < shunts.size(); ++i) {
        check_bus_ref("shunt", static_cast<int>(i), shunts[i].bus);
        require(finite(shunts[i].gs) && finite(shunts[i].bs),
                "case " + case_id + ": shunt " + std::to_string(i) + " has non-finite data");
    }
    for (size_t i = 0; i < branches.size(); ++i) {
        const Branch& br = branches[i];
        check_bus_ref("branch(from)", static_cast<int>(i), br.from_bus);
        check_bus_ref("branch(to)", static_cast<int>(i), br.to_bus);
        require(finite(br.r) && finite(br.x) && finite(br.b_charging) && finite(br.tap) &&
                    finite(br.shift) && finite(br.s_max),
                "case " + case_id + ": branch " + std::to_string(i) + " has non-finite data");
        require(br.x != 0.0, "case " + case_id + ": branch " + std::to_string(i) +
                                 " has zero reactance");
        require(br.tap > 0.0, "case " + case_id + ": branch " + std::to_string(i) +
                                  " has non-positive tap");
        require(br.s_max >= 0.0, "case " + case_id + ": branch " + std::to_string(i) +
                                     " has negative s_max");
        require(br.from_bus != br.to_bus, "case " + case_id + ": branch " +
                                              std::to_string(i) + " is a self-loop");
    }

    // Connectivity of the branch-induced graph over buses.
    if (nb > 1) {
        std::vector<std::vector<int>> adj(nb);
        for (const auto& br : branches) {
            adj[br.from_bus].push_back(br.to_bus);
            adj[br.to_bus].push_back(br.from_bus);
        }
        std::vector<char> seen(nb, 0);
        std::vector<int> stack = {0};
        seen[0] = 1;
        int count = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int v : adj[u]) {
                if (!seen[v]) {
                    seen[v] = 1;
                    ++count;
                    stack.push_back(v);
                }
            }
        }
        require(count == nb, "case " + case_id + ": branch graph is disconnected (reached " +
                                 std::to_string(count) + " of " + std::to_string(nb) +
                                 " buses)");
    }
}

std::complex<double> SparseComplexMatrix::at(int i, int j) const {
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
        if (col[k] == j) return val[k];
    return {0.0, 0.0};
}

BranchAdmittance branch_admittance(const Branch& b) {
    if (b.r == 0.0 && b.x == 0.0)
        throw ValidationError("branch " + std::to_string(b.index) +
                              " has zero impedance; cannot form admittance");
    const std::complex<double> ys = 1.0 / std::complex<double>(b.r, b.x);
    const std::complex<double> jbc(0.0, b.b_charging / 2.0);
    const std::complex<double> shift = std::polar(1.0, b.shift);
    BranchAdmittance a;
    a.yff = (ys + jbc) / (b.tap * b.tap);
    a.yft = -ys / (b.tap * std::conj(shift));
    a.ytf = -ys / (b.tap * shift);
    a.ytt = ys + jbc;
    return a;
}

SparseComplexMatrix build_admittance(const GridCase& c) {
    const int n = c.n_bus();
    std::map<std::pair<int, int>, std::complex<double>> entries;
    for (const auto& br : c.branches) {
        const BranchAdmittance a = branch_admittance(br);
        entries[{br.from_bus, br.from_bus}] += a.yff;
        entries[{br.from_bus, br.to_bus}] += a.yft;
        entries[{br.to_bus, br.from_bus}] += a.ytf;
        entries[{br.to_bus, br.to_bus}] += a.ytt;
    }
    for (const auto& sh : c.shunts)
        entries[{sh.bus, sh.bus}] += std::complex<double>(sh.gs, sh.bs);

    SparseComplexMatrix y;
    y.n = n;
    y.row_ptr.assign(n + 1, 0);
    for (const auto& [ij, v] : entries) ++y.row_ptr[ij.first + 1];
    for (int i = 0; i < n; ++i) y.row_ptr[i + 1] += y.row_ptr[i];
    y.col.resize(entries.size());
    y.val.resize(entries.size());
    size_t k = 0;
    for (const auto& [ij, v] : entries) {  // map order = sorted (row, col)
        y.col[k] = ij.second;
        y.val[k] = v;
        ++k;
    }
    return y;
}

const std::vector<std::string>& base_relation_names() {
    static const std::vector<std::string> names = {"ac_line", "transformer", "gen_link",
                                                   "load_link", "shunt_link"};
    return names;
}

const Relation& HeteroGraph::relation(const std::string& name) const {
    for (const auto& r : relations)
        if (r.name == name) return r;
    throw ValidationError("hetero graph: no relation named '" + name + "'");
}

int64_t HeteroGraph::edge_count(const std::string& base_name) const {
    return relation(base_name).n_edges() + relation(base_name + "_rev").n_edges();
}

HeteroGraph build_hetero_graph(const GridCase& c) {
    HeteroGraph g;
    g.n_by_type = {c.n_bus(), c.n_gen(), static_cast<int>(c.loads.size()),
                   static_cast<int>(c.shunts.size())};

    auto& bus_f = g.features[0];
    bus_f.reserve(c.buses.size() * 4);
    for (const auto& b : c.buses) {
        bus_f.push_back(b.vmin);
        bus_f.push_back(b.vmax);
        bus_f.push_back(b.is_reference ? 1.0 : 0.0);
        bus_f.push_back(b.base_kv);
    }
    auto& gen_f = g.features[1];
    gen_f.reserve(c.generators.size() * 4);
    for (const auto& gen : c.generators) {
        gen_f.push_back(gen.pmin);
        gen_f.push_back(gen.pmax);
        gen_f.push_back(gen.qmin);
        gen_f.push_back(gen.qmax);
    }
    auto& load_f = g.features[2];
    load_f.reserve(c.loads.size() * 2);
    for (const auto& l : c.loads) {
        load_f.push_back(l.pd);
        load_f.push_back(l.qd);
    }
    auto& shunt_f = g.features[3];
    shunt_f.reserve(c.shunts.size() * 2);
    for (const auto& s : c.shunts) {
        shunt_f.push_back(s.gs);
        shunt_f.push_back(s.bs);
    }

    auto add_pair = [&](const std::string& name, NodeType src, NodeType dst,
                        std::vector<ad::Index> s, std::vector<ad::Index> d,
                        std::vector<double> feats, int width) {
        Relation fwd;
        fwd.name = name;
        fwd.src = src;
        fwd.dst = dst;
        fwd.src_idx = ad::make_indices(std::move(s));
        fwd.dst_idx = ad::make_indices(std::move(d));
        fwd.edge_features = feats;
        fwd.feat_width = width;
        Relation rev;
        rev.name = name + "_rev";
        rev.src = dst;
        rev.dst = src;
        rev.src_idx = fwd.dst_idx;
        rev.dst_idx = fwd.src_idx;
        rev.edge_features = std::move(feats);
        rev.feat_width = width;
        g.relations.push_back(std::move(fwd));
        g.relations.push_back(std::move(rev));
    };

    std::vector<ad::Index> line_s, line_d, xfmr_s, xfmr_d;
    std::vector<double> line_f, xfmr_f;
    for (const auto& br : c.branches) {
        auto& s = br.is_transformer ? xfmr_s : line_s;
        auto& d = br.is_transformer ? xfmr_d : line_d;
        auto& f = br.is_transformer ? xfmr_f : line_f;
        s.push_back(br.from_bus);
        d.push_back(br.to_bus);
        f.insert(f.end(), {br.r, br.x, br.b_charging, br.tap, br.shift, br.s_max});
    }
    add_pair("ac_line", NodeType::bus, NodeType::bus, std::move(line_s),
             std::move(line_d), std::move(line_f), kBranchFeatureWidth);
    add_pair("transformer", NodeType::bus, NodeType::bus, std::move(xfmr_s),
             std::move(xfmr_d), std::move(xfmr_f), kBranchFeatureWidth);

    std::vector<ad::Index> gs, gd;
    for (const auto& gen : c.generators) {
        gs.push_back(gen.index);
        gd.push_back(gen.bus);
    }
    add_pair("gen_link", NodeType::gen, NodeType::bus, std::move(gs), std::move(gd), {}, 0);

    std::vector<ad::Index> ls, ld;
    for (const auto& l : c.loads) {
        ls.push_back(l.index);
        ld.push_back(l.bus);
    }
    add_pair("load_link", NodeType::load, NodeType::bus, std::move(ls), std::move(ld), {},
             0);

    std::vector<ad::Index> ss, sd;
    for (const auto& s : c.shunts) {
        ss.push_back(s.index);
        sd.push_back(s.bus);
    }
    add_pair("shunt_link", NodeType::shunt, NodeType::bus, std::move(ss), std::move(sd),
             {}, 0);

    return g;
}

HomoGraph to_homogeneous(const HeteroGraph& g) {
    HomoGraph h;
    h.n_bus = g.n_of(NodeType::bus);
    h.n_gen = g.n_of(NodeType::gen);
    h.n_load = g.n_of(NodeType::load);
    h.n_shunt = g.n_of(NodeType::shunt);
    h.n_nodes = h.n_bus + h.n_gen + h.n_load + h.n_shunt;

    // Stable node ordering: buses, generators, loads, shunts.
    std::array<int64_t, 4> base = {0, h.n_bus, h.n_bus + h.n_gen,
                                   h.n_bus + h.n_gen + h.n_load};

    h.features.assign(h.n_nodes * kHomoFeatureWidth, 0.0);
    for (int t = 0; t < kNodeTypeCount; ++t) {
        const int w = kNodeFeatureWidth[t];
        const int nt = g.n_by_type[t];
        for (int i = 0; i < nt; ++i) {
            double* row = h.features.data() + (base[t] + i) * kHomoFeatureWidth;
            row[t] = 1.0;
            for (int k = 0; k < w; ++k) row[kNodeTypeCount + k] = g.features[t][i * w + k];
        }
    }

    std::vector<ad::Index> src, dst;
    for (const auto& rel : g.relations) {
        const int64_t sb = base[static_cast<int>(rel.src)];
        const int64_t db = base[static_cast<int>(rel.dst)];
        const auto& s = *rel.src_idx;
        const auto& d = *rel.dst_idx;
        for (size_t e = 0; e < s.size(); ++e) {
            src.push_back(static_cast<ad::Index>(sb + s[e]));
            dst.push_back(static_cast<ad::Index>(db + d[e]));
            const double* ef =
                rel.feat_width > 0 ? rel.edge_features.data() + e * rel.feat_width : nullptr;
            for (int k = 0; k < kBranchFeatureWidth; ++k)
                h.edge_features.push_back(k < rel.feat_width ? ef[k] : 0.0);
        }
    }
    h.edge_src = ad::make_indices(std::move(src));
    h.edge_dst = ad::make_indices(std::move(dst));
    return h;
}

NodeDegrees node_degrees(const HomoGraph& g) {
    if (g.n_edges() == 0) throw ValidationError("node_degrees: graph has no edges");
    NodeDegrees d;
    d.degree.assign(g.n_nodes, 0);
    for (ad::Index s : *g.edge_src) ++d.degree[s];
    const int maxd = *std::max_element(d.degree.begin(), d.degree.end());
    d.normalized.resize(g.n_nodes);
    for (int64_t i = 0; i < g.n_nodes; ++i)
        d.normalized[i] = static_cast<double>(d.degree[i]) / maxd;
    return d;
}

}  // namespace lumina::grid
