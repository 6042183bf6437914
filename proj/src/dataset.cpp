#include "lumina/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "lumina/residuals.hpp"

namespace lumina::data {

using nlohmann::json;

SplitManifest make_splits(int64_t n, std::array<double, 3> ratios, uint64_t seed) {
    if (n < 3) throw ValidationError("make_splits: need at least 3 instances");
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0) throw ValidationError("make_splits: ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("make_splits: ratios must sum to 1");

    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto g = rng::make_stream(seed, 0x5b717);
    for (int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int64_t>(rng::uniform_index(g, i + 1));
        std::swap(order[i], order[j]);
    }

    // Largest-remainder apportionment keeps each size within one of exact.
    std::array<int64_t, 3> counts;
    std::array<double, 3> frac;
    int64_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = ratios[k] * static_cast<double>(n);
        counts[k] = static_cast<int64_t>(std::floor(exact));
        frac[k] = exact - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::array<int, 3> by_frac = {0, 1, 2};
    std::stable_sort(by_frac.begin(), by_frac.end(),
                     [&](int a, int b) { return frac[a] > frac[b]; });
    for (int k = 0; assigned < n; ++k, ++assigned) ++counts[by_frac[k % 3]];

    SplitManifest m;
    m.seed = seed;
    auto it = order.begin();
    m.train.assign(it, it + counts[0]);
    it += counts[0];
    m.validation.assign(it, it + counts[1]);
    it += counts[1];
    m.test.assign(it, it + counts[2]);
    return m;
}

ColumnStats column_stats(const std::vector<double>& rows, int64_t n_rows, int64_t width) {
    if (n_rows * width != static_cast<int64_t>(rows.size()))
        throw ValidationError("column_stats: size mismatch");
    ColumnStats s;
    s.mean.assign(width, 0.0);
    s.std.assign(width, 1.0);
    if (n_rows == 0) return s;
    for (int64_t r = 0; r < n_rows; ++r)
        for (int64_t c = 0; c < width; ++c) s.mean[c] += rows[r * width + c];
    for (auto& m : s.mean) m /= static_cast<double>(n_rows);
    std::vector<double> var(width, 0.0);
    for (int64_t r = 0; r < n_rows; ++r)
        for (int64_t c = 0; c < width; ++c) {
            const double d = rows[r * width + c] - s.mean[c];
            var[c] += d * d;
        }
    for (int64_t c = 0; c < width; ++c) {
        const double sd = std::sqrt(var[c] / static_cast<double>(n_rows));
        s.std[c] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

std::vector<double> normalize(const std::vector<double>& rows, int64_t width,
                              const ColumnStats& stats) {
    if (static_cast<int64_t>(stats.mean.size()) != width)
        throw ValidationError("normalize: stats width " +
                              std::to_string(stats.mean.size()) + " != data width " +
                              std::to_string(width));
    std::vector<double> out(rows.size());
    const int64_t n_rows = width > 0 ? static_cast<int64_t>(rows.size()) / width : 0;
    for (int64_t r = 0; r < n_rows; ++r)
        for (int64_t c = 0; c < width; ++c)
            out[r * width + c] = (rows[r * width + c] - stats.mean[c]) / stats.std[c];
    return out;
}

std::vector<double> denormalize(const std::vector<double>& rows, int64_t width,
                                const ColumnStats& stats) {
    if (static_cast<int64_t>(stats.mean.size()) != width)
        throw ValidationError("denormalize: stats width mismatch");
    std::vector<double> out(rows.size());
    const int64_t n_rows = width > 0 ? static_cast<int64_t>(rows.size()) / width : 0;
    for (int64_t r = 0; r < n_rows; ++r)
        for (int64_t c = 0; c < width; ++c)
            out[r * width + c] = rows[r * width + c] * stats.std[c] + stats.mean[c];
    return out;
}

std::vector<std::array<double, 2>> perturb_loads(const grid::GridCase& c, uint64_t seed,
                                                 double lo, double hi) {
    return pf::draw_load_profile(c, seed, lo, hi);
}

namespace {

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("JSON parse error in " + path.string() + ": " + e.what());
    }
    return j;
}

double num_at(const json& row, size_t k, const std::string& ctx) {
    if (!row.is_array() || row.size() <= k || !row[k].is_number())
        throw ValidationError(ctx + ": expected numeric field " + std::to_string(k));
    return row[k].get<double>();
}

std::vector<double> num_vector(const json& j, const std::string& ctx) {
    if (!j.is_array()) throw ValidationError(ctx + ": expected an array");
    std::vector<double> v;
    v.reserve(j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number())
            throw ValidationError(ctx + "[" + std::to_string(i) + "]: expected number");
        v.push_back(j[i].get<double>());
    }
    return v;
}

pf::OperatingPoint parse_solution(const json& sol, const std::string& ctx) {
    pf::OperatingPoint pt;
    pt.vm = num_vector(sol.at("vm"), ctx + ".vm");
    pt.va = num_vector(sol.at("va"), ctx + ".va");
    pt.pg = num_vector(sol.at("pg"), ctx + ".pg");
    pt.qg = num_vector(sol.at("qg"), ctx + ".qg");
    return pt;
}

json solution_to_json(const pf::OperatingPoint& pt) {
    return json{{"vm", pt.vm}, {"va", pt.va}, {"pg", pt.pg}, {"qg", pt.qg}};
}

}  // namespace

CaseFile load_case_file(const std::filesystem::path& path) {
    const json j = load_json(path);
    CaseFile out;
    grid::GridCase& c = out.grid_case;
    try {
        c.case_id = j.at("case_id").get<std::string>();
        c.base_mva = j.at("base_mva").get<double>();
        const json& nodes = j.at("grid").at("nodes");

        const json& buses = nodes.at("bus");
        for (size_t i = 0; i < buses.size(); ++i) {
            const std::string ctx = "bus " + std::to_string(i);
            grid::Bus b;
            b.index = static_cast<int>(i);
            b.vmin = num_at(buses[i], 0, ctx);
            b.vmax = num_at(buses[i], 1, ctx);
            b.is_reference = num_at(buses[i], 2, ctx) != 0.0;
            b.base_kv = num_at(buses[i], 3, ctx);
            c.buses.push_back(b);
        }
        if (nodes.contains("generator")) {
            const json& gens = nodes.at("generator");
            for (size_t i = 0; i < gens.size(); ++i) {
                const std::string ctx = "generator " + std::to_string(i);
                grid::Generator g;
                g.index = static_cast<int>(i);
                g.pmin = num_at(gens[i], 0, ctx);
                g.pmax = num_at(gens[i], 1, ctx);
                g.qmin = num_at(gens[i], 2, ctx);
                g.qmax = num_at(gens[i], 3, ctx);
                if (gens[i].size() > 4) g.vm_setpoint = num_at(gens[i], 4, ctx);
                c.generators.push_back(g);
            }
        }
        if (nodes.contains("load")) {
            const json& loads = nodes.at("load");
            for (size_t i = 0; i < loads.size(); ++i) {
                const std::string ctx = "load " + std::to_string(i);
                grid::Load l;
                l.index = static_cast<int>(i);
                l.pd = num_at(loads[i], 0, ctx);
                l.qd = num_at(loads[i], 1, ctx);
                c.loads.push_back(l);
            }
        }
        if (nodes.contains("shunt")) {
            const json& shunts = nodes.at("shunt");
            for (size_t i = 0; i < shunts.size(); ++i) {
                const std::string ctx = "shunt " + std::to_string(i);
                grid::Shunt s;
                s.index = static_cast<int>(i);
                s.gs = num_at(shunts[i], 0, ctx);
                s.bs = num_at(shunts[i], 1, ctx);
                c.shunts.push_back(s);
            }
        }

        const json& edges = j.at("grid").at("edges");
        const auto link_targets = [&](const char* name, auto assign) {
            if (!edges.contains(name)) return;
            const json& e = edges.at(name);
            const json& snd = e.at("senders");
            const json& rcv = e.at("receivers");
            if (snd.size() != rcv.size())
                throw ValidationError(std::string(name) +
                                      ": senders/receivers length mismatch");
            for (size_t i = 0; i < snd.size(); ++i)
                assign(i, snd[i].get<int>(), rcv[i].get<int>());
        };
        link_targets("generator_link", [&](size_t i, int s, int r) {
            if (s != static_cast<int>(i))
                throw ValidationError("generator_link " + std::to_string(i) +
                                      ": sender must equal generator index");
            if (i < c.generators.size()) c.generators[i].bus = r;
        });
        link_targets("load_link", [&](size_t i, int s, int r) {
            if (s != static_cast<int>(i))
                throw ValidationError("load_link " + std::to_string(i) +
                                      ": sender must equal load index");
            if (i < c.loads.size()) c.loads[i].bus = r;
        });
        link_targets("shunt_link", [&](size_t i, int s, int r) {
            if (s != static_cast<int>(i))
                throw ValidationError("shunt_link " + std::to_string(i) +
                                      ": sender must equal shunt index");
            if (i < c.shunts.size()) c.shunts[i].bus = r;
        });

        const auto parse_branches = [&](const char* name, bool is_xfmr) {
            if (!edges.contains(name)) return;
            const json& e = edges.at(name);
            const json& snd = e.at("senders");
            const json& rcv = e.at("receivers");
            const json& feats = e.at("features");
            if (snd.size() != rcv.size() || snd.size() != feats.size())
                throw ValidationError(std::string(name) + ": table length mismatch");
            for (size_t i = 0; i < snd.size(); ++i) {
                const std::string ctx = std::string(name) + " " + std::to_string(i);
                grid::Branch b;
                b.index = static_cast<int>(c.branches.size());
                b.from_bus = snd[i].get<int>();
                b.to_bus = rcv[i].get<int>();
                b.r = num_at(feats[i], 0, ctx);
                b.x = num_at(feats[i], 1, ctx);
                b.b_charging = num_at(feats[i], 2, ctx);
                b.tap = num_at(feats[i], 3, ctx);
                b.shift = num_at(feats[i], 4, ctx);
                b.s_max = num_at(feats[i], 5, ctx);
                b.is_transformer = is_xfmr;
                c.branches.push_back(b);
            }
        };
        parse_branches("ac_line", false);
        parse_branches("transformer", true);

        if (j.contains("solution")) {
            out.solution = parse_solution(j.at("solution"), "solution");
            out.has_solution = true;
        }
    } catch (const json::exception& e) {
        throw ValidationError("case file " + path.string() + ": " + e.what());
    }
    c.validate();
    if (out.has_solution) out.solution.check_sizes(c);
    return out;
}

grid::GridCase load_case(const std::filesystem::path& path) {
    return load_case_file(path).grid_case;
}

TopologyDataset generate_dataset(const grid::GridCase& c, const GenerationParams& p) {
    c.validate();
    if (p.count < 3) throw ValidationError("generate_dataset: count must be >= 3");
    TopologyDataset d;
    d.grid_case = c;
    d.params = p;
    uint64_t draw = 0;
    const uint64_t max_draws = static_cast<uint64_t>(p.count) * 1000 + 1000;
    while (static_cast<int64_t>(d.instances.size()) < p.count) {
        if (draw >= max_draws)
            throw NumericError("generate_dataset: acceptance rate too low on case " +
                               c.case_id + " after " + std::to_string(draw) + " draws");
        const uint64_t inst_seed = p.seed * 0x100000001ull + draw;
        ++draw;
        auto outcome =
            pf::generate_labeled_instance(c, inst_seed, p.perturb_lo, p.perturb_hi,
                                          p.policy);
        if (outcome.instance) {
            d.instances.push_back(std::move(*outcome.instance));
        } else {
            ++d.rejections[outcome.rejection_reason];
        }
    }
    d.splits = make_splits(p.count, p.split_ratios, p.seed);
    d.stats = compute_norm_stats(d);
    return d;
}

NormStats compute_norm_stats(const TopologyDataset& d) {
    NormStats s;
    const grid::HeteroGraph g = grid::build_hetero_graph(d.grid_case);

    // Static node features: stats over the case rows themselves.
    for (int t = 0; t < grid::kNodeTypeCount; ++t) {
        if (t == static_cast<int>(grid::NodeType::load)) continue;
        s.node_features[t] = column_stats(g.features[t], g.n_by_type[t],
                                          grid::kNodeFeatureWidth[t]);
    }

    // Load features and targets vary per instance: train split only.
    std::vector<double> load_rows, bus_rows, gen_rows;
    for (int64_t idx : d.splits.train) {
        const auto& inst = d.instances[idx];
        for (const auto& l : inst.load_profile) {
            load_rows.push_back(l[0]);
            load_rows.push_back(l[1]);
        }
        for (size_t b = 0; b < inst.label.vm.size(); ++b) {
            bus_rows.push_back(inst.label.vm[b]);
            bus_rows.push_back(inst.label.va[b]);
        }
        for (size_t gi = 0; gi < inst.label.pg.size(); ++gi) {
            gen_rows.push_back(inst.label.pg[gi]);
            gen_rows.push_back(inst.label.qg[gi]);
        }
    }
    s.node_features[static_cast<int>(grid::NodeType::load)] =
        column_stats(load_rows, static_cast<int64_t>(load_rows.size() / 2), 2);
    s.bus_targets = column_stats(bus_rows, static_cast<int64_t>(bus_rows.size() / 2), 2);
    s.gen_targets = column_stats(gen_rows, static_cast<int64_t>(gen_rows.size() / 2), 2);
    return s;
}

std::vector<double> normalized_targets(const pf::OperatingPoint& pt,
                                       const NormStats& stats) {
    std::vector<double> bus_rows, gen_rows;
    bus_rows.reserve(pt.vm.size() * 2);
    for (size_t b = 0; b < pt.vm.size(); ++b) {
        bus_rows.push_back(pt.vm[b]);
        bus_rows.push_back(pt.va[b]);
    }
    for (size_t g = 0; g < pt.pg.size(); ++g) {
        gen_rows.push_back(pt.pg[g]);
        gen_rows.push_back(pt.qg[g]);
    }
    std::vector<double> out = normalize(bus_rows, 2, stats.bus_targets);
    const std::vector<double> gen_norm = normalize(gen_rows, 2, stats.gen_targets);
    out.insert(out.end(), gen_norm.begin(), gen_norm.end());
    return out;
}

namespace {

json case_to_json(const grid::GridCase& c) {
    json nodes;
    {
        json rows = json::array();
        for (const auto& b : c.buses)
            rows.push_back({b.vmin, b.vmax, b.is_reference ? 1.0 : 0.0, b.base_kv});
        nodes["bus"] = std::move(rows);
    }
    {
        json rows = json::array();
        for (const auto& g : c.generators)
            rows.push_back({g.pmin, g.pmax, g.qmin, g.qmax, g.vm_setpoint});
        nodes["generator"] = std::move(rows);
    }
    {
        json rows = json::array();
        for (const auto& l : c.loads) rows.push_back({l.pd, l.qd});
        nodes["load"] = std::move(rows);
    }
    {
        json rows = json::array();
        for (const auto& s : c.shunts) rows.push_back({s.gs, s.bs});
        nodes["shunt"] = std::move(rows);
    }

    json edges;
    const auto link = [&](const char* name, auto&& bus_of, size_t count) {
        json snd = json::array(), rcv = json::array();
        for (size_t i = 0; i < count; ++i) {
            snd.push_back(i);
            rcv.push_back(bus_of(i));
        }
        edges[name] = {{"senders", std::move(snd)}, {"receivers", std::move(rcv)}};
    };
    link("generator_link", [&](size_t i) { return c.generators[i].bus; },
         c.generators.size());
    link("load_link", [&](size_t i) { return c.loads[i].bus; }, c.loads.size());
    link("shunt_link", [&](size_t i) { return c.shunts[i].bus; }, c.shunts.size());
    json line_snd = json::array(), line_rcv = json::array(), line_f = json::array();
    json x_snd = json::array(), x_rcv = json::array(), x_f = json::array();
    for (const auto& b : c.branches) {
        auto& snd = b.is_transformer ? x_snd : line_snd;
        auto& rcv = b.is_transformer ? x_rcv : line_rcv;
        auto& f = b.is_transformer ? x_f : line_f;
        snd.push_back(b.from_bus);
        rcv.push_back(b.to_bus);
        f.push_back({b.r, b.x, b.b_charging, b.tap, b.shift, b.s_max});
    }
    edges["ac_line"] = {{"senders", std::move(line_snd)},
                        {"receivers", std::move(line_rcv)},
                        {"features", std::move(line_f)}};
    edges["transformer"] = {{"senders", std::move(x_snd)},
                            {"receivers", std::move(x_rcv)},
                            {"features", std::move(x_f)}};

    return json{{"case_id", c.case_id},
                {"base_mva", c.base_mva},
                {"grid", {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}}}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path.string());
    out << text;
}

std::string instance_filename(int64_t i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "instance_%06lld.json", static_cast<long long>(i));
    return buf;
}

}  // namespace

void save_dataset(const TopologyDataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "instances");
    write_text(dir / "case.json", case_to_json(d.grid_case).dump(2) + "\n");

    json manifest{{"schema_version", 1},
                  {"case_id", d.grid_case.case_id},
                  {"seed", d.params.seed},
                  {"count", d.params.count},
                  {"perturb_lo", d.params.perturb_lo},
                  {"perturb_hi", d.params.perturb_hi},
                  {"limit_policy",
                   d.params.policy == pf::LimitPolicy::strict ? "strict" : "relaxed"},
                  {"split_ratios", d.params.split_ratios},
                  {"splits",
                   {{"train", d.splits.train},
                    {"validation", d.splits.validation},
                    {"test", d.splits.test}}},
                  {"rejections", d.rejections}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    for (size_t i = 0; i < d.instances.size(); ++i) {
        const auto& inst = d.instances[i];
        json profile = json::array();
        for (const auto& l : inst.load_profile) profile.push_back({l[0], l[1]});
        json j{{"case_id", inst.case_id},
               {"load_profile", std::move(profile)},
               {"total_load", inst.total_load},
               {"solution", solution_to_json(inst.label)}};
        write_text(dir / "instances" / instance_filename(static_cast<int64_t>(i)),
                   j.dump(2) + "\n");
    }
}

TopologyDataset load_dataset(const std::filesystem::path& dir) {
    TopologyDataset d;
    d.grid_case = load_case(dir / "case.json");

    const json manifest = load_json(dir / "manifest.json");
    try {
        d.params.seed = manifest.at("seed").get<uint64_t>();
        d.params.count = manifest.at("count").get<int64_t>();
        d.params.perturb_lo = manifest.at("perturb_lo").get<double>();
        d.params.perturb_hi = manifest.at("perturb_hi").get<double>();
        d.params.policy = manifest.at("limit_policy").get<std::string>() == "relaxed"
                              ? pf::LimitPolicy::relaxed
                              : pf::LimitPolicy::strict;
        d.params.split_ratios = manifest.at("split_ratios").get<std::array<double, 3>>();
        d.splits.seed = d.params.seed;
        d.splits.train = manifest.at("splits").at("train").get<std::vector<int64_t>>();
        d.splits.validation =
            manifest.at("splits").at("validation").get<std::vector<int64_t>>();
        d.splits.test = manifest.at("splits").at("test").get<std::vector<int64_t>>();
        if (manifest.contains("rejections"))
            d.rejections =
                manifest.at("rejections").get<std::map<std::string, int64_t>>();
    } catch (const json::exception& e) {
        throw ValidationError("manifest " + (dir / "manifest.json").string() + ": " +
                              e.what());
    }

    for (int64_t i = 0; i < d.params.count; ++i) {
        const auto path = dir / "instances" / instance_filename(i);
        const json j = load_json(path);
        LabeledInstance inst;
        try {
            inst.case_id = j.at("case_id").get<std::string>();
            for (const auto& row : j.at("load_profile"))
                inst.load_profile.push_back({row.at(0).get<double>(),
                                             row.at(1).get<double>()});
            inst.total_load = j.at("total_load").get<double>();
            inst.label = parse_solution(j.at("solution"), "solution");
        } catch (const json::exception& e) {
            throw ValidationError("instance " + path.string() + ": " + e.what());
        }
        if (inst.load_profile.size() != d.grid_case.loads.size())
            throw ValidationError("instance " + path.string() +
                                  ": load profile length mismatch");
        inst.label.check_sizes(d.grid_case);
        d.instances.push_back(std::move(inst));
    }
    d.stats = compute_norm_stats(d);
    return d;
}

}  // namespace lumina::data
