#include <cstring>
#include <fstream>

#include "lumina/config_io.hpp"
#include "lumina/trainer.hpp"

namespace lumina::train {

using nlohmann::json;

nlohmann::json config_to_json(const TrainConfig& cfg) {
    return json{{"topologies", cfg.topologies},
                {"objective", obj::objective_name(cfg.objective)},
                {"architecture", gnn::arch_name(cfg.model.architecture)},
                {"layers", cfg.model.layers},
                {"hidden", cfg.model.hidden},
                {"heads", cfg.model.heads},
                {"leaky_slope", cfg.model.leaky_slope},
                {"epsilon_learnable", cfg.model.epsilon_learnable},
                {"steps", cfg.steps},
                {"batch_size", cfg.batch_size},
                {"lr", cfg.lr},
                {"seed", cfg.seed},
                {"precision", precision_name(cfg.precision)},
                {"eval_every", cfg.eval_every},
                {"threshold_tau", cfg.threshold_tau},
                {"rho", cfg.rho},
                {"update_period", cfg.update_period},
                {"rho_gamma", cfg.rho_gamma},
                {"clip_quadratic", cfg.clip_quadratic}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    const auto get = [&](const char* key, auto& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("topologies", cfg.topologies);
    if (j.contains("objective"))
        cfg.objective = obj::parse_objective(j.at("objective").get<std::string>());
    if (j.contains("architecture"))
        cfg.model.architecture = gnn::parse_arch(j.at("architecture").get<std::string>());
    get("layers", cfg.model.layers);
    get("hidden", cfg.model.hidden);
    get("heads", cfg.model.heads);
    get("leaky_slope", cfg.model.leaky_slope);
    get("epsilon_learnable", cfg.model.epsilon_learnable);
    get("steps", cfg.steps);
    get("batch_size", cfg.batch_size);
    get("lr", cfg.lr);
    get("seed", cfg.seed);
    if (j.contains("precision"))
        cfg.precision = parse_precision(j.at("precision").get<std::string>());
    get("eval_every", cfg.eval_every);
    get("threshold_tau", cfg.threshold_tau);
    get("rho", cfg.rho);
    get("update_period", cfg.update_period);
    get("rho_gamma", cfg.rho_gamma);
    get("clip_quadratic", cfg.clip_quadratic);
    return cfg;
}

namespace {

constexpr char kMagic[8] = {'L', 'U', 'M', 'C', 'K', 'P', 'T', '1'};

struct TensorRef {
    std::string name;
    int rank;
    int64_t d0, d1;
    std::string dtype;  // "f32" | "f64"
    const void* data;
    size_t bytes;
};

template <class T>
void collect_params(const gnn::ParamStore<T>& store, std::vector<TensorRef>& out) {
    const char* dt = std::is_same_v<T, float> ? "f32" : "f64";
    for (const auto& e : store.entries)
        out.push_back({e.name, e.tensor.shape.rank, e.tensor.shape.d0, e.tensor.shape.d1,
                       dt, e.tensor.data.data(), e.tensor.data.size() * sizeof(T)});
}

void collect_vec(const std::string& name, const std::vector<double>& v,
                 std::vector<TensorRef>& out) {
    out.push_back({name, 1, static_cast<int64_t>(v.size()), 1, "f64", v.data(),
                   v.size() * sizeof(double)});
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::vector<TensorRef> tensors;
    std::visit([&](const auto& p) { collect_params(p, tensors); }, ckpt.params);

    // Stats and duals ride along as reserved-name f64 tensors.
    std::vector<std::vector<double>> scratch;  // keep temporaries alive
    scratch.reserve(ckpt.stats.size() * 16 + ckpt.duals.size() * 4);
    const auto hold = [&](std::vector<double> v) -> const std::vector<double>& {
        scratch.push_back(std::move(v));
        return scratch.back();
    };
    for (const auto& [topo, st] : ckpt.stats) {
        const std::string base = "__norm__/" + topo + "/";
        for (int t = 0; t < grid::kNodeTypeCount; ++t) {
            collect_vec(base + grid::kNodeTypeNames[t] + "/mean",
                        st.node_features[t].mean, tensors);
            collect_vec(base + grid::kNodeTypeNames[t] + "/std",
                        st.node_features[t].std, tensors);
        }
        collect_vec(base + "bus_t/mean", st.bus_targets.mean, tensors);
        collect_vec(base + "bus_t/std", st.bus_targets.std, tensors);
        collect_vec(base + "gen_t/mean", st.gen_targets.mean, tensors);
        collect_vec(base + "gen_t/std", st.gen_targets.std, tensors);
    }
    for (const auto& [topo, d] : ckpt.duals) {
        const std::string base = "__dual__/" + topo + "/";
        collect_vec(base + "lambda", d.lambda, tensors);
        collect_vec(base + "mu", d.mu, tensors);
        collect_vec(base + "meta",
                    hold({d.rho, static_cast<double>(d.update_period)}), tensors);
    }

    json header;
    header["version"] = 1;
    header["dtype"] = ckpt.precision == Precision::single ? "f32" : "f64";
    header["step"] = ckpt.step;
    header["config"] = config_to_json(ckpt.config);
    json tlist = json::array();
    size_t offset = 0;
    for (const auto& t : tensors) {
        tlist.push_back({{"name", t.name},
                         {"rank", t.rank},
                         {"d0", t.d0},
                         {"d1", t.d1},
                         {"dtype", t.dtype},
                         {"offset", offset},
                         {"bytes", t.bytes}});
        offset += t.bytes;
    }
    header["tensors"] = std::move(tlist);
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof kMagic);
    const uint32_t hlen = static_cast<uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& t : tensors)
        out.write(static_cast<const char*>(t.data), static_cast<std::streamsize>(t.bytes));
    if (!out) throw ValidationError("checkpoint write failed: " + path.string());
}

namespace {

template <class T>
void load_params(const json& tlist, const std::vector<char>& payload,
                 gnn::ParamStore<T>& store) {
    const char* want = std::is_same_v<T, float> ? "f32" : "f64";
    for (const auto& t : tlist) {
        const std::string name = t.at("name").get<std::string>();
        if (name.rfind("__", 0) == 0) continue;
        if (t.at("dtype").get<std::string>() != want)
            throw ValidationError("checkpoint tensor " + name + " has dtype " +
                                  t.at("dtype").get<std::string>());
        ad::Shape s;
        s.rank = t.at("rank").get<int>();
        s.d0 = t.at("d0").get<int64_t>();
        s.d1 = t.at("d1").get<int64_t>();
        auto& tensor = store.add(name, s);
        const size_t off = t.at("offset").get<size_t>();
        const size_t bytes = t.at("bytes").get<size_t>();
        if (bytes != tensor.data.size() * sizeof(T) || off + bytes > payload.size())
            throw ValidationError("checkpoint tensor " + name + " has bad extent");
        std::memcpy(tensor.data.data(), payload.data() + off, bytes);
    }
}

std::vector<double> read_f64(const json& t, const std::vector<char>& payload) {
    const size_t off = t.at("offset").get<size_t>();
    const size_t bytes = t.at("bytes").get<size_t>();
    if (off + bytes > payload.size())
        throw ValidationError("checkpoint payload truncated");
    std::vector<double> v(bytes / sizeof(double));
    std::memcpy(v.data(), payload.data() + off, bytes);
    return v;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ValidationError("not a checkpoint file: " + path.string());
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    if (!in) throw ValidationError("checkpoint header truncated: " + path.string());
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw ValidationError("checkpoint header parse error: " + std::string(e.what()));
    }
    std::vector<char> payload(std::istreambuf_iterator<char>(in), {});

    Checkpoint ckpt;
    ckpt.precision =
        header.at("dtype").get<std::string>() == "f32" ? Precision::single
                                                       : Precision::double_;
    ckpt.step = header.at("step").get<int64_t>();
    ckpt.config = config_from_json(header.at("config"));
    const json& tlist = header.at("tensors");

    if (ckpt.precision == Precision::single) {
        gnn::ParamStore<float> store;
        load_params(tlist, payload, store);
        ckpt.params = std::move(store);
    } else {
        gnn::ParamStore<double> store;
        load_params(tlist, payload, store);
        ckpt.params = std::move(store);
    }

    for (const auto& t : tlist) {
        const std::string name = t.at("name").get<std::string>();
        if (name.rfind("__norm__/", 0) == 0) {
            const std::string rest = name.substr(9);
            const auto s1 = rest.find('/');
            const auto s2 = rest.find('/', s1 + 1);
            const std::string topo = rest.substr(0, s1);
            const std::string group = rest.substr(s1 + 1, s2 - s1 - 1);
            const std::string field = rest.substr(s2 + 1);
            auto& st = ckpt.stats[topo];
            data::ColumnStats* cs = nullptr;
            if (group == "bus_t")
                cs = &st.bus_targets;
            else if (group == "gen_t")
                cs = &st.gen_targets;
            else
                for (int tt = 0; tt < grid::kNodeTypeCount; ++tt)
                    if (group == grid::kNodeTypeNames[tt]) cs = &st.node_features[tt];
            if (!cs) throw ValidationError("checkpoint: unknown stats group " + group);
            (field == "mean" ? cs->mean : cs->std) = read_f64(t, payload);
        } else if (name.rfind("__dual__/", 0) == 0) {
            const std::string rest = name.substr(9);
            const auto s1 = rest.find('/');
            const std::string topo = rest.substr(0, s1);
            const std::string field = rest.substr(s1 + 1);
            auto& d = ckpt.duals[topo];
            if (field == "lambda")
                d.lambda = read_f64(t, payload);
            else if (field == "mu")
                d.mu = read_f64(t, payload);
            else if (field == "meta") {
                const auto meta = read_f64(t, payload);
                d.rho = meta.at(0);
                d.update_period = static_cast<int64_t>(meta.at(1));
            }
        }
    }
    return ckpt;
}

Checkpoint cast_checkpoint(const Checkpoint& ckpt, Precision target) {
    if (ckpt.precision == target) return ckpt;
    Checkpoint out;
    out.precision = target;
    out.step = ckpt.step;
    out.config = ckpt.config;
    out.config.precision = target;
    out.stats = ckpt.stats;
    out.duals = ckpt.duals;
    const auto cast_store = [&](const auto& src, auto& dst) {
        using DT = typename std::decay_t<decltype(dst)>::Entry;
        (void)sizeof(DT);
        for (const auto& e : src.entries) {
            auto& t = dst.add(e.name, e.tensor.shape);
            for (size_t i = 0; i < t.data.size(); ++i)
                t.data[i] = static_cast<std::decay_t<decltype(t.data[0])>>(
                    e.tensor.data[i]);
        }
    };
    if (target == Precision::single) {
        gnn::ParamStore<float> dst;
        cast_store(std::get<gnn::ParamStore<double>>(ckpt.params), dst);
        out.params = std::move(dst);
    } else {
        gnn::ParamStore<double> dst;
        cast_store(std::get<gnn::ParamStore<float>>(ckpt.params), dst);
        out.params = std::move(dst);
    }
    return out;
}

}  // namespace lumina::train
