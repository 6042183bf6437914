#include "lumina/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "lumina/kernels.hpp"
#include "lumina/residuals_ad.hpp"

namespace lumina::train {

Precision parse_precision(const std::string& s) {
    if (s == "single" || s == "float") return Precision::single;
    if (s == "double") return Precision::double_;
    throw ValidationError("unknown precision '" + s + "' (expected single|double)");
}

std::string precision_name(Precision p) {
    return p == Precision::single ? "single" : "double";
}

void TrainConfig::validate() const {
    if (steps <= 0) throw ValidationError("train config: steps must be > 0");
    if (lr <= 0.0) throw ValidationError("train config: lr must be > 0");
    if (batch_size <= 0) throw ValidationError("train config: batch_size must be > 0");
    if (eval_every <= 0) throw ValidationError("train config: eval_every must be > 0");
    if (update_period <= 0)
        throw ValidationError("train config: update_period must be > 0");
    if (rho <= 0.0) throw ValidationError("train config: rho must be > 0");
    if (topologies.empty())
        throw ValidationError("train config: at least one topology required");
    model.validate();
}

namespace {

struct TopologyContext {
    const data::TopologyDataset* ds = nullptr;
    grid::HeteroGraph hetero;
    grid::HomoGraph homo;
    gnn::HomoWorkspace homo_ws;
    gnn::HeteroWorkspace hetero_ws;
    res::ResidualPlan plan;
    grid::SparseComplexMatrix y;
    int ref_bus = 0;

    static TopologyContext build(const data::TopologyDataset& d) {
        TopologyContext c;
        c.ds = &d;
        c.hetero = grid::build_hetero_graph(d.grid_case);
        c.homo = grid::to_homogeneous(c.hetero);
        c.homo_ws = gnn::HomoWorkspace::build(c.homo);
        c.hetero_ws = gnn::HeteroWorkspace::build(c.hetero);
        c.plan = res::ResidualPlan::from_case(d.grid_case);
        c.y = grid::build_admittance(d.grid_case);
        c.ref_bus = d.grid_case.reference_bus();
        return c;
    }
};

template <class T>
pf::OperatingPoint extract_point(const ad::Tape<T>& tape,
                                 const gnn::ForwardResult<T>& fwd) {
    const auto to_dvec = [&](typename ad::Tape<T>::Id id) {
        const auto v = tape.value(id);
        return std::vector<double>(v.begin(), v.end());
    };
    pf::OperatingPoint pt;
    pt.vm = to_dvec(fwd.vm);
    pt.va = to_dvec(fwd.va);
    pt.pg = to_dvec(fwd.pg);
    pt.qg = to_dvec(fwd.qg);
    return pt;
}

template <class T>
struct LossIds {
    typename ad::Tape<T>::Id loss = -1;
    typename ad::Tape<T>::Id r = -1;
    typename ad::Tape<T>::Id h = -1;
};

template <class T>
LossIds<T> build_loss(ad::Tape<T>& tape, const TrainConfig& cfg,
                      const TopologyContext& ctx, const gnn::ForwardResult<T>& fwd,
                      const data::LabeledInstance& inst, const data::NormStats& stats,
                      const obj::DualState* duals) {
    const std::vector<double> label = data::normalized_targets(inst.label, stats);
    const std::vector<T> label_cast(label.begin(), label.end());
    const auto label_id =
        tape.constant(ad::Shape::vec(static_cast<int64_t>(label_cast.size())),
                      std::span<const T>(label_cast));
    LossIds<T> out;
    if (cfg.objective == obj::Objective::mse) {
        out.loss = obj::mse_loss(tape, fwd.pred_norm, label_id);
        return out;
    }
    std::vector<double> pd_bus, qd_bus;
    ctx.plan.bus_loads(inst.load_profile, pd_bus, qd_bus);
    const res::TracedResiduals<T> rh = res::differentiable_residuals(
        tape, ctx.plan, fwd.vm, fwd.va, fwd.pg, fwd.qg, pd_bus, qd_bus);
    out.r = rh.r;
    out.h = rh.h;
    if (cfg.objective == obj::Objective::al)
        out.loss = obj::al_loss(tape, fwd.pred_norm, label_id, rh, *duals,
                                cfg.clip_quadratic);
    else
        out.loss = obj::vbl_loss(tape, fwd.pred_norm, label_id, rh, *duals);
    return out;
}

/// Mean metrics over the indexed instances; optionally emits predictions and
/// per-layer pooled activations.
template <class T>
EvalMetrics eval_impl(const gnn::ModelConfig& mcfg, const gnn::ParamStore<T>& params,
                      const data::NormStats& stats, const TopologyContext& ctx,
                      const std::vector<int64_t>& indices,
                      std::vector<pf::OperatingPoint>* out_points,
                      std::vector<std::vector<std::vector<double>>>* out_acts) {
    EvalMetrics m;
    m.n_instances = static_cast<int64_t>(indices.size());
    if (indices.empty()) return m;
    gnn::ModelForwardOptions opts;
    opts.collect_activations = out_acts != nullptr;
    double sol_err_sum = 0.0;
    std::array<double, 7> fam_sum = {};
    double total_sum = 0.0;
    for (int64_t idx : indices) {
        const auto& inst = ctx.ds->instances[idx];
        ad::Tape<T> tape;
        const auto bound = gnn::BoundParams<T>::bind(tape, params);
        const auto fwd = gnn::model_forward(tape, mcfg, bound, ctx.hetero, ctx.homo,
                                            ctx.homo_ws, ctx.hetero_ws,
                                            inst.load_profile, stats, ctx.ref_bus, opts);
        // Accuracy in normalized target space.
        const std::vector<double> label = data::normalized_targets(inst.label, stats);
        const auto pred = tape.value(fwd.pred_norm);
        double se = 0.0;
        for (size_t i = 0; i < label.size(); ++i) {
            const double d = static_cast<double>(pred[i]) - label[i];
            se += d * d;
        }
        sol_err_sum += se / static_cast<double>(label.size());

        // Feasibility through the pure-numeric residual engine.
        const pf::OperatingPoint pt = extract_point(tape, fwd);
        res::ResidualReport rep;
        const res::EqualityResult eq =
            res::equality_residuals(ctx.ds->grid_case, ctx.y, inst.load_profile, pt);
        const res::InequalityResult iq =
            res::inequality_violations(ctx.ds->grid_case, pt);
        rep.p_balance = eq.p_balance;
        rep.q_balance = eq.q_balance;
        rep.ref_angle = eq.ref_angle;
        rep.vm_viol = iq.vm_viol;
        rep.pg_viol = iq.pg_viol;
        rep.qg_viol = iq.qg_viol;
        rep.line_viol = iq.line_viol;
        const res::ViolationSummary vs =
            res::violation_summary(rep, ctx.ds->grid_case.n_bus());
        const auto fams = vs.families();
        for (int f = 0; f < 7; ++f) fam_sum[f] += fams[f];
        total_sum += vs.total;

        if (out_points) out_points->push_back(pt);
        if (out_acts) out_acts->push_back(fwd.pooled);
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    m.opf_sol_err = sol_err_sum * inv;
    m.viol = total_sum * inv;
    m.viol_mean.p = fam_sum[0] * inv;
    m.viol_mean.q = fam_sum[1] * inv;
    m.viol_mean.ref = fam_sum[2] * inv;
    m.viol_mean.vm = fam_sum[3] * inv;
    m.viol_mean.pg = fam_sum[4] * inv;
    m.viol_mean.qg = fam_sum[5] * inv;
    m.viol_mean.line = fam_sum[6] * inv;
    m.viol_mean.total = total_sum * inv;
    return m;
}

const std::vector<int64_t>& split_indices(const data::TopologyDataset& ds, Split s) {
    switch (s) {
        case Split::train: return ds.splits.train;
        case Split::validation: return ds.splits.validation;
        case Split::test: return ds.splits.test;
    }
    throw ValidationError("bad split");
}

template <class T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    int64_t t = 0;

    explicit AdamState(const gnn::ParamStore<T>& params) {
        for (const auto& e : params.entries) {
            m.emplace_back(e.tensor.data.size(), T(0));
            v.emplace_back(e.tensor.data.size(), T(0));
        }
    }

    void step(gnn::ParamStore<T>& params, const std::vector<std::vector<T>>& grads,
              T lr) {
        constexpr T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
        ++t;
        const T bc1 = T(1) - std::pow(b1, static_cast<T>(t));
        const T bc2 = T(1) - std::pow(b2, static_cast<T>(t));
        for (size_t e = 0; e < params.entries.size(); ++e) {
            auto& p = params.entries[e].tensor.data;
            for (size_t i = 0; i < p.size(); ++i) {
                const T g = grads[e][i];
                m[e][i] = b1 * m[e][i] + (T(1) - b1) * g;
                v[e][i] = b2 * v[e][i] + (T(1) - b2) * g * g;
                const T mhat = m[e][i] / bc1;
                const T vhat = v[e][i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

struct ResidualWindow {
    std::vector<double> r_sum, h_sum;
    int64_t count = 0;

    void init(int64_t eq, int64_t ineq) {
        r_sum.assign(eq, 0.0);
        h_sum.assign(ineq, 0.0);
        count = 0;
    }
};

template <class T>
class Engine {
public:
    Engine(TrainConfig cfg, std::vector<const data::TopologyDataset*> datasets,
           const Checkpoint* warm)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (datasets.empty()) throw ValidationError("train: no datasets");
        for (const auto* d : datasets) contexts_.push_back(TopologyContext::build(*d));

        if (warm) {
            params_ = std::get<gnn::ParamStore<T>>(warm->params);
            stats_ = warm->stats;
            // Warm-start compatibility: same architecture and tensor shapes.
            const auto expected = gnn::init_params<T>(cfg_.model, 0);
            if (expected.entries.size() != params_.entries.size())
                throw ValidationError("finetune: checkpoint parameter set does not "
                                      "match the model configuration");
            for (size_t i = 0; i < expected.entries.size(); ++i) {
                const auto& a = expected.entries[i];
                const auto& b = params_.entries[i];
                if (a.name != b.name || !(a.tensor.shape == b.tensor.shape))
                    throw ValidationError(
                        "finetune: incompatible parameter '" + b.name + "' (expected " +
                        a.name + " " + a.tensor.shape.str() + ", got " +
                        b.tensor.shape.str() + ")");
            }
        } else {
            params_ = gnn::init_params<T>(cfg_.model, cfg_.seed);
        }
        for (const auto& ctx : contexts_) {
            const auto& id = ctx.ds->case_id();
            if (!stats_.count(id)) stats_[id] = ctx.ds->stats;
            if (cfg_.objective != obj::Objective::mse)
                duals_[id] =
                    obj::DualState::zeros(ctx.plan.layout, cfg_.rho, cfg_.update_period);
        }
    }

    TrainResult run() {
        AdamState<T> adam(params_);
        std::vector<std::vector<T>> grads;
        for (const auto& e : params_.entries)
            grads.emplace_back(e.tensor.data.size(), T(0));

        std::vector<ResidualWindow> windows(contexts_.size());
        for (size_t i = 0; i < contexts_.size(); ++i)
            windows[i].init(contexts_[i].plan.layout.eq_count(),
                            contexts_[i].plan.layout.ineq_count());

        auto rng = rng::make_stream(cfg_.seed, 0x57e9);
        const auto t0 = std::chrono::steady_clock::now();
        const auto wall_ms = [&]() {
            return std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                .count();
        };

        TrainLog log;
        double loss_sum = 0.0;
        int64_t loss_count = 0;
        double last_eval_wall = 0.0;
        int64_t last_eval_step = 0;

        const auto emit_eval = [&](int64_t step) {
            const double now = wall_ms();
            const double loss =
                loss_count > 0 ? loss_sum / static_cast<double>(loss_count)
                               : std::numeric_limits<double>::quiet_NaN();
            const double avg =
                step > last_eval_step
                    ? (now - last_eval_wall) / static_cast<double>(step - last_eval_step)
                    : 0.0;
            for (const auto& ctx : contexts_) {
                const auto m =
                    eval_impl(cfg_.model, params_, stats_.at(ctx.ds->case_id()), ctx,
                              ctx.ds->splits.validation, nullptr, nullptr);
                EvalRow row;
                row.step = step;
                row.topology = ctx.ds->case_id();
                row.loss = loss;
                row.opf_sol_err = m.opf_sol_err;
                row.viol = m.viol_mean;
                row.wall_ms = now;
                row.step_ms_avg = avg;
                log.rows.push_back(std::move(row));
            }
            loss_sum = 0.0;
            loss_count = 0;
            last_eval_wall = now;
            last_eval_step = step;
        };

        emit_eval(0);
        for (int64_t step = 0; step < cfg_.steps; ++step) {
            const size_t ti =
                contexts_.size() == 1
                    ? 0
                    : static_cast<size_t>(rng::uniform_index(rng, contexts_.size()));
            const auto& ctx = contexts_[ti];
            const auto& train_idx = ctx.ds->splits.train;
            if (train_idx.empty())
                throw ValidationError("train: topology " + ctx.ds->case_id() +
                                      " has an empty train split");
            const data::NormStats& stats = stats_.at(ctx.ds->case_id());
            obj::DualState* duals = nullptr;
            if (cfg_.objective != obj::Objective::mse)
                duals = &duals_.at(ctx.ds->case_id());

            for (auto& g : grads) std::fill(g.begin(), g.end(), T(0));
            double batch_loss = 0.0;
            const T inv_b = T(1) / static_cast<T>(cfg_.batch_size);
            for (int b = 0; b < cfg_.batch_size; ++b) {
                const int64_t idx = train_idx[rng::uniform_index(rng, train_idx.size())];
                const auto& inst = ctx.ds->instances[idx];
                ad::Tape<T> tape;
                const auto bound = gnn::BoundParams<T>::bind(tape, params_);
                const auto fwd = gnn::model_forward(tape, cfg_.model, bound, ctx.hetero,
                                                    ctx.homo, ctx.homo_ws, ctx.hetero_ws,
                                                    inst.load_profile, stats,
                                                    ctx.ref_bus);
                const LossIds<T> ids =
                    build_loss(tape, cfg_, ctx, fwd, inst, stats, duals);
                batch_loss += static_cast<double>(tape.value(ids.loss)[0]);
                tape.backward(ids.loss);
                for (size_t e = 0; e < grads.size(); ++e)
                    kernels::axpy(grads[e].data(), tape.grad(bound.ids[e]).data(),
                                  inv_b, grads[e].size());
                if (duals) {
                    auto& w = windows[ti];
                    const auto rv = tape.value(ids.r);
                    const auto hv = tape.value(ids.h);
                    const double invb = 1.0 / static_cast<double>(cfg_.batch_size);
                    for (size_t i = 0; i < w.r_sum.size(); ++i)
                        w.r_sum[i] += static_cast<double>(rv[i]) * invb;
                    for (size_t i = 0; i < w.h_sum.size(); ++i)
                        w.h_sum[i] += std::max(static_cast<double>(hv[i]), 0.0) * invb;
                }
            }
            batch_loss /= static_cast<double>(cfg_.batch_size);
            if (!std::isfinite(batch_loss)) {
                std::string snapshot;
                if (!cfg_.snapshot_path.empty()) {
                    save_checkpoint(make_checkpoint(step), cfg_.snapshot_path);
                    snapshot = cfg_.snapshot_path;
                }
                throw TrainAbort("non-finite loss at step " + std::to_string(step + 1),
                                 snapshot);
            }
            loss_sum += batch_loss;
            ++loss_count;
            if (duals) ++windows[ti].count;

            adam.step(params_, grads, static_cast<T>(cfg_.lr));

            if (cfg_.objective != obj::Objective::mse &&
                (step + 1) % cfg_.update_period == 0) {
                for (size_t i = 0; i < contexts_.size(); ++i) {
                    auto& w = windows[i];
                    if (w.count == 0) continue;
                    auto& d = duals_.at(contexts_[i].ds->case_id());
                    std::vector<double> r_mean(w.r_sum), h_mean(w.h_sum);
                    const double invc = 1.0 / static_cast<double>(w.count);
                    for (auto& v : r_mean) v *= invc;
                    for (auto& v : h_mean) v *= invc;
                    if (cfg_.objective == obj::Objective::al)
                        obj::dual_update_al(d, r_mean, h_mean);
                    else
                        obj::dual_update_vbl(d, r_mean, h_mean);
                    d.rho *= cfg_.rho_gamma;
                    w.init(w.r_sum.size(), w.h_sum.size());
                }
            }

            if ((step + 1) % cfg_.eval_every == 0 || step + 1 == cfg_.steps)
                emit_eval(step + 1);
        }

        TrainResult out;
        out.checkpoint = make_checkpoint(cfg_.steps);
        out.log = std::move(log);
        return out;
    }

private:
    Checkpoint make_checkpoint(int64_t step) const {
        Checkpoint c;
        c.precision = std::is_same_v<T, float> ? Precision::single : Precision::double_;
        c.step = step;
        c.config = cfg_;
        c.params = params_;
        c.stats = stats_;
        c.duals = duals_;
        return c;
    }

    TrainConfig cfg_;
    std::vector<TopologyContext> contexts_;
    gnn::ParamStore<T> params_;
    std::map<std::string, data::NormStats> stats_;
    std::map<std::string, obj::DualState> duals_;
};

}  // namespace

TrainResult train(const TrainConfig& cfg,
                  const std::vector<const data::TopologyDataset*>& datasets) {
    if (cfg.precision == Precision::single)
        return Engine<float>(cfg, datasets, nullptr).run();
    return Engine<double>(cfg, datasets, nullptr).run();
}

TrainResult finetune(const Checkpoint& ckpt, const data::TopologyDataset& target,
                     const TrainConfig& cfg) {
    TrainConfig fcfg = cfg;
    fcfg.topologies = {target.case_id()};
    fcfg.model = ckpt.config.model;  // architecture must match the warm start
    const Checkpoint warm = cast_checkpoint(ckpt, fcfg.precision);
    // Fresh duals for the fine-tuning target.
    Checkpoint warm2 = warm;
    warm2.duals.erase(target.case_id());
    if (fcfg.precision == Precision::single)
        return Engine<float>(fcfg, {&target}, &warm2).run();
    return Engine<double>(fcfg, {&target}, &warm2).run();
}

EvalMetrics evaluate(const Checkpoint& ckpt, const data::TopologyDataset& ds,
                     Split split) {
    return evaluate_with_predictions(ckpt, ds, split, nullptr);
}

EvalMetrics evaluate_with_predictions(const Checkpoint& ckpt,
                                      const data::TopologyDataset& ds, Split split,
                                      std::vector<pf::OperatingPoint>* out_points) {
    const TopologyContext ctx = TopologyContext::build(ds);
    const bool zero_shot = !ckpt.has_topology(ds.case_id());
    const data::NormStats& stats =
        zero_shot ? ds.stats : ckpt.stats.at(ds.case_id());
    EvalMetrics m = std::visit(
        [&](const auto& params) {
            return eval_impl(ckpt.config.model, params, stats, ctx,
                             split_indices(ds, split), out_points, nullptr);
        },
        ckpt.params);
    m.zero_shot = zero_shot;
    return m;
}

std::vector<std::vector<std::vector<double>>> collect_activations(
    const Checkpoint& ckpt, const data::TopologyDataset& ds, Split split) {
    const TopologyContext ctx = TopologyContext::build(ds);
    const bool zero_shot = !ckpt.has_topology(ds.case_id());
    const data::NormStats& stats =
        zero_shot ? ds.stats : ckpt.stats.at(ds.case_id());
    std::vector<std::vector<std::vector<double>>> per_instance;
    std::visit(
        [&](const auto& params) {
            eval_impl(ckpt.config.model, params, stats, ctx, split_indices(ds, split),
                      nullptr, &per_instance);
        },
        ckpt.params);
    // Transpose to [layer][instance][hidden].
    std::vector<std::vector<std::vector<double>>> by_layer;
    if (per_instance.empty()) return by_layer;
    by_layer.resize(per_instance.front().size());
    for (auto& inst_layers : per_instance)
        for (size_t l = 0; l < inst_layers.size(); ++l)
            by_layer[l].push_back(std::move(inst_layers[l]));
    return by_layer;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string TrainLog::to_csv_string() const {
    std::string s =
        "step,topology,loss,opf_sol_err,viol_total,viol_p,viol_q,viol_ref,viol_vm,"
        "viol_pg,viol_qg,viol_line,wall_ms,step_ms_avg\r\n";
    for (const auto& r : rows) {
        s += std::to_string(r.step) + "," + r.topology + "," + fmt_double(r.loss) + "," +
             fmt_double(r.opf_sol_err) + "," + fmt_double(r.viol.total) + "," +
             fmt_double(r.viol.p) + "," + fmt_double(r.viol.q) + "," +
             fmt_double(r.viol.ref) + "," + fmt_double(r.viol.vm) + "," +
             fmt_double(r.viol.pg) + "," + fmt_double(r.viol.qg) + "," +
             fmt_double(r.viol.line) + "," + fmt_double(r.wall_ms) + "," +
             fmt_double(r.step_ms_avg) + "\r\n";
    }
    return s;
}

void TrainLog::to_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << to_csv_string();
}

bool TrainLog::same_metrics(const TrainLog& other) const {
    if (rows.size() != other.rows.size()) return false;
    const auto same = [](double a, double b) {
        return std::memcmp(&a, &b, sizeof a) == 0;
    };
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& a = rows[i];
        const auto& b = other.rows[i];
        if (a.step != b.step || a.topology != b.topology) return false;
        if (!same(a.loss, b.loss) || !same(a.opf_sol_err, b.opf_sol_err)) return false;
        const auto fa = a.viol.families(), fb = b.viol.families();
        for (int f = 0; f < 7; ++f)
            if (!same(fa[f], fb[f])) return false;
        if (!same(a.viol.total, b.viol.total)) return false;
    }
    return true;
}

std::optional<int64_t> steps_to_threshold(const TrainLog& log, double tau,
                                          const std::string& topology) {
    if (log.rows.empty()) throw ValidationError("steps_to_threshold: empty log");
    // Rows arrive grouped by step; scan groups in order.
    int64_t cur_step = -1;
    double sum = 0.0;
    int64_t count = 0;
    const auto flush = [&]() -> bool {
        return count > 0 && sum / static_cast<double>(count) <= tau;
    };
    for (const auto& r : log.rows) {
        if (r.step != cur_step) {
            if (flush()) return cur_step;
            cur_step = r.step;
            sum = 0.0;
            count = 0;
        }
        if (topology.empty() || r.topology == topology) {
            sum += r.viol.total;
            ++count;
        }
    }
    if (flush()) return cur_step;
    return std::nullopt;
}

}  // namespace lumina::train
