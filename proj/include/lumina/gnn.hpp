#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lumina/dataset.hpp"
#include "lumina/grid.hpp"
#include "lumina/tape.hpp"

namespace lumina::gnn {

enum class Arch { gcn, gat, gin, graph_transformer, heterognn, hgt };

Arch parse_arch(const std::string& s);
std::string arch_name(Arch a);
bool is_hetero(Arch a);

enum class Activation { identity, relu, leaky_relu };

struct ModelConfig {
    Arch architecture = Arch::gcn;
    int layers = 4;
    int hidden = 128;
    int heads = 4;
    double leaky_slope = 0.2;        // GAT attention score slope
    bool epsilon_learnable = false;  // GIN

    void validate() const;
    int head_dim() const { return hidden / heads; }
};

/// Precomputed homogeneous-view helpers: self-looped edge lists with GCN
/// normalization coefficients, the raw edge lists, and the additive attention
/// mask (0 on edges and the diagonal, kMaskFloor elsewhere).
struct HomoWorkspace {
    int64_t n = 0;
    ad::IndexList loop_src, loop_dst;  // edges plus self loops
    std::vector<double> gcn_coeff;     // per loop edge: 1/sqrt(d_i d_j), d = deg + 1
    ad::IndexList raw_src, raw_dst;    // edges only
    std::vector<double> attn_mask;     // n x n additive mask

    static HomoWorkspace build(const grid::HomoGraph& g);
};

/// Per-target-type attention blocks for typed attention: for each node type,
/// the relations that target it (with at least one edge), the column offsets
/// of each relation's source nodes, and the additive mask over the
/// concatenated candidate columns. Also per-relation inverse in-degrees for
/// mean aggregation.
struct HeteroWorkspace {
    struct Block {
        int relation;       // index into HeteroGraph::relations
        int64_t col_base;   // column offset in the concatenated candidate axis
        int64_t n_src;
    };
    std::array<std::vector<Block>, 4> blocks;
    std::array<std::vector<double>, 4> attn_mask;  // n_t x total candidate columns
    std::array<int64_t, 4> n_candidates = {0, 0, 0, 0};
    std::vector<std::vector<double>> inv_in_degree;  // per relation, per dst node

    static HeteroWorkspace build(const grid::HeteroGraph& g);
};

/// Named parameter tensors; registration order is the checkpoint order.
template <class T>
struct ParamStore {
    struct Entry {
        std::string name;
        ad::Tensor<T> tensor;
    };
    std::vector<Entry> entries;
    std::map<std::string, size_t> index;

    ad::Tensor<T>& add(const std::string& name, ad::Shape shape);
    const ad::Tensor<T>& at(const std::string& name) const;
    ad::Tensor<T>& at(const std::string& name);
    bool contains(const std::string& name) const { return index.count(name) > 0; }
    int64_t total_elements() const;
};

/// Create and Xavier-initialize all parameters for a config. The parameter
/// set covers every node type and relation, so weights transfer across
/// topologies with differing component counts.
template <class T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed);

template <class T>
using Id = typename ad::Tape<T>::Id;

/// Parameters pushed onto a tape for one forward pass.
template <class T>
struct BoundParams {
    const ParamStore<T>* store = nullptr;
    std::vector<Id<T>> ids;

    static BoundParams bind(ad::Tape<T>& tape, const ParamStore<T>& store);
    Id<T> of(const std::string& name) const;
};

// --- Message-passing layers (homogeneous view) ---

/// h' = act(D^{-1/2} (A+I) D^{-1/2} h W), W is (in x out).
template <class T>
Id<T> gcn_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws, Id<T> w,
                Activation act);

/// Multi-head GAT with scores LeakyReLU(a_src . Wh_i + a_dst . Wh_j), softmax
/// over the masked neighborhood (self included), heads concatenated.
template <class T>
Id<T> gat_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws, Id<T> w,
                Id<T> a_src, Id<T> a_dst, int heads, T score_slope, Activation act);

struct GinMlpNames {};  // see model params; layer takes bound ids

/// h' = MLP((1 + eps) h + sum_{j in N(i)} h_j), MLP = two affine layers with a
/// relu between. Self is excluded from the sum (the eps term carries it).
template <class T>
Id<T> gin_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws, Id<T> w1, Id<T> b1,
                Id<T> w2, Id<T> b2, Id<T> eps_scalar);

/// Adjacency-masked multi-head attention: softmax(QK^T / sqrt(d_k) + M) V.
template <class T>
Id<T> graph_transformer_layer(ad::Tape<T>& tape, Id<T> h, const HomoWorkspace& ws,
                              Id<T> wq, Id<T> wk, Id<T> wv, int heads);

// --- Message-passing layers (heterogeneous view) ---

/// Per-type ids; -1 where the type has no nodes.
template <class T>
using TypedIds = std::array<Id<T>, 4>;

/// h'_t = act(W_t h_t + sum_r mean_agg(W_r [h_src | e])), messages carry edge
/// features; relations with no edges contribute nothing.
template <class T>
TypedIds<T> heterognn_layer(ad::Tape<T>& tape, const TypedIds<T>& h,
                            const grid::HeteroGraph& g, const HeteroWorkspace& ws,
                            const std::array<Id<T>, 4>& w_self,
                            const std::vector<Id<T>>& w_rel, Activation act);

/// Typed multi-head attention with per-relation score transforms; softmax is
/// joint over all incoming typed edges; h'_t = h_t + act(sum alpha v). Nodes
/// with no incoming edges keep their embedding.
template <class T>
TypedIds<T> hgt_layer(ad::Tape<T>& tape, const TypedIds<T>& h,
                      const grid::HeteroGraph& g, const HeteroWorkspace& ws,
                      const std::array<Id<T>, 4>& wq, const std::array<Id<T>, 4>& wk,
                      const std::array<Id<T>, 4>& wv, const std::vector<Id<T>>& w_att,
                      int heads, Activation act);

// --- Whole-model forward ---

struct ModelForwardOptions {
    bool collect_activations = false;
};

template <class T>
struct ForwardResult {
    Id<T> vm, va, pg, qg;  // physical units; va is exactly 0 at the reference bus
    Id<T> pred_norm;       // flattened normalized prediction [bus rows | gen rows]
    std::vector<std::vector<double>> pooled;  // mean-over-nodes per layer (0 = encoder)
};

/// Assemble features for one instance (loads from the profile), run the
/// encoder / stack / decoders, and denormalize.
template <class T>
ForwardResult<T> model_forward(ad::Tape<T>& tape, const ModelConfig& cfg,
                               const BoundParams<T>& params,
                               const grid::HeteroGraph& hetero,
                               const grid::HomoGraph& homo, const HomoWorkspace& homo_ws,
                               const HeteroWorkspace& hetero_ws,
                               const std::vector<std::array<double, 2>>& load_profile,
                               const data::NormStats& stats, int ref_bus,
                               const ModelForwardOptions& opts = {});

extern template struct ParamStore<float>;
extern template struct ParamStore<double>;

}  // namespace lumina::gnn
