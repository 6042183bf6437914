#pragma once

#include <array>
#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "lumina/common.hpp"
#include "lumina/tape.hpp"

namespace lumina::grid {

// All electrical quantities are stored in per-unit on the case base_mva.
// Angles are radians.

struct Bus {
    int index = 0;
    double vmin = 0.9;
    double vmax = 1.1;
    bool is_reference = false;
    double base_kv = 135.0;
};

struct Generator {
    int index = 0;
    int bus = 0;
    double pmin = 0.0, pmax = 0.0;
    double qmin = 0.0, qmax = 0.0;
    double vm_setpoint = 1.0;  // PV voltage target; 1.0 when the case omits it
};

struct Load {
    int index = 0;
    int bus = 0;
    double pd = 0.0, qd = 0.0;
};

struct Shunt {
    int index = 0;
    int bus = 0;
    double gs = 0.0, bs = 0.0;
};

struct Branch {
    int index = 0;
    int from_bus = 0, to_bus = 0;
    double r = 0.0, x = 0.0;
    double b_charging = 0.0;
    double tap = 1.0;       // off-nominal ratio on the from side
    double shift = 0.0;     // phase shift (radians) on the from side
    double s_max = 0.0;     // apparent-power limit; 0 means unlimited
    bool is_transformer = false;
};

struct GridCase {
    std::string case_id;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Generator> generators;
    std::vector<Load> loads;
    std::vector<Shunt> shunts;
    std::vector<Branch> branches;

    int n_bus() const { return static_cast<int>(buses.size()); }
    int n_gen() const { return static_cast<int>(generators.size()); }
    int reference_bus() const;

    /// Full invariant check: exactly one reference bus, component bus
    /// references in range, connectivity, ordered limit pairs. Throws
    /// ValidationError naming the offending record.
    void validate() const;
};

/// Complex bus admittance matrix in compressed sparse rows with sorted,
/// deduplicated columns. Symmetric sparsity pattern.
struct SparseComplexMatrix {
    int n = 0;
    std::vector<int> row_ptr;
    std::vector<int> col;
    std::vector<std::complex<double>> val;

    std::complex<double> at(int i, int j) const;
};

/// Standard pi-model branch admittance blocks (from/to sides).
struct BranchAdmittance {
    std::complex<double> yff, yft, ytf, ytt;
};
BranchAdmittance branch_admittance(const Branch& b);

SparseComplexMatrix build_admittance(const GridCase& c);

enum class NodeType : int { bus = 0, gen = 1, load = 2, shunt = 3 };
inline constexpr int kNodeTypeCount = 4;
inline constexpr std::array<const char*, 4> kNodeTypeNames = {"bus", "generator",
                                                              "load", "shunt"};

// Typed feature layouts (fixed widths):
//   bus     [vmin, vmax, is_reference, base_kv]
//   gen     [pmin, pmax, qmin, qmax]
//   load    [pd, qd]
//   shunt   [gs, bs]
//   ac_line/transformer edge [r, x, b_charging, tap, shift, s_max]
inline constexpr std::array<int, 4> kNodeFeatureWidth = {4, 4, 2, 2};
inline constexpr int kBranchFeatureWidth = 6;

/// One typed directed edge set. Every base relation appears twice, as the
/// forward set and an explicit reverse set with swapped endpoints.
struct Relation {
    std::string name;  // e.g. "ac_line", "ac_line_rev", "gen_link", ...
    NodeType src = NodeType::bus;
    NodeType dst = NodeType::bus;
    ad::IndexList src_idx;
    ad::IndexList dst_idx;
    std::vector<double> edge_features;  // size() == edges * feat_width
    int feat_width = 0;

    int64_t n_edges() const { return static_cast<int64_t>(src_idx->size()); }
};

struct HeteroGraph {
    std::array<int, 4> n_by_type = {0, 0, 0, 0};
    std::array<std::vector<double>, 4> features;  // row-major, typed widths
    std::vector<Relation> relations;              // fixed canonical order

    int n_of(NodeType t) const { return n_by_type[static_cast<int>(t)]; }
    const Relation& relation(const std::string& name) const;
    /// Total directed edges under a base relation name (forward + reverse).
    int64_t edge_count(const std::string& base_name) const;
};

/// Single-type view: nodes ordered buses, generators, loads, shunts; node
/// features are [one-hot(4) | typed features zero-padded to width 4]; edges
/// are the union of all relations (both directions) with features zero-padded
/// to the branch width.
struct HomoGraph {
    int64_t n_nodes = 0;
    int n_bus = 0, n_gen = 0, n_load = 0, n_shunt = 0;
    std::vector<double> features;  // n_nodes x kHomoFeatureWidth
    ad::IndexList edge_src;
    ad::IndexList edge_dst;
    std::vector<double> edge_features;  // E x kBranchFeatureWidth

    int64_t n_edges() const { return static_cast<int64_t>(edge_src->size()); }
};

inline constexpr int kHomoFeatureWidth = kNodeTypeCount + 4;

/// Canonical base relation names in graph order.
const std::vector<std::string>& base_relation_names();

HeteroGraph build_hetero_graph(const GridCase& c);
HomoGraph to_homogeneous(const HeteroGraph& g);

struct NodeDegrees {
    std::vector<int> degree;
    std::vector<double> normalized;  // degree / max degree, in (0, 1]
};

/// Degrees over the homogeneous union edge list (out-degree; the reverse-edge
/// invariant makes this the undirected degree). Throws on an edgeless graph.
NodeDegrees node_degrees(const HomoGraph& g);

}  // namespace lumina::grid
