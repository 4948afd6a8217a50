#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "osq/matrix.hpp"
#include "osq/rng.hpp"

namespace osq::graph {

enum class Family { TwoRadius, RingTransfer, TreeNeighborsMatch };
enum class Role { Source, Central, Target };

// How central nodes of a Two-Radius graph are identified. Distinct assigns
// n+1..n+k; Shared gives every central node identifier 0, which makes the
// central nodes exactly indistinguishable to any permutation-equivariant model.
enum class CentralIds { Distinct, Shared };

std::string_view family_name(Family f);
Family parse_family(std::string_view token);
char role_code(Role r);

struct NodeAttr {
  Role role = Role::Central;
  int iota = 0;
  int label = 0;
  friend bool operator==(const NodeAttr&, const NodeAttr&) = default;
};

// Undirected edge, stored with u < v.
struct Edge {
  int u = 0;
  int v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// n: sources (leaves for trees); k: central nodes; L: label classes;
// r: radius (ring) or depth (tree). Unused fields are 0.
struct TaskParams {
  int n = 0;
  int k = 0;
  int L = 0;
  int r = 0;
  friend bool operator==(const TaskParams&, const TaskParams&) = default;
};

struct TaskGraph {
  Family family = Family::TwoRadius;
  TaskParams params;
  std::vector<NodeAttr> attrs;
  std::vector<Edge> edges;

  int node_count() const { return static_cast<int>(attrs.size()); }
  // Identifier vocabulary size: n+k+1 (Two-Radius), 3 (ring), n+1 (tree).
  int id_vocab() const;
  // Labels live in {0..L}; 0 is reserved for central nodes.
  int label_vocab() const { return params.L + 1; }
  int input_dim() const { return id_vocab() + label_vocab(); }

  std::vector<int> nodes_with_role(Role role) const;
  std::vector<std::vector<int>> adjacency() const;
  std::vector<int> degrees() const;

  // Row v = concat(onehot(iota_v), onehot(label_v)).
  template <typename T>
  Matrix<T> features() const;

  friend bool operator==(const TaskGraph&, const TaskGraph&) = default;
};

struct TaskInstance {
  TaskGraph graph;
  std::map<int, int> supervision;  // target node -> required label
  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct DatasetSpec {
  Family family = Family::TwoRadius;
  TaskParams params;
  int count = 1;
  std::uint64_t seed = 0;
  bool distinct_labels = false;
  CentralIds central_ids = CentralIds::Distinct;
};

TaskInstance make_two_radius(int n, int k, int L, Rng& rng, bool distinct_labels,
                             CentralIds central_ids = CentralIds::Distinct);
TaskInstance make_ring_transfer(int r, int L, Rng& rng);
// L defaults to the number of leaves when 0.
TaskInstance make_tree_neighbors_match(int depth, Rng& rng, int L = 0);

// Instance `index` of a dataset; identical to sample_dataset(spec)[index].
TaskInstance make_instance(const DatasetSpec& spec, std::uint64_t index);
std::vector<TaskInstance> sample_dataset(const DatasetSpec& spec);

// Derives the target -> label map from node attributes.
std::map<int, int> derive_supervision(const TaskGraph& g);

enum class Validation { Strict, Structural };

// Throws ValidationError naming the violated invariant. Structural checks
// simplicity only; Strict also checks connectivity and the family invariants.
void validate(const TaskGraph& g, Validation level = Validation::Strict);

std::string serialize_graph(const TaskInstance& instance);
std::string serialize_dataset(const std::vector<TaskInstance>& instances);
// Parses one or more blank-line separated instances. Errors carry the line
// number. Under Structural validation supervision is derived when possible.
std::vector<TaskInstance> parse_graphs(std::string_view text,
                                       Validation level = Validation::Strict);
TaskInstance parse_graph(std::string_view text, Validation level = Validation::Strict);

// Graph utilities shared by metrics and theorems.
std::vector<int> bfs_distances(const std::vector<std::vector<int>>& adj, int source);
bool is_connected(const TaskGraph& g);

}  // namespace osq::graph
