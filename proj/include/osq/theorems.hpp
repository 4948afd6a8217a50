#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "osq/graphgen.hpp"
#include "osq/matrix.hpp"
#include "osq/models.hpp"

namespace osq::theorems {

// Max-propagation with 2-dimensional node states (flag, payload). The single
// Source node starts at (1, label); every other node at (0, label). Row v of
// the result is h_v after `iterations` rounds.
// Throws ParameterError unless exactly one node has the Source role.
Matrix<double> ring_exact_forward(const graph::TaskGraph& g, int iterations);

// Connected graph on `nodes` vertices (random spanning tree plus extra edges
// with probability p) with one Source, one Target and random labels in 1..L.
graph::TaskInstance random_transfer_instance(int nodes, double p, int L, Rng& rng);

// Per-iteration feature vectors of one central node plus the decoded labels.
struct ForwardTrace {
  std::map<int, int> predictions;                 // target node -> label
  std::vector<std::vector<double>> central_states;  // x_c^1, x_c^2, ...
};

using ForwardFn = std::function<ForwardTrace(const graph::TaskInstance&)>;

// Central summary M[id, label] = #neighbours with that (identifier, label).
Matrix<double> central_summary(const graph::TaskGraph& g, int central);

// Two iterations: centrals sum onehot(id) x onehot(label) over neighbours;
// targets average the summaries of their central neighbours and decode
// argmax(M[id_t, :] - e_L).
ForwardTrace two_radius_exact_forward(const graph::TaskInstance& instance);

// Centrals keep only the sum of neighbour labels; targets guess the rounded
// mean source label.
ForwardTrace lossy_sum_forward(const graph::TaskInstance& instance);

// Reads layer outputs of a trained model at the first central node.
template <typename T>
ForwardFn model_forward_fn(const models::ModelSpec& spec, const models::ModelParams<T>& params);

double accuracy(const ForwardTrace& trace, const graph::TaskInstance& instance);

struct DimensionBound {
  double value = 0;  // n/(2b) * log2(n/2)
  bool informative = false;  // false when n < 3
};

// Throws ParameterError for n < 2 or b < 1.
DimensionBound dimension_lower_bound(int n, int b);

struct InjectivityVerdict {
  long permutations = 0;
  bool injective = false;      // all trajectories pairwise distinct
  long colliding_pairs = 0;
  double min_accuracy = 0;     // over all permutations
  bool all_correct = false;
  // A model that is always correct must be injective.
  bool necessary_condition = false;
};

inline constexpr int kInjectivityMaxN = 7;

// Enumerates every labelling of the sources of one G_{n,1} by a permutation
// of 1..n, concatenates the first `iterations` central states and compares
// them. Two trajectories collide when every coordinate differs by at most
// `tolerance` (0 means bitwise). Throws SizeError for n > 7.
InjectivityVerdict permutation_injectivity_oracle(const ForwardFn& forward, int n, int iterations,
                                                  double tolerance = 0.0);

struct CheegerCheck {
  double exact = 0;
  double bound = 0;
  std::vector<int> subset;
  bool holds = false;
};

// Throws SizeError when 2n + k exceeds the enumeration cap and
// ParameterError unless 1 <= k <= 2n.
CheegerCheck cheeger_bound_check(int n, int k);

struct ResistanceCheck {
  double measured = 0;
  double expected = 0;        // closed form
  double disjoint_paths = 0;  // series-parallel formula
  bool holds = false;         // all three agree within 1e-9
};

inline constexpr double kResistanceTolerance = 1e-9;

ResistanceCheck resistance_identity_check(int n, int k);
ResistanceCheck ring_resistance_check(int r);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Every theorem check at desk scale; `quick` keeps n <= 5.
std::vector<CheckResult> run_verification(bool quick);

}  // namespace osq::theorems
