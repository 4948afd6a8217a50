#include "osq/theorems.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "osq/error.hpp"
#include "osq/metrics.hpp"

namespace osq::theorems {

using graph::Role;
using graph::TaskGraph;
using graph::TaskInstance;

Matrix<double> ring_exact_forward(const TaskGraph& g, int iterations) {
  if (iterations < 0) throw ParameterError("iterations must be >= 0");
  const auto sources = g.nodes_with_role(Role::Source);
  if (sources.size() != 1)
    throw ParameterError("max-propagation needs exactly one source, found " + std::to_string(sources.size()));
  const int nodes = g.node_count();
  Matrix<double> h(static_cast<std::size_t>(nodes), 2, 0.0);
  for (int v = 0; v < nodes; ++v) {
    h(v, 0) = v == sources[0] ? 1.0 : 0.0;
    h(v, 1) = g.attrs[v].label;
  }
  const auto adj = g.adjacency();
  for (int it = 0; it < iterations; ++it) {
    Matrix<double> next(static_cast<std::size_t>(nodes), 2, 0.0);
    for (int v = 0; v < nodes; ++v) {
      double flag = h(v, 0), payload = h(v, 0) * h(v, 1);
      for (int u : adj[v]) {
        flag = std::max(flag, h(u, 0));
        payload = std::max(payload, h(u, 0) * h(u, 1));
      }
      next(v, 0) = flag;
      next(v, 1) = payload;
    }
    h = std::move(next);
  }
  return h;
}

TaskInstance random_transfer_instance(int nodes, double p, int L, Rng& rng) {
  if (nodes < 2) throw ParameterError("need at least two nodes");
  if (L < 1) throw ParameterError("L must be >= 1");
  TaskInstance inst;
  TaskGraph& g = inst.graph;
  g.family = graph::Family::RingTransfer;
  g.params = {0, 0, L, 0};
  g.attrs.resize(static_cast<std::size_t>(nodes));
  auto order = rng.permutation(nodes);
  std::vector<graph::Edge> edges;
  for (int i = 1; i < nodes; ++i) {
    const int u = order[i], v = order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i)))];
    edges.push_back({std::min(u, v), std::max(u, v)});
  }
  for (int u = 0; u < nodes; ++u)
    for (int v = u + 1; v < nodes; ++v)
      if (rng.uniform() < p) edges.push_back({u, v});
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  g.edges = std::move(edges);

  const int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(nodes)));
  int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(nodes - 1)));
  if (t >= s) ++t;
  for (int v = 0; v < nodes; ++v) {
    const int label = static_cast<int>(rng.between(1, L));
    if (v == s) g.attrs[v] = {Role::Source, 1, label};
    else if (v == t) g.attrs[v] = {Role::Target, 2, label};
    else g.attrs[v] = {Role::Central, 0, label};
  }
  g.params.r = graph::bfs_distances(g.adjacency(), s)[t];
  inst.supervision[t] = g.attrs[s].label;
  return inst;
}

// ---- Two-Radius constructions ---------------------------------------------

Matrix<double> central_summary(const TaskGraph& g, int central) {
  const auto adj = g.adjacency();
  Matrix<double> m(static_cast<std::size_t>(g.id_vocab()), static_cast<std::size_t>(g.label_vocab()), 0.0);
  for (int u : adj.at(central)) m(g.attrs[u].iota, g.attrs[u].label) += 1.0;
  return m;
}

ForwardTrace two_radius_exact_forward(const TaskInstance& instance) {
  const TaskGraph& g = instance.graph;
  const auto adj = g.adjacency();
  const auto centrals = g.nodes_with_role(Role::Central);
  if (centrals.empty()) throw ValidationError("two-radius instance without central nodes");
  std::map<int, Matrix<double>> summary;
  for (int c : centrals) summary.emplace(c, central_summary(g, c));

  ForwardTrace out;
  const int L = g.params.L;
  for (int t : g.nodes_with_role(Role::Target)) {
    Matrix<double> mean(summary.begin()->second.rows, summary.begin()->second.cols, 0.0);
    int count = 0;
    for (int c : adj[t]) {
      if (g.attrs[c].role != Role::Central) continue;
      const auto& m = summary.at(c);
      for (std::size_t i = 0; i < m.size(); ++i) mean.data[i] += m.data[i];
      ++count;
    }
    if (count == 0) throw ValidationError("target " + std::to_string(t) + " has no central neighbour");
    for (double& x : mean.data) x /= count;
    auto row = mean.row(static_cast<std::size_t>(g.attrs[t].iota));
    std::vector<double> scores(row.begin(), row.end());
    scores[static_cast<std::size_t>(L)] -= 1.0;
    out.predictions[t] = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  }
  const auto& first = summary.at(centrals.front()).data;
  out.central_states = {first, first};
  return out;
}

ForwardTrace lossy_sum_forward(const TaskInstance& instance) {
  const TaskGraph& g = instance.graph;
  const auto adj = g.adjacency();
  const int central = g.nodes_with_role(Role::Central).at(0);
  double label_sum = 0;
  int sources = 0;
  for (int u : adj[central]) {
    if (g.attrs[u].role != Role::Source) continue;
    label_sum += g.attrs[u].label;
    ++sources;
  }
  ForwardTrace out;
  const int guess = sources ? static_cast<int>(std::lround(label_sum / sources)) : 0;
  for (int t : g.nodes_with_role(Role::Target)) out.predictions[t] = guess;
  out.central_states = {{label_sum}, {label_sum}};
  return out;
}

template <typename T>
ForwardFn model_forward_fn(const models::ModelSpec& spec, const models::ModelParams<T>& params) {
  return [spec, params](const TaskInstance& instance) {
    const auto batch = models::make_batch<T>(instance);
    const auto res = models::forward(spec, params, batch);
    ForwardTrace out;
    const auto& logits = res.logits.value();
    for (const auto& [t, label] : instance.supervision) {
      (void)label;
      auto row = logits.row(static_cast<std::size_t>(t));
      out.predictions[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) + 1;
    }
    const int c = instance.graph.nodes_with_role(Role::Central).at(0);
    for (const auto& layer : res.layer_outputs) {
      auto row = layer.value().row(static_cast<std::size_t>(c));
      out.central_states.emplace_back(row.begin(), row.end());
    }
    return out;
  };
}

template ForwardFn model_forward_fn<float>(const models::ModelSpec&, const models::ModelParams<float>&);
template ForwardFn model_forward_fn<double>(const models::ModelSpec&, const models::ModelParams<double>&);

double accuracy(const ForwardTrace& trace, const TaskInstance& instance) {
  if (instance.supervision.empty()) throw ValidationError("instance has no supervised targets");
  int hits = 0;
  for (const auto& [t, label] : instance.supervision) {
    auto it = trace.predictions.find(t);
    if (it != trace.predictions.end() && it->second == label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(instance.supervision.size());
}

DimensionBound dimension_lower_bound(int n, int b) {
  if (n < 2) throw ParameterError("dimension bound needs n >= 2");
  if (b < 1) throw ParameterError("dimension bound needs b >= 1");
  const double nd = n;
  return {nd / (2.0 * b) * std::log2(nd / 2.0), n >= 3};
}

InjectivityVerdict permutation_injectivity_oracle(const ForwardFn& forward, int n, int iterations,
                                                  double tolerance) {
  if (n > kInjectivityMaxN) throw SizeError("permutation oracle enumerates n! labellings; n must be <= 7");
  if (n < 2) throw ParameterError("permutation oracle needs n >= 2");
  if (iterations < 1) throw ParameterError("iterations must be >= 1");
  if (tolerance < 0) throw ParameterError("tolerance must be >= 0");

  Rng rng(0);
  TaskInstance inst = graph::make_two_radius(n, 1, n, rng, true);
  const auto sources = inst.graph.nodes_with_role(Role::Source);
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::iota(labels.begin(), labels.end(), 1);

  InjectivityVerdict v;
  v.min_accuracy = 1.0;
  std::vector<std::vector<double>> trajectories;
  do {
    for (int i = 0; i < n; ++i) inst.graph.attrs[sources[i]].label = labels[i];
    inst.supervision = graph::derive_supervision(inst.graph);
    const auto trace = forward(inst);
    if (static_cast<int>(trace.central_states.size()) < iterations)
      throw DimensionError("forward recorded " + std::to_string(trace.central_states.size()) +
                           " central states, oracle needs " + std::to_string(iterations));
    std::vector<double> traj;
    for (int t = 0; t < iterations; ++t) traj.insert(traj.end(), trace.central_states[t].begin(), trace.central_states[t].end());
    trajectories.push_back(std::move(traj));
    v.min_accuracy = std::min(v.min_accuracy, accuracy(trace, inst));
    ++v.permutations;
  } while (std::next_permutation(labels.begin(), labels.end()));

  if (tolerance == 0.0) {
    std::sort(trajectories.begin(), trajectories.end());
    for (std::size_t i = 0; i < trajectories.size();) {
      std::size_t j = i + 1;
      while (j < trajectories.size() && trajectories[j] == trajectories[i]) ++j;
      const long group = static_cast<long>(j - i);
      v.colliding_pairs += group * (group - 1) / 2;
      i = j;
    }
  } else {
    for (std::size_t i = 0; i < trajectories.size(); ++i)
      for (std::size_t j = i + 1; j < trajectories.size(); ++j) {
        const auto& a = trajectories[i];
        const auto& b = trajectories[j];
        bool same = a.size() == b.size();
        for (std::size_t d = 0; same && d < a.size(); ++d) same = std::abs(a[d] - b[d]) <= tolerance;
        if (same) ++v.colliding_pairs;
      }
  }
  v.injective = v.colliding_pairs == 0;
  v.all_correct = v.min_accuracy == 1.0;
  v.necessary_condition = !v.all_correct || v.injective;
  return v;
}

// ---- measures ---------------------------------------------------------------

CheegerCheck cheeger_bound_check(int n, int k) {
  if (n < 1 || k < 1 || k > 2 * n) throw ParameterError("cheeger check needs n >= 1 and 1 <= k <= 2n");
  if (2 * n + k > metrics::kCheegerMaxNodes)
    throw SizeError("G_{n,k} has " + std::to_string(2 * n + k) + " nodes, enumeration cap is " +
                    std::to_string(metrics::kCheegerMaxNodes));
  Rng rng(0);
  const auto inst = graph::make_two_radius(n, k, 10, rng, false);
  const auto exact = metrics::cheeger_exact(inst.graph);
  CheegerCheck c;
  c.exact = exact.value;
  c.bound = metrics::cheeger_lower_bound_gnk(n, k);
  c.subset = exact.subset;
  c.holds = c.exact >= c.bound;
  return c;
}

namespace {

ResistanceCheck finish(double measured, double expected, std::vector<int> paths) {
  ResistanceCheck r;
  r.measured = measured;
  r.expected = expected;
  r.disjoint_paths = metrics::effective_resistance_disjoint_paths(paths);
  r.holds = std::abs(measured - expected) <= kResistanceTolerance &&
            std::abs(r.disjoint_paths - expected) <= kResistanceTolerance;
  return r;
}

}  // namespace

ResistanceCheck resistance_identity_check(int n, int k) {
  Rng rng(0);
  const auto inst = graph::make_two_radius(n, k, 10, rng, false);
  const int s = inst.graph.nodes_with_role(Role::Source).front();
  int t = -1;
  for (int v : inst.graph.nodes_with_role(Role::Target))
    if (inst.graph.attrs[v].iota == inst.graph.attrs[s].iota) t = v;
  return finish(metrics::effective_resistance(inst.graph, s, t), 2.0 / k, std::vector<int>(k, 2));
}

ResistanceCheck ring_resistance_check(int r) {
  Rng rng(0);
  const auto inst = graph::make_ring_transfer(r, 10, rng);
  const int s = inst.graph.nodes_with_role(Role::Source).front();
  const int t = inst.graph.nodes_with_role(Role::Target).front();
  std::vector<int> paths = r == 1 ? std::vector<int>{1} : std::vector<int>{r, r};
  const double expected = r == 1 ? 1.0 : r / 2.0;
  return finish(metrics::effective_resistance(inst.graph, s, t), expected, paths);
}

// ---- verification table -----------------------------------------------------

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

CheckResult ring_check(int max_r) {
  for (int r = 1; r <= max_r; ++r)
    for (int i = 0; i < 20; ++i) {
      Rng rng = Rng::derive(static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(i));
      const auto inst = graph::make_ring_transfer(r, 10, rng);
      const int t = inst.graph.nodes_with_role(Role::Target).front();
      const double want = inst.supervision.at(t);
      const auto h = ring_exact_forward(inst.graph, r);
      const auto early = ring_exact_forward(inst.graph, r - 1);
      if (h(t, 1) != want || h(t, 0) != 1.0 || early(t, 0) != 0.0)
        return {"ring_exact_forward", false, "r=" + std::to_string(r) + " instance " + std::to_string(i)};
    }
  return {"ring_exact_forward", true, "r=1.." + std::to_string(max_r) + " x 20"};
}

CheckResult bfs_check(int graphs) {
  for (int i = 0; i < graphs; ++i) {
    Rng rng = Rng::derive(77, static_cast<std::uint64_t>(i));
    const auto inst = random_transfer_instance(30, 0.05, 10, rng);
    const auto& g = inst.graph;
    const int s = g.nodes_with_role(Role::Source).front();
    const auto dist = graph::bfs_distances(g.adjacency(), s);
    const int ecc = *std::max_element(dist.begin(), dist.end());
    for (int k = 0; k <= ecc; ++k) {
      const auto h = ring_exact_forward(g, k);
      for (int v = 0; v < g.node_count(); ++v) {
        const bool reached = dist[v] <= k;
        if (h(v, 0) != (reached ? 1.0 : 0.0) || (reached && h(v, 1) != g.attrs[s].label))
          return {"ring_exact_forward_bfs", false, "graph " + std::to_string(i) + " node " + std::to_string(v)};
      }
    }
  }
  return {"ring_exact_forward_bfs", true, std::to_string(graphs) + " random 30-node graphs"};
}

CheckResult two_radius_check(int max_n) {
  long instances = 0;
  for (int n = 2; n <= max_n; ++n)
    for (int k : {1, 2, 5})
      for (bool distinct : {false, true})
        for (int i = 0; i < 100; ++i) {
          Rng rng = Rng::derive(static_cast<std::uint64_t>(n * 100 + k), static_cast<std::uint64_t>(i * 2 + distinct));
          const auto inst = graph::make_two_radius(n, k, distinct ? n : 10, rng, distinct);
          ++instances;
          if (accuracy(two_radius_exact_forward(inst), inst) != 1.0)
            return {"two_radius_exact_forward", false,
                    "n=" + std::to_string(n) + " k=" + std::to_string(k) + (distinct ? " distinct" : " random")};
        }
  return {"two_radius_exact_forward", true, std::to_string(instances) + " instances at accuracy 1"};
}

}  // namespace

std::vector<CheckResult> run_verification(bool quick) {
  std::vector<CheckResult> out;
  out.push_back(ring_check(quick ? 16 : 64));
  out.push_back(bfs_check(quick ? 10 : 50));
  const int max_n = quick ? 5 : 8;
  out.push_back(two_radius_check(max_n));

  for (int n = 3; n <= std::min(max_n, 6); ++n) {
    const auto exact = permutation_injectivity_oracle(two_radius_exact_forward, n, 2);
    out.push_back({"injectivity_exact_n" + std::to_string(n), exact.injective && exact.all_correct,
                   std::to_string(exact.permutations) + " trajectories, " + std::to_string(exact.colliding_pairs) +
                       " collisions"});
    const auto lossy = permutation_injectivity_oracle(lossy_sum_forward, n, 2);
    out.push_back({"collision_lossy_n" + std::to_string(n), !lossy.injective && !lossy.all_correct,
                   std::to_string(lossy.colliding_pairs) + " collisions, min accuracy " + fmt(lossy.min_accuracy)});
  }

  const double b8 = dimension_lower_bound(8, 32).value;
  const double b1024 = dimension_lower_bound(1024, 32).value;
  out.push_back({"dimension_lower_bound", b8 == 0.25 && b1024 == 144.0, fmt(b8) + ", " + fmt(b1024)});

  for (int n = 2; n <= std::min(max_n, 6); ++n) {
    const auto c = cheeger_bound_check(n, 1);
    out.push_back({"cheeger_gn1_n" + std::to_string(n), c.exact == 1.0, fmt(c.exact)});
  }
  for (auto [n, k] : std::vector<std::pair<int, int>>{{3, 1}, {3, 2}, {4, 2}, {5, 3}, {4, 8}}) {
    if (n > max_n) continue;
    const auto c = cheeger_bound_check(n, k);
    out.push_back({"cheeger_bound_n" + std::to_string(n) + "_k" + std::to_string(k), c.holds,
                   fmt(c.exact) + " >= " + fmt(c.bound)});
  }

  std::vector<std::pair<int, int>> resistance{{2, 1}, {10, 1}, {5, 2}, {5, 4}};
  if (!quick) resistance.push_back({100, 1});
  for (auto [n, k] : resistance) {
    const auto r = resistance_identity_check(n, k);
    out.push_back({"resistance_n" + std::to_string(n) + "_k" + std::to_string(k), r.holds, fmt(r.measured)});
  }
  for (int r = 2; r <= 8; ++r) {
    const auto c = ring_resistance_check(r);
    out.push_back({"resistance_ring_r" + std::to_string(r), c.holds, fmt(c.measured)});
  }

  std::vector<int> curvature_n{2, 10};
  if (!quick) curvature_n.push_back(50);
  for (int n : curvature_n) {
    Rng rng(0);
    const auto inst = graph::make_two_radius(n, 1, 10, rng, false);
    double worst = 0;
    for (double c : metrics::edge_curvatures(inst.graph)) worst = std::max(worst, std::abs(c));
    out.push_back({"curvature_gn1_n" + std::to_string(n), worst == 0.0, "max |Ric| " + fmt(worst)});
  }
  return out;
}

}  // namespace osq::theorems
