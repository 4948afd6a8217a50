#include "osq/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "osq/error.hpp"

namespace osq::metrics {

using graph::Edge;
using graph::Role;
using graph::TaskGraph;

namespace {

DenseMatrix build_laplacian(const TaskGraph& g, bool normalized, bool allow_isolated) {
  const auto n = static_cast<std::size_t>(g.node_count());
  const auto deg = g.degrees();
  DenseMatrix l(n, n, 0.0);
  if (!normalized) {
    for (std::size_t v = 0; v < n; ++v) l(v, v) = deg[v];
    for (const auto& e : g.edges) {
      l(e.u, e.v) -= 1.0;
      l(e.v, e.u) -= 1.0;
    }
    return l;
  }
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    if (deg[v] == 0) {
      if (!allow_isolated)
        throw ParameterError("normalized Laplacian undefined: node " + std::to_string(v) +
                             " has degree zero");
      continue;
    }
    inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(deg[v]));
    l(v, v) = 1.0;
  }
  for (const auto& e : g.edges) {
    const double w = inv_sqrt[e.u] * inv_sqrt[e.v];
    l(e.u, e.v) -= w;
    l(e.v, e.u) -= w;
  }
  return l;
}

double off_diagonal_mass(const DenseMatrix& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace

DenseMatrix laplacian(const TaskGraph& g, bool normalized) {
  return build_laplacian(g, normalized, false);
}

EigenDecomposition symmetric_eigen(const DenseMatrix& input) {
  if (input.rows != input.cols) throw DimensionError("symmetric_eigen needs a square matrix");
  const std::size_t n = input.rows;
  DenseMatrix a = input;
  DenseMatrix v(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double frob = 0;
  for (double x : a.data) frob += x * x;
  const double tol = 1e-12 * std::max(1.0, std::sqrt(frob));

  for (int sweep = 0; sweep < 100 && off_diagonal_mass(a) >= tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  EigenDecomposition out;
  out.values.resize(n);
  out.vectors = DenseMatrix(n, n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

SpectralGap spectral_gap(const TaskGraph& g) {
  // Isolated nodes contribute a zero row, so they count as extra components.
  const auto eig = symmetric_eigen(build_laplacian(g, true, true));
  SpectralGap out;
  for (double lambda : eig.values)
    if (std::abs(lambda) < kZeroEigenTolerance) ++out.zero_multiplicity;
  if (out.zero_multiplicity == 1 && eig.values.size() > 1) out.value = eig.values[1];
  return out;
}

DenseMatrix pseudoinverse(const DenseMatrix& symmetric) {
  const auto eig = symmetric_eigen(symmetric);
  const std::size_t n = symmetric.rows;
  double lambda_max = 0;
  for (double x : eig.values) lambda_max = std::max(lambda_max, std::abs(x));
  const double cutoff = 1e-10 * lambda_max;
  DenseMatrix out(n, n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double lambda = eig.values[k];
    if (std::abs(lambda) <= cutoff) continue;
    const double inv = 1.0 / lambda;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = eig.vectors(i, k) * inv;
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vi * eig.vectors(j, k);
    }
  }
  return out;
}

namespace {

std::vector<int> component_labels(const TaskGraph& g) {
  const auto adj = g.adjacency();
  std::vector<int> comp(adj.size(), -1);
  int next = 0;
  for (std::size_t s = 0; s < adj.size(); ++s) {
    if (comp[s] >= 0) continue;
    const auto dist = graph::bfs_distances(adj, static_cast<int>(s));
    for (std::size_t v = 0; v < adj.size(); ++v)
      if (dist[v] >= 0) comp[v] = next;
    ++next;
  }
  return comp;
}

}  // namespace

int count_components(const TaskGraph& g) {
  const auto comp = component_labels(g);
  return comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
}

ResistanceOracle::ResistanceOracle(const TaskGraph& g)
    : pinv_(pseudoinverse(laplacian(g, false))), component_(component_labels(g)) {}

double ResistanceOracle::operator()(int u, int v) const {
  const auto n = static_cast<int>(pinv_.rows);
  if (u < 0 || v < 0 || u >= n || v >= n) throw ParameterError("resistance endpoint out of range");
  if (u == v) throw ParameterError("effective resistance needs distinct endpoints");
  if (component_[u] != component_[v])
    throw NumericalError("infinite effective resistance: nodes " + std::to_string(u) + " and " +
                         std::to_string(v) + " are disconnected");
  return pinv_(u, u) + pinv_(v, v) - pinv_(u, v) - pinv_(v, u);
}

double effective_resistance(const TaskGraph& g, int u, int v) {
  return ResistanceOracle(g)(u, v);
}

double effective_resistance_disjoint_paths(std::span<const int> path_lengths) {
  if (path_lengths.empty()) throw ParameterError("at least one path is required");
  double conductance = 0;
  for (int len : path_lengths) {
    if (len < 1) throw ParameterError("path lengths must be >= 1");
    conductance += 1.0 / len;
  }
  return 1.0 / conductance;
}

namespace {

// Nodes grouped by identical open neighbourhoods. Members of a class are
// pairwise non-adjacent and any two classes are joined completely or not at all.
std::vector<std::vector<int>> twin_classes(const TaskGraph& g) {
  const int n = g.node_count();
  std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(n));
  for (const auto& e : g.edges) {
    nbrs[e.u].push_back(e.v);
    nbrs[e.v].push_back(e.u);
  }
  for (auto& l : nbrs) std::sort(l.begin(), l.end());
  std::map<std::vector<int>, int> index;
  std::vector<std::vector<int>> classes;
  for (int v = 0; v < n; ++v) {
    auto [it, fresh] = index.emplace(nbrs[v], static_cast<int>(classes.size()));
    if (fresh) classes.emplace_back();
    classes[it->second].push_back(v);
  }
  return classes;
}

}  // namespace

std::optional<CheegerResult> cheeger_by_classes(const TaskGraph& g) {
  const int n = g.node_count();
  const auto classes = twin_classes(g);
  const std::size_t m = classes.size();
  double combos = 1;
  for (const auto& c : classes) combos *= static_cast<double>(c.size() + 1);
  if (combos > static_cast<double>(kCheegerMaxCountVectors)) return std::nullopt;

  std::vector<int> cls(static_cast<std::size_t>(n));
  for (std::size_t c = 0; c < m; ++c)
    for (int v : classes[c]) cls[v] = static_cast<int>(c);
  std::set<std::pair<int, int>> joined;
  for (const auto& e : g.edges) joined.emplace(std::min(cls[e.u], cls[e.v]), std::max(cls[e.u], cls[e.v]));
  const std::vector<std::pair<int, int>> pairs(joined.begin(), joined.end());

  const int max_size = n / 2;
  std::vector<long> count(m, 0), best_count;
  long best_boundary = -1, best_size = 1;
  while (true) {
    std::size_t c = 0;
    while (c < m && count[c] == static_cast<long>(classes[c].size())) count[c++] = 0;
    if (c == m) break;
    ++count[c];
    const long size = std::accumulate(count.begin(), count.end(), 0L);
    if (size > max_size) continue;
    long boundary = 0;
    for (auto [a, b] : pairs) {
      const long na = static_cast<long>(classes[a].size()), nb = static_cast<long>(classes[b].size());
      boundary += count[a] * (nb - count[b]) + (na - count[a]) * count[b];
    }
    if (best_boundary < 0 || boundary * best_size < best_boundary * size) {
      best_boundary = boundary;
      best_size = size;
      best_count = count;
    }
  }
  CheegerResult out;
  out.value = static_cast<double>(best_boundary) / static_cast<double>(best_size);
  for (std::size_t c = 0; c < m; ++c)
    for (long i = 0; i < best_count[c]; ++i) out.subset.push_back(classes[c][static_cast<std::size_t>(i)]);
  std::sort(out.subset.begin(), out.subset.end());
  return out;
}

bool cheeger_feasible(const TaskGraph& g) {
  const int n = g.node_count();
  if (n < 2) return false;
  if (n <= kCheegerMaxNodes) return true;
  double combos = 1;
  for (const auto& c : twin_classes(g)) combos *= static_cast<double>(c.size() + 1);
  return combos <= static_cast<double>(kCheegerMaxCountVectors);
}

CheegerResult cheeger_exact(const TaskGraph& g) {
  const int n = g.node_count();
  if (n < 2) throw ParameterError("cheeger constant needs at least two nodes");
  if (n > kCheegerMaxNodes) {
    if (auto r = cheeger_by_classes(g)) return *r;
    throw SizeError("cheeger_exact enumerates subsets of at most " + std::to_string(kCheegerMaxNodes) +
                    " nodes (got " + std::to_string(n) +
                    ") unless twin classes make the count space small; use cheeger_lower_bound_gnk for larger "
                    "Two-Radius graphs");
  }

  std::vector<std::uint32_t> adj(static_cast<std::size_t>(n), 0);
  for (const auto& e : g.edges) {
    adj[e.u] |= 1u << e.v;
    adj[e.v] |= 1u << e.u;
  }
  const int max_size = n / 2;

  // Gray-code walk: each step toggles one node and updates |dA| in O(1).
  std::uint32_t mask = 0;
  long boundary = 0;
  int size = 0;
  long best_boundary = -1;
  int best_size = 1;
  std::uint32_t best_mask = 0;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t step = 1; step < total; ++step) {
    const int v = std::countr_zero(step);
    const std::uint32_t bit = 1u << v;
    const long deg = std::popcount(adj[v]);
    if (mask & bit) {
      mask &= ~bit;
      boundary -= deg - 2L * std::popcount(adj[v] & mask);
      --size;
    } else {
      boundary += deg - 2L * std::popcount(adj[v] & mask);
      mask |= bit;
      ++size;
    }
    if (size == 0 || size > max_size) continue;
    const long lhs = boundary * best_size;
    const long rhs = best_boundary * size;
    if (best_boundary < 0 || lhs < rhs || (lhs == rhs && mask < best_mask)) {
      best_boundary = boundary;
      best_size = size;
      best_mask = mask;
    }
  }
  CheegerResult out;
  out.value = static_cast<double>(best_boundary) / best_size;
  for (int v = 0; v < n; ++v)
    if (best_mask & (1u << v)) out.subset.push_back(v);
  return out;
}

double cheeger_lower_bound_gnk(int n, int k) {
  if (n < 1 || k < 1) throw ParameterError("cheeger bound needs n >= 1 and k >= 1");
  if (k > 2 * n)
    throw ParameterError("cheeger bound k/8 only holds for k <= 2n (got n=" + std::to_string(n) +
                         ", k=" + std::to_string(k) + ")");
  return k / 8.0;
}

namespace {

bool contains(const std::vector<int>& sorted, int x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

// Nodes w in N(k) ∩ N(j) with w outside N(i) ∪ {i}: the 4-cycles i-k-w-j-i
// without diagonals that pass through k.
int four_cycle_passes(const std::vector<std::vector<int>>& adj, int i, int j, int k) {
  int count = 0;
  for (int w : adj[k])
    if (w != i && contains(adj[j], w) && !contains(adj[i], w)) ++count;
  return count;
}

}  // namespace

double balanced_forman_curvature(const TaskGraph& g, Edge edge) {
  const Edge canon{std::min(edge.u, edge.v), std::max(edge.u, edge.v)};
  if (!std::binary_search(g.edges.begin(), g.edges.end(), canon))
    throw ParameterError("(" + std::to_string(edge.u) + ", " + std::to_string(edge.v) +
                         ") is not an edge");
  const auto adj = g.adjacency();
  const int i = canon.u, j = canon.v;
  const double di = static_cast<double>(adj[i].size());
  const double dj = static_cast<double>(adj[j].size());
  const double dmin = std::min(di, dj), dmax = std::max(di, dj);
  if (dmin <= 1) return 0.0;

  int triangles = 0;
  for (int w : adj[i])
    if (contains(adj[j], w)) ++triangles;

  int squares_i = 0, squares_j = 0, gamma_max = 0;
  for (int k : adj[i]) {
    if (k == j || contains(adj[j], k)) continue;
    const int passes = four_cycle_passes(adj, i, j, k);
    if (passes > 0) ++squares_i;
    gamma_max = std::max(gamma_max, passes);
  }
  for (int k : adj[j]) {
    if (k == i || contains(adj[i], k)) continue;
    const int passes = four_cycle_passes(adj, j, i, k);
    if (passes > 0) ++squares_j;
    gamma_max = std::max(gamma_max, passes);
  }

  double ric = 2.0 / di + 2.0 / dj - 2.0 + 2.0 * triangles / dmax + triangles / dmin;
  if (gamma_max > 0) ric += (squares_i + squares_j) / (gamma_max * dmax);
  return ric;
}

std::vector<double> edge_curvatures(const TaskGraph& g) {
  std::vector<double> out;
  out.reserve(g.edges.size());
  for (const auto& e : g.edges) out.push_back(balanced_forman_curvature(g, e));
  return out;
}

template <typename T>
double mad_energy(const Matrix<T>& features, std::span<const int> target_rows) {
  if (target_rows.size() < 2) throw ParameterError("MAD energy needs at least two target nodes");
  const std::size_t m = target_rows.size();
  double norms = 0;
  for (int v : target_rows) {
    if (v < 0 || static_cast<std::size_t>(v) >= features.rows) throw ParameterError("target row out of range");
    double s = 0;
    for (T x : features.row(static_cast<std::size_t>(v))) s += static_cast<double>(x) * static_cast<double>(x);
    norms += std::sqrt(s);
  }
  const double mean_norm = norms / static_cast<double>(m);
  if (mean_norm == 0.0) throw NumericalError("MAD energy undefined: all target features are zero");

  double pairwise = 0;
  for (std::size_t a = 0; a < m; ++a) {
    const auto ra = features.row(static_cast<std::size_t>(target_rows[a]));
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto rb = features.row(static_cast<std::size_t>(target_rows[b]));
      double s = 0;
      for (std::size_t c = 0; c < features.cols; ++c) {
        const double d = static_cast<double>(ra[c]) - static_cast<double>(rb[c]);
        s += d * d;
      }
      pairwise += std::sqrt(s);
    }
  }
  const double pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  return (pairwise / pairs) / mean_norm;
}

template double mad_energy<float>(const Matrix<float>&, std::span<const int>);
template double mad_energy<double>(const Matrix<double>&, std::span<const int>);

DiagnosticsReport diagnose(const graph::TaskInstance& instance) {
  const TaskGraph& g = instance.graph;
  DiagnosticsReport rep;
  rep.family = g.family;
  rep.params = g.params;
  rep.nodes = g.node_count();
  rep.edges = static_cast<int>(g.edges.size());
  rep.components = count_components(g);
  rep.spectral = spectral_gap(g);

  const auto curv = edge_curvatures(g);
  for (std::size_t e = 0; e < g.edges.size(); ++e) rep.edge_curvature.emplace_back(g.edges[e], curv[e]);

  if (rep.connected() && cheeger_feasible(g)) rep.cheeger = cheeger_exact(g);
  if (g.family == graph::Family::TwoRadius && g.params.k <= 2 * g.params.n && g.params.k >= 1)
    rep.cheeger_lower_bound = cheeger_lower_bound_gnk(g.params.n, g.params.k);

  if (rep.connected() && rep.nodes >= 2) {
    const ResistanceOracle oracle(g);
    std::map<int, int> source_by_id;
    for (int s : g.nodes_with_role(Role::Source)) source_by_id[g.attrs[s].iota] = s;
    const auto sources = g.nodes_with_role(Role::Source);
    for (int t : g.nodes_with_role(Role::Target)) {
      int s = -1;
      if (g.family == graph::Family::RingTransfer) {
        if (!sources.empty()) s = sources.front();
      } else if (auto it = source_by_id.find(g.attrs[t].iota); it != source_by_id.end()) {
        s = it->second;
      }
      if (s >= 0 && s != t) rep.resistances.push_back({s, t, oracle(s, t)});
    }
  }

  const auto targets = g.nodes_with_role(Role::Target);
  if (targets.size() >= 2) rep.mad = mad_energy(g.features<double>(), targets);
  return rep;
}

namespace {

std::string num(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

}  // namespace

std::string format_report(const DiagnosticsReport& r) {
  std::ostringstream out;
  out << "family = " << graph::family_name(r.family) << '\n';
  out << "n = " << r.params.n << '\n' << "k = " << r.params.k << '\n';
  out << "L = " << r.params.L << '\n' << "r = " << r.params.r << '\n';
  out << "nodes = " << r.nodes << '\n' << "edges = " << r.edges << '\n';
  out << "connected = " << (r.connected() ? "true" : "false") << '\n';
  out << "components = " << r.components << '\n';
  if (!r.connected())
    out << "diagnostic = disconnected graph: " << r.components
        << " components; spectral gap is 0 and resistances across components are infinite\n";
  out << "spectral_gap = " << num(r.spectral.value) << '\n';
  out << "zero_eigenvalues = " << r.spectral.zero_multiplicity << '\n';
  if (r.cheeger) {
    out << "cheeger = " << num(r.cheeger->value) << '\n';
    out << "cheeger_subset =";
    for (int v : r.cheeger->subset) out << ' ' << v;
    out << '\n';
  } else {
    out << "cheeger = n/a\n";
  }
  if (r.cheeger_lower_bound) out << "cheeger_lower_bound = " << num(*r.cheeger_lower_bound) << '\n';
  if (!r.edge_curvature.empty()) {
    double lo = r.edge_curvature.front().second, hi = lo, sum = 0;
    for (const auto& [e, c] : r.edge_curvature) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
      sum += c;
    }
    out << "curvature_min = " << num(lo) << '\n';
    out << "curvature_max = " << num(hi) << '\n';
    out << "curvature_mean = " << num(sum / static_cast<double>(r.edge_curvature.size())) << '\n';
  }
  for (const auto& p : r.resistances) out << "resistance." << p.u << '.' << p.v << " = " << num(p.value) << '\n';
  if (r.mad) out << "mad_input = " << num(*r.mad) << '\n';
  return out.str();
}

std::string format_curvature_csv(const DiagnosticsReport& r) {
  std::ostringstream out;
  out << "u,v,curvature\n";
  for (const auto& [e, c] : r.edge_curvature) out << e.u << ',' << e.v << ',' << num(c) << '\n';
  return out.str();
}

}  // namespace osq::metrics
