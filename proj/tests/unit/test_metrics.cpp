#include <algorithm>
#include <bit>
#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "osq/error.hpp"
#include "osq/metrics.hpp"

using namespace osq;
using namespace osq::graph;
using namespace osq::metrics;

namespace {

TaskGraph plain_graph(int nodes, std::vector<Edge> edges) {
  TaskGraph g;
  g.family = Family::RingTransfer;  // family is irrelevant to the metrics
  g.params = {1, 0, 1, 1};
  g.attrs.assign(static_cast<std::size_t>(nodes), NodeAttr{Role::Central, 0, 0});
  for (auto& e : edges)
    if (e.u > e.v) std::swap(e.u, e.v);
  std::sort(edges.begin(), edges.end());
  g.edges = std::move(edges);
  return g;
}

TaskGraph path(int nodes) {
  std::vector<Edge> e;
  for (int v = 0; v + 1 < nodes; ++v) e.push_back({v, v + 1});
  return plain_graph(nodes, e);
}

TaskGraph complete(int nodes) {
  std::vector<Edge> e;
  for (int u = 0; u < nodes; ++u)
    for (int v = u + 1; v < nodes; ++v) e.push_back({u, v});
  return plain_graph(nodes, e);
}

TaskGraph gnk(int n, int k, std::uint64_t seed = 0) {
  Rng rng(seed);
  return make_two_radius(n, k, 10, rng, false).graph;
}

TaskGraph random_connected(int nodes, double p, Rng& rng) {
  std::vector<Edge> e;
  for (int v = 1; v < nodes; ++v) e.push_back({static_cast<int>(rng.below(v)), v});  // spanning tree
  for (int u = 0; u < nodes; ++u)
    for (int v = u + 1; v < nodes; ++v)
      if (rng.uniform() < p && std::find(e.begin(), e.end(), Edge{u, v}) == e.end()) e.push_back({u, v});
  return plain_graph(nodes, e);
}

Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j);
  return out;
}

// Independent oracle: plain enumeration of every subset, no incremental update.
double brute_force_cheeger(const TaskGraph& g) {
  const int n = g.node_count();
  double best = 1e300;
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    const int size = std::popcount(mask);
    if (size > n / 2) continue;
    int cut = 0;
    for (const auto& e : g.edges) cut += ((mask >> e.u) & 1u) != ((mask >> e.v) & 1u);
    best = std::min(best, static_cast<double>(cut) / size);
  }
  return best;
}

}  // namespace

TEST_CASE("laplacian definitions") {
  const auto l = laplacian(path(3), false);
  CHECK(l == DenseMatrix(3, 3, {1, -1, 0, -1, 2, -1, 0, -1, 1}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(l(i, 0) + l(i, 1) + l(i, 2) == 0.0);

  const auto eig = symmetric_eigen(laplacian(gnk(4, 2), false));
  CHECK(std::abs(eig.values[0]) < 1e-12);
  const double c = eig.vectors(0, 0);
  for (std::size_t i = 0; i < eig.vectors.rows; ++i) CHECK(eig.vectors(i, 0) == doctest::Approx(c).epsilon(1e-9));

  auto isolated = plain_graph(3, {{0, 1}});
  CHECK_THROWS_AS(laplacian(isolated, true), ParameterError);
}

TEST_CASE("K4 normalized spectrum matches an independent eigen-solver") {
  const auto l = laplacian(complete(4), true);
  const auto ours = symmetric_eigen(l);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(to_eigen(l));
  for (int i = 0; i < 4; ++i) CHECK(ours.values[i] == doctest::Approx(oracle.eigenvalues()(i)).epsilon(1e-12));
  CHECK(std::abs(ours.values[0]) < 1e-12);
  for (int i = 1; i < 4; ++i) CHECK(ours.values[i] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("spectral gap") {
  CHECK(spectral_gap(complete(4)).value == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(spectral_gap(path(2)).value == doctest::Approx(2.0).epsilon(1e-12));
  // G_{3,2} is the complete bipartite graph K_{2,6}: normalized spectrum {0, 1 (x6), 2}.
  const auto g32 = spectral_gap(gnk(3, 2));
  CHECK(g32.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g32.zero_multiplicity == 1);

  const auto split = plain_graph(6, {{0, 1}, {1, 2}, {3, 4}, {4, 5}});
  const auto gap = spectral_gap(split);
  CHECK(gap.value == 0.0);
  CHECK(gap.zero_multiplicity == 2);
  CHECK(gap.disconnected());

  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_connected(12, 0.2, rng);
    const auto l = laplacian(g, true);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(to_eigen(l));
    CHECK(spectral_gap(g).value == doctest::Approx(oracle.eigenvalues()(1)).epsilon(1e-9));
  }
}

TEST_CASE("effective resistance") {
  SUBCASE("single edge is one unit resistor") {
    CHECK(effective_resistance(path(2), 0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("Two-Radius source to target is 2/k") {
    for (int k : {1, 4}) {
      Rng rng(2);
      const auto inst = make_two_radius(5, k, 10, rng, false);
      const ResistanceOracle r(inst.graph);
      for (const auto& [t, label] : inst.supervision) {
        (void)label;
        for (int s : inst.graph.nodes_with_role(Role::Source)) {
          if (inst.graph.attrs[s].iota != inst.graph.attrs[t].iota) continue;
          CHECK(std::abs(r(s, t) - 2.0 / k) < 1e-9);
          CHECK(std::abs(r(t, s) - r(s, t)) < 1e-12);
        }
      }
    }
  }
  SUBCASE("agrees with an independent pseudoinverse and obeys the triangle inequality") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
      const auto g = random_connected(10, 0.25, rng);
      const Eigen::MatrixXd pinv = to_eigen(laplacian(g, false)).completeOrthogonalDecomposition().pseudoInverse();
      const ResistanceOracle r(g);
      for (int u = 0; u < 10; ++u) {
        for (int v = u + 1; v < 10; ++v) {
          const double want = pinv(u, u) + pinv(v, v) - 2 * pinv(u, v);
          CHECK(std::abs(r(u, v) - want) < 1e-9);
          CHECK(r(u, v) >= 0.0);
          for (int w = 0; w < 10; ++w)
            if (w != u && w != v) CHECK(r(u, v) <= r(u, w) + r(w, v) + 1e-9);
        }
      }
    }
  }
  SUBCASE("disconnected pair is an error") {
    const auto split = plain_graph(4, {{0, 1}, {2, 3}});
    CHECK_THROWS_AS(effective_resistance(split, 0, 3), NumericalError);
    CHECK_THROWS_AS(effective_resistance(split, 1, 1), ParameterError);
  }
}

TEST_CASE("disjoint-paths resistance") {
  CHECK(effective_resistance_disjoint_paths(std::vector<int>{2}) == 2.0);
  CHECK(effective_resistance_disjoint_paths(std::vector<int>{1}) == 1.0);
  CHECK(effective_resistance_disjoint_paths(std::vector<int>{4, 4}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(effective_resistance_disjoint_paths(std::vector<int>{}), ParameterError);
  CHECK_THROWS_AS(effective_resistance_disjoint_paths(std::vector<int>{0, 2}), ParameterError);

  Rng rng(0);
  for (int r = 2; r <= 8; ++r) {
    const auto ring = make_ring_transfer(r, 10, rng);
    const int s = ring.graph.nodes_with_role(Role::Source)[0];
    const int t = ring.graph.nodes_with_role(Role::Target)[0];
    const std::vector<int> arcs{r, r};
    CHECK(std::abs(effective_resistance(ring.graph, s, t) - effective_resistance_disjoint_paths(arcs)) < 1e-9);
  }
}

TEST_CASE("exact Cheeger constant") {
  for (int n = 2; n <= 6; ++n) CHECK(cheeger_exact(gnk(n, 1)).value == 1.0);

  const auto p3 = cheeger_exact(path(3));
  CHECK(p3.value == 1.0);
  REQUIRE(p3.subset.size() == 1);
  CHECK((p3.subset[0] == 0 || p3.subset[0] == 2));

  const auto k4 = cheeger_exact(complete(4));
  CHECK(k4.value == 2.0);

  Rng rng(8);
  for (int trial = 0; trial < 15; ++trial) {
    const auto g = random_connected(4 + trial % 8, 0.3, rng);
    const auto got = cheeger_exact(g);
    CHECK(got.value == brute_force_cheeger(g));
    // The reported subset attains the value.
    std::uint32_t mask = 0;
    for (int v : got.subset) mask |= 1u << v;
    int cut = 0;
    for (const auto& e : g.edges) cut += ((mask >> e.u) & 1u) != ((mask >> e.v) & 1u);
    CHECK(static_cast<double>(cut) / static_cast<double>(got.subset.size()) == got.value);
  }

  CHECK_THROWS_AS(cheeger_exact(complete(25)), SizeError);
}

TEST_CASE("twin-class Cheeger matches subset enumeration") {
  for (auto [n, k] : {std::pair{2, 1}, {3, 2}, {4, 2}, {5, 3}, {4, 8}, {7, 1}}) {
    const auto g = gnk(n, k);
    const auto by_class = cheeger_by_classes(g);
    REQUIRE(by_class);
    CHECK(by_class->value == cheeger_exact(g).value);
  }
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_connected(6 + trial % 5, 0.35, rng);
    CHECK(cheeger_by_classes(g)->value == brute_force_cheeger(g));
  }
  // Beyond the subset cap: G_{20,1} is a star on 41 nodes.
  const auto big = gnk(20, 1);
  REQUIRE(cheeger_feasible(big));
  const auto r = cheeger_exact(big);
  CHECK(r.value == 1.0);
  CHECK(r.subset.size() <= 20);
  CHECK(cheeger_exact(gnk(30, 4)).value >= 0.5);
  CHECK_FALSE(cheeger_feasible(complete(25)));
}

TEST_CASE("Cheeger lower bound k/8") {
  CHECK(cheeger_lower_bound_gnk(4, 8) == 1.0);
  CHECK(cheeger_lower_bound_gnk(3, 1) == 0.125);
  CHECK(cheeger_exact(gnk(3, 1)).value >= 0.125);
  CHECK_THROWS_AS(cheeger_lower_bound_gnk(1, 3), ParameterError);
  for (auto [n, k] : std::vector<std::pair<int, int>>{{3, 1}, {3, 2}, {4, 2}, {5, 3}, {4, 8}, {2, 4}})
    CHECK(cheeger_exact(gnk(n, k)).value >= cheeger_lower_bound_gnk(n, k));
}

TEST_CASE("balanced Forman curvature") {
  for (int n : {2, 10, 50}) {
    const auto g = gnk(n, 1);
    for (const auto& e : g.edges) CHECK(balanced_forman_curvature(g, e) == 0.0);
  }
  const auto p5 = path(5);
  CHECK(balanced_forman_curvature(p5, {1, 2}) == doctest::Approx(0.0));
  CHECK(balanced_forman_curvature(p5, {0, 1}) == 0.0);
  CHECK(balanced_forman_curvature(complete(3), {0, 1}) == doctest::Approx(1.5));
  // 4-cycle, hand evaluation: degree terms 0, one square on each side, gamma_max 1.
  const auto c4 = plain_graph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});
  CHECK(balanced_forman_curvature(c4, {0, 1}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(balanced_forman_curvature(p5, {0, 2}), ParameterError);

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_connected(12, 0.15, rng);
    const auto deg = g.degrees();
    for (const auto& e : g.edges)
      if (std::min(deg[e.u], deg[e.v]) == 1) CHECK(balanced_forman_curvature(g, e) == 0.0);
  }
}

TEST_CASE("MAD energy") {
  Matrix<double> same(3, 2, {1, 2, 1, 2, 1, 2});
  const std::vector<int> rows{0, 1, 2};
  CHECK(mad_energy(same, std::span<const int>(rows)) == 0.0);

  Matrix<double> ortho(2, 2, {1, 0, 0, 1});
  const std::vector<int> two{0, 1};
  CHECK(mad_energy(ortho, std::span<const int>(two)) == doctest::Approx(std::sqrt(2.0)));

  Rng rng(1);
  Matrix<double> x(5, 4);
  for (auto& v : x.data) v = rng.uniform(-1, 1);
  const std::vector<int> some{0, 2, 3, 4};
  const double base = mad_energy(x, std::span<const int>(some));
  for (double c : {0.5, 3.0, 100.0}) {
    auto y = x;
    for (auto& v : y.data) v *= c;
    CHECK(mad_energy(y, std::span<const int>(some)) == doctest::Approx(base).epsilon(1e-12));
  }

  Matrix<double> zeros(2, 3, 0.0);
  CHECK_THROWS_AS(mad_energy(zeros, std::span<const int>(two)), NumericalError);
  const std::vector<int> one{0};
  CHECK_THROWS_AS(mad_energy(ortho, std::span<const int>(one)), ParameterError);
}

TEST_CASE("diagnostics report") {
  Rng rng(0);
  const auto inst = make_two_radius(5, 1, 10, rng, false);
  const auto rep = diagnose(inst);
  CHECK(rep.connected());
  REQUIRE(rep.cheeger.has_value());
  CHECK(rep.cheeger->value == 1.0);
  CHECK(*rep.cheeger_lower_bound == 0.125);
  CHECK(rep.resistances.size() == 5);
  for (const auto& p : rep.resistances) CHECK(std::abs(p.value - 2.0) < 1e-9);
  const auto text = format_report(rep);
  CHECK(text.find("cheeger = 1\n") != std::string::npos);
  CHECK(text.find("curvature_max = 0\n") != std::string::npos);
  CHECK(format_curvature_csv(rep).rfind("u,v,curvature\n", 0) == 0);

  auto split = plain_graph(4, {{0, 1}, {2, 3}});
  const auto bad = diagnose(TaskInstance{split, {}});
  CHECK_FALSE(bad.connected());
  CHECK(format_report(bad).find("diagnostic = disconnected graph") != std::string::npos);
}
