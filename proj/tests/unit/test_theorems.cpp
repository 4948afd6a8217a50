#include <cmath>

#include "doctest.h"
#include "osq/error.hpp"
#include "osq/theorems.hpp"

using namespace osq;
using namespace osq::theorems;
using graph::Role;

TEST_CASE("max-propagation on a ring of radius 3") {
  Rng rng(4);
  auto inst = graph::make_ring_transfer(3, 10, rng);
  const int s = inst.graph.nodes_with_role(Role::Source).front();
  const int t = inst.graph.nodes_with_role(Role::Target).front();
  inst.graph.attrs[s].label = 7;
  auto h3 = ring_exact_forward(inst.graph, 3);
  CHECK(h3(t, 0) == 1.0);
  CHECK(h3(t, 1) == 7.0);
  auto h2 = ring_exact_forward(inst.graph, 2);
  CHECK(h2(t, 0) == 0.0);
  CHECK(h2(t, 1) == 0.0);

  auto h0 = ring_exact_forward(inst.graph, 0);
  for (int v = 0; v < inst.graph.node_count(); ++v) CHECK(h0(v, 0) == (v == s ? 1.0 : 0.0));
}

TEST_CASE("max-propagation needs exactly one source") {
  Rng rng(1);
  auto inst = graph::make_ring_transfer(4, 10, rng);
  auto two = inst.graph;
  two.attrs[2].role = Role::Source;
  CHECK_THROWS_AS(ring_exact_forward(two, 1), ParameterError);
  auto none = inst.graph;
  for (auto& a : none.attrs)
    if (a.role == Role::Source) a.role = Role::Central;
  CHECK_THROWS_AS(ring_exact_forward(none, 1), ParameterError);
}

TEST_CASE("max-propagation flags follow BFS distance on random graphs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto inst = random_transfer_instance(30, 0.05, 10, rng);
    const auto& g = inst.graph;
    REQUIRE(graph::is_connected(g));
    const int s = g.nodes_with_role(Role::Source).front();
    const int t = g.nodes_with_role(Role::Target).front();
    const auto dist = graph::bfs_distances(g.adjacency(), s);
    for (int k = 0; k <= dist[t]; ++k) {
      auto h = ring_exact_forward(g, k);
      for (int v = 0; v < g.node_count(); ++v) CHECK(h(v, 0) == (dist[v] <= k ? 1.0 : 0.0));
    }
    CHECK(ring_exact_forward(g, dist[t])(t, 1) == inst.supervision.at(t));
  }
}

TEST_CASE("central summary decodes a hand-built instance") {
  Rng rng(2);
  auto inst = graph::make_two_radius(3, 1, 10, rng, false);
  auto& g = inst.graph;
  const auto sources = g.nodes_with_role(Role::Source);
  const int labels[] = {2, 2, 9};
  for (int s : sources) g.attrs[s].label = labels[g.attrs[s].iota - 1];
  inst.supervision = graph::derive_supervision(g);
  const auto trace = two_radius_exact_forward(inst);
  for (int t : g.nodes_with_role(Role::Target))
    if (g.attrs[t].iota == 2) CHECK(trace.predictions.at(t) == 2);
  CHECK(accuracy(trace, inst) == 1.0);

  const auto m = central_summary(g, g.nodes_with_role(Role::Central).front());
  CHECK(m(1, 2) == 1.0);
  CHECK(m(3, 9) == 1.0);
  CHECK(m(2, 10) == 1.0);
}

TEST_CASE("source label equal to the target constant still decodes") {
  Rng rng(3);
  auto inst = graph::make_two_radius(4, 2, 10, rng, false);
  for (auto& a : inst.graph.attrs)
    if (a.role == Role::Source) a.label = 10;
  inst.supervision = graph::derive_supervision(inst.graph);
  CHECK(accuracy(two_radius_exact_forward(inst), inst) == 1.0);
}

TEST_CASE("exact construction solves random instances") {
  for (int i = 0; i < 100; ++i) {
    Rng rng = Rng::derive(50, static_cast<std::uint64_t>(i));
    auto inst = graph::make_two_radius(50, 5, 10, rng, false);
    CHECK(accuracy(two_radius_exact_forward(inst), inst) == 1.0);
  }
}

TEST_CASE("dimension lower bound") {
  CHECK(dimension_lower_bound(8, 32).value == 0.25);
  CHECK(dimension_lower_bound(1024, 32).value == 144.0);
  CHECK(dimension_lower_bound(2, 7).value == 0.0);
  CHECK_FALSE(dimension_lower_bound(2, 7).informative);
  CHECK(dimension_lower_bound(3, 1).informative);
  CHECK_THROWS_AS(dimension_lower_bound(8, 0), ParameterError);

  // The exact summary always has room for the bound.
  for (int n = 3; n <= 64; ++n) {
    const double summary_features = (2.0 * n + 2) * (n + 1);
    CHECK(summary_features >= dimension_lower_bound(n, 32).value);
  }
}

TEST_CASE("permutation oracle") {
  const auto exact = permutation_injectivity_oracle(two_radius_exact_forward, 4, 2);
  CHECK(exact.permutations == 24);
  CHECK(exact.injective);
  CHECK(exact.all_correct);
  CHECK(exact.necessary_condition);

  const auto three = permutation_injectivity_oracle(two_radius_exact_forward, 3, 1);
  CHECK(three.injective);
  CHECK(std::log2(6.0) == doctest::Approx(2.585).epsilon(1e-3));

  const auto lossy = permutation_injectivity_oracle(lossy_sum_forward, 4, 2);
  CHECK_FALSE(lossy.injective);
  CHECK(lossy.colliding_pairs == 24 * 23 / 2);
  CHECK(lossy.min_accuracy < 1.0);
  CHECK(lossy.necessary_condition);

  const auto tolerant = permutation_injectivity_oracle(two_radius_exact_forward, 4, 2, 1e-9);
  CHECK(tolerant.injective);

  CHECK_THROWS_AS(permutation_injectivity_oracle(two_radius_exact_forward, 8, 2), SizeError);
}

TEST_CASE("cheeger and resistance checks") {
  auto c = cheeger_bound_check(3, 2);
  CHECK(c.holds);
  CHECK(c.exact >= 0.25);
  auto one = cheeger_bound_check(4, 1);
  CHECK(one.exact == 1.0);
  CHECK(one.bound == 0.125);
  CHECK(cheeger_bound_check(5, 3).holds);
  CHECK_THROWS_AS(cheeger_bound_check(10, 5), SizeError);
  CHECK_THROWS_AS(cheeger_bound_check(3, 7), ParameterError);

  CHECK(resistance_identity_check(100, 1).measured == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(resistance_identity_check(100, 1).holds);
  CHECK(resistance_identity_check(5, 4).measured == doctest::Approx(0.5).epsilon(1e-12));
  auto ring = ring_resistance_check(6);
  CHECK(ring.holds);
  CHECK(ring.measured == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("quick verification passes") {
  for (const auto& check : run_verification(true)) {
    CAPTURE(check.name);
    CAPTURE(check.detail);
    CHECK(check.passed);
  }
}
