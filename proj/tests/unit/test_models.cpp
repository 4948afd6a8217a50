#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "osq/error.hpp"
#include "osq/models.hpp"

using namespace osq;
using namespace osq::graph;
using namespace osq::models;
using tensor::Tensor;

namespace {

const Arch kAllArchs[] = {Arch::GCN, Arch::GIN, Arch::GAT, Arch::SAGE, Arch::MLP, Arch::SetTransformer};
const Arch kMessagePassing[] = {Arch::GCN, Arch::GIN, Arch::GAT, Arch::SAGE};

TaskInstance two_radius(int n, int k, std::uint64_t seed, CentralIds ids = CentralIds::Distinct) {
  Rng rng(seed);
  return make_two_radius(n, k, 10, rng, false, ids);
}

// Relabels node v as perm[v].
TaskInstance permute(const TaskInstance& inst, const std::vector<int>& perm) {
  TaskInstance out = inst;
  for (std::size_t v = 0; v < perm.size(); ++v) out.graph.attrs[static_cast<std::size_t>(perm[v])] = inst.graph.attrs[v];
  out.graph.edges.clear();
  for (auto e : inst.graph.edges) {
    int a = perm[static_cast<std::size_t>(e.u)], b = perm[static_cast<std::size_t>(e.v)];
    out.graph.edges.push_back({std::min(a, b), std::max(a, b)});
  }
  std::sort(out.graph.edges.begin(), out.graph.edges.end());
  out.supervision.clear();
  for (auto [t, l] : inst.supervision) out.supervision[perm[static_cast<std::size_t>(t)]] = l;
  return out;
}

ModelSpec small_spec(Arch arch, const TaskInstance& inst, int hidden = 8) {
  auto spec = default_spec(arch, inst.graph.input_dim(), inst.graph.params.L, hidden);
  spec.dropout = 0;
  return spec;
}

}  // namespace

TEST_CASE("parameter shapes and determinism") {
  auto spec = default_spec(Arch::GCN, 25, 10, 128);
  Rng a(4), b(4);
  auto p = init_params<float>(spec, a);
  auto q = init_params<float>(spec, b);
  CHECK(p.at("layer0.lin.weight").rows() == 25);
  CHECK(p.at("layer0.lin.weight").cols() == 128);
  REQUIRE(p.size() == q.size());
  for (const auto& [name, t] : p) CHECK(t.value() == q.at(name).value());
  const double bound = std::sqrt(6.0 / (25 + 128));
  for (float x : p.at("layer0.lin.weight").value().data) CHECK(std::abs(x) <= bound);
  for (float x : p.at("layer0.lin.bias").value().data) CHECK(x == 0.0f);

  auto gat = default_spec(Arch::GAT, 25, 10, 128);
  Rng c(1);
  auto g = init_params<float>(gat, c);
  CHECK(g.at("layer0.att_src0").rows() == 64);
  CHECK(g.at("layer0.att_dst1").rows() == 64);

  auto bad = gat;
  bad.heads = 3;
  CHECK_THROWS_AS(validate(bad), ParameterError);
  auto zero = spec;
  zero.layers = 0;
  CHECK_THROWS_AS(validate(zero), ParameterError);
  CHECK(default_spec(Arch::SetTransformer, 5, 3).layers == 2);
}

TEST_CASE("every architecture produces [V x L] logits") {
  auto inst = two_radius(10, 1, 3);
  auto batch = make_batch<float>(inst);
  for (Arch arch : kAllArchs) {
    CAPTURE(arch_name(arch));
    auto spec = default_spec(arch, inst.graph.input_dim(), 10, 16);
    Rng rng(0);
    auto params = init_params<float>(spec, rng);
    auto out = forward(spec, params, batch);
    CHECK(out.logits.rows() == 21);
    CHECK(out.logits.cols() == 10);
    Rng drop(1);
    auto train = forward(spec, params, batch, true, &drop);
    CHECK(train.logits.rows() == 21);
    auto wrong = spec;
    wrong.in_dim += 1;
    CHECK_THROWS_AS(forward(wrong, params, batch), DimensionError);
  }
}

TEST_CASE("edge-free architectures ignore the edge set") {
  auto inst = two_radius(6, 2, 9);
  auto rewired = inst;
  rewired.graph.edges = {{0, 1}, {2, 5}, {3, 12}};
  for (Arch arch : {Arch::MLP, Arch::SetTransformer}) {
    auto spec = small_spec(arch, inst);
    Rng rng(2);
    auto params = init_params<double>(spec, rng);
    auto a = forward(spec, params, make_batch<double>(inst)).logits.value();
    auto b = forward(spec, params, make_batch<double>(rewired)).logits.value();
    CHECK(a == b);
  }
}

TEST_CASE("forward is permutation equivariant") {
  auto inst = two_radius(7, 3, 21);
  std::vector<int> perm(static_cast<std::size_t>(inst.graph.node_count()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng(8);
  prng.shuffle(std::span<int>(perm));
  auto moved = permute(inst, perm);
  for (Arch arch : kAllArchs) {
    CAPTURE(arch_name(arch));
    auto spec = small_spec(arch, inst, 12);
    spec.vn = arch == Arch::GCN ? std::optional<VNConfig>(VNConfig{2, VNAggregation::Sum}) : std::nullopt;
    Rng rng(5);
    auto params = init_params<double>(spec, rng);
    auto a = forward(spec, params, make_batch<double>(inst)).logits.value();
    auto b = forward(spec, params, make_batch<double>(moved)).logits.value();
    double worst = 0;
    for (std::size_t v = 0; v < perm.size(); ++v)
      for (std::size_t c = 0; c < a.cols; ++c)
        worst = std::max(worst, std::abs(a(v, c) - b(static_cast<std::size_t>(perm[v]), c)));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("central nodes stay bit-identical in every message-passing layer") {
  auto inst = two_radius(6, 4, 17, CentralIds::Shared);
  const auto centrals = inst.graph.nodes_with_role(Role::Central);
  auto batch = make_batch<float>(inst);
  for (Arch arch : kMessagePassing) {
    for (bool vn : {false, true}) {
      CAPTURE(arch_name(arch));
      CAPTURE(vn);
      auto spec = default_spec(arch, inst.graph.input_dim(), 10, 32);
      if (vn) spec.vn = VNConfig{2, VNAggregation::Mean};
      Rng rng(3);
      auto params = init_params<float>(spec, rng);
      auto out = forward(spec, params, batch);
      for (const auto& layer : out.layer_outputs) {
        const auto& h = layer.value();
        for (int c : centrals) {
          auto first = h.row(static_cast<std::size_t>(centrals[0]));
          auto row = h.row(static_cast<std::size_t>(c));
          CHECK(std::equal(first.begin(), first.end(), row.begin()));
        }
      }
    }
  }
}

TEST_CASE("GAT attention weights sum to one per node") {
  auto inst = two_radius(5, 2, 1);
  auto batch = make_batch<double>(inst);
  auto spec = small_spec(Arch::GAT, inst, 8);
  Rng rng(9);
  auto params = init_params<double>(spec, rng);
  std::vector<Tensor<double>> att;
  gat_layer(Tensor<double>::constant(batch.features), batch, params, "layer0", spec.heads, &att);
  REQUIRE(att.size() == 2);
  for (const auto& a : att) {
    std::vector<double> sums(static_cast<std::size_t>(batch.nodes), 0.0);
    for (std::size_t e = 0; e < batch.loop_dst.size(); ++e)
      sums[static_cast<std::size_t>(batch.loop_dst[e])] += a.value().data[e];
    for (double s : sums) CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("GCN on an edgeless graph transforms rows independently") {
  auto inst = two_radius(3, 1, 4);
  inst.graph.edges.clear();
  auto batch = make_batch<double>(inst);
  auto spec = small_spec(Arch::GCN, inst);
  Rng rng(6);
  auto params = init_params<double>(spec, rng);
  auto out = gcn_layer(Tensor<double>::constant(batch.features), batch, params, "layer0").value();
  const auto& w = params.at("layer0.lin.weight").value();
  for (std::size_t v = 0; v < out.rows; ++v)
    for (std::size_t j = 0; j < out.cols; ++j) {
      double expect = 0;
      for (std::size_t i = 0; i < w.rows; ++i) expect += batch.features(v, i) * w(i, j);
      CHECK(out(v, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("GIN with eps = 0 sees the neighbor sum") {
  TaskInstance pair;
  pair.graph.family = Family::RingTransfer;
  pair.graph.params = {1, 0, 3, 1};
  pair.graph.attrs = {{Role::Source, 1, 2}, {Role::Target, 2, 3}};
  pair.graph.edges = {{0, 1}};
  auto batch = make_batch<double>(pair);
  auto spec = small_spec(Arch::GIN, pair);
  Rng rng(7);
  auto params = init_params<double>(spec, rng);
  Matrix<double> h1(2, 3, {1.0, 2.0, 0.5, 0.0, 0.0, 1.5});
  Matrix<double> h2(2, 3, {0.0, 1.0, 2.0, 1.0, 1.0, 0.0});
  // Same row sums, so node 0 (and node 1) must produce identical outputs.
  auto spec3 = spec;
  spec3.in_dim = 3;
  Rng rng3(7);
  auto p3 = init_params<double>(spec3, rng3);
  auto a = gin_layer(Tensor<double>::constant(h1), batch, p3, "layer0").value();
  auto b = gin_layer(Tensor<double>::constant(h2), batch, p3, "layer0").value();
  for (std::size_t j = 0; j < a.cols; ++j) {
    CHECK(a(0, j) == doctest::Approx(b(0, j)).epsilon(1e-12));
    CHECK(a(0, j) == doctest::Approx(a(1, j)).epsilon(1e-12));
  }
}

TEST_CASE("virtual node step") {
  auto inst = two_radius(4, 1, 2);
  auto batch = make_batch<double>(inst);
  const std::size_t H = 6, V = static_cast<std::size_t>(batch.nodes);
  auto spec = small_spec(Arch::GCN, inst, static_cast<int>(H));
  spec.vn = VNConfig{2, VNAggregation::Mean};
  Rng rng(1);
  auto params = init_params<double>(spec, rng);

  std::vector<Tensor<double>> states(2, Tensor<double>::constant(Matrix<double>(1, H, 0.0)));
  auto zero = Tensor<double>::constant(Matrix<double>(V, H, 0.0));
  auto same = virtual_node_step(zero, states, batch, params, "layer0", VNAggregation::Mean, Activation::ReLU);
  CHECK(same.value() == zero.value());

  Matrix<double> eye(H, H, 0.0);
  for (std::size_t i = 0; i < H; ++i) eye(i, i) = 1.0;
  for (int j = 0; j < 2; ++j)
    for (const char* fc : {".fc1", ".fc2"})
      params["vn" + std::to_string(j) + ".layer0" + fc + ".weight"] = Tensor<double>::constant(eye);
  auto constant = Tensor<double>::constant(Matrix<double>(V, H, 0.25));
  std::vector<Tensor<double>> one_state(1, Tensor<double>::constant(Matrix<double>(1, H, 0.0)));
  auto mean = virtual_node_step(constant, one_state, batch, params, "layer0", VNAggregation::Mean, Activation::ReLU);
  one_state.assign(1, Tensor<double>::constant(Matrix<double>(1, H, 0.0)));
  auto sum = virtual_node_step(constant, one_state, batch, params, "layer0", VNAggregation::Sum, Activation::ReLU);
  std::vector<Tensor<double>> two_states(2, Tensor<double>::constant(Matrix<double>(1, H, 0.0)));
  auto twice = virtual_node_step(constant, two_states, batch, params, "layer0", VNAggregation::Mean, Activation::ReLU);
  for (std::size_t i = 0; i < V * H; ++i) {
    const double dm = mean.value().data[i] - 0.25;
    const double ds = sum.value().data[i] - 0.25;
    CHECK(ds == doctest::Approx(static_cast<double>(V) * dm).epsilon(1e-12));
    CHECK(twice.value().data[i] - 0.25 == doctest::Approx(2 * dm).epsilon(1e-12));
  }
}

TEST_CASE("checkpoint round trip") {
  auto spec = default_spec(Arch::GAT, 9, 4, 8);
  Rng rng(12);
  auto params = init_params<float>(spec, rng);
  const auto path = (std::filesystem::temp_directory_path() / "osq_test_ckpt.bin").string();
  save_checkpoint(params, path);
  auto loaded = load_checkpoint<float>(path);
  REQUIRE(loaded.size() == params.size());
  for (const auto& [name, t] : params) CHECK(loaded.at(name).value() == t.value());
  CHECK_THROWS_AS(load_checkpoint<double>(path), ValidationError);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".manifest");
  CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
}

TEST_CASE("full models pass gradcheck") {
  auto inst = two_radius(3, 2, 5);
  for (Arch arch : kAllArchs) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      CAPTURE(arch_name(arch));
      CAPTURE(seed);
      auto spec = default_spec(arch, inst.graph.input_dim(), 10, 8);
      if (arch == Arch::GCN && seed == 2) spec.vn = VNConfig{2, VNAggregation::Sum};
      auto rep = gradcheck_model(spec, inst, seed);
      CHECK(rep.passed);
      CHECK(rep.max_rel_error < 1e-5);
      CHECK(rep.checked > 100);
    }
  }
}
