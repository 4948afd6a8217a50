#include <cmath>

#include "doctest.h"
#include "osq/error.hpp"
#include "osq/metrics.hpp"
#include "osq/theorems.hpp"
#include "osq/train.hpp"

using namespace osq;
using namespace osq::train;
using models::Arch;
using T64 = tensor::Tensor<double>;

namespace {

std::vector<graph::TaskInstance> two_radius(int n, int count, std::uint64_t seed, int k = 1) {
  graph::DatasetSpec ds;
  ds.params = {n, k, 10, 0};
  ds.count = count;
  ds.seed = seed;
  return graph::sample_dataset(ds);
}

models::ModelSpec small(Arch arch, const std::vector<graph::TaskInstance>& data, int hidden = 16) {
  return models::default_spec(arch, data.front().graph.input_dim(), 10, hidden);
}

}  // namespace

TEST_CASE("first Adam step moves every coordinate by about lr") {
  models::ModelParams<double> p;
  p["w"] = T64::parameter(Matrix<double>(2, 3, 0.5));
  tensor::Tape<double> tape;
  tensor::TapeScope<double> scope(tape);
  auto loss = tensor::sum_all(tensor::mul(p["w"], T64::constant(Matrix<double>(2, 3, {1, 2, 3, 0.1, 7, 40}))));
  tensor::backward(loss);
  AdamState<double> state;
  adam_step(p, state, 1e-3);
  for (double x : p["w"].value().data) CHECK(0.5 - x == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(state.step == 1);
}

TEST_CASE("Adam leaves parameters alone without gradient signal") {
  models::ModelParams<double> p;
  p["w"] = T64::parameter(Matrix<double>(2, 2, {1, -2, 3, 4}));
  const auto before = p["w"].value();
  AdamState<double> state;
  for (int i = 0; i < 5; ++i) {
    p["w"].node()->grad = Matrix<double>(2, 2, 0.0);
    adam_step(p, state, 1e-2);
  }
  CHECK(p["w"].value() == before);

  p["w"].node()->grad = Matrix<double>(2, 2, 3.0);
  adam_step(p, state, 0.0);
  CHECK(p["w"].value() == before);

  p["w"].node()->grad = Matrix<double>(2, 2, NAN);
  CHECK_THROWS_AS(adam_step(p, state, 1e-2), NumericalError);
}

TEST_CASE("plateau scheduler") {
  PlateauScheduler s(1e-2, 0.1, 2, 1e-6);
  CHECK(s.step(1.0) == 1e-2);
  double last = s.lr();
  for (int i = 0; i < 40; ++i) {
    const double lr = s.step(1.0);
    CHECK(lr <= last);
    last = lr;
    CHECK(lr == doctest::Approx(1e-2 * std::pow(0.1, s.reductions())).epsilon(1e-12));
  }
  CHECK(s.lr() == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(s.reductions() == 4);

  PlateauScheduler improving(1e-3, 0.5, 0, 0);
  for (int i = 0; i < 10; ++i) CHECK(improving.step(10.0 - i) == 1e-3);
}

TEST_CASE("configuration preconditions") {
  TrainConfig c;
  c.max_epochs = 0;
  CHECK_THROWS_AS(validate(c), ParameterError);
  c = {};
  c.lr = 0;
  CHECK_THROWS_AS(validate(c), ParameterError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), ParameterError);

  auto data = two_radius(3, 4, 1);
  TrainConfig ok;
  ok.max_epochs = 1;
  CHECK_THROWS_AS(run_training(small(Arch::GCN, data), data, {}, ok), ParameterError);
}

TEST_CASE("training is deterministic") {
  auto train_set = two_radius(4, 64, 3);
  auto test_set = two_radius(4, 16, 4);
  auto spec = small(Arch::GAT, train_set);
  TrainConfig c;
  c.max_epochs = 3;
  c.batch_size = 16;
  c.record_time = false;
  c.seed = 9;
  auto a = train_model<float>(spec, train_set, test_set, c);
  auto b = train_model<float>(spec, train_set, test_set, c);
  REQUIRE(a.report.epochs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.report.epochs[i].train_loss == b.report.epochs[i].train_loss);
    CHECK(a.report.epochs[i].test_acc == b.report.epochs[i].test_acc);
    CHECK(a.report.epochs[i].grad_probe == b.report.epochs[i].grad_probe);
    CHECK(a.report.epochs[i].wall_seconds == 0.0);
  }
  for (const auto& [name, t] : a.params) CHECK(t.value() == b.params.at(name).value());

  c.seed = 10;
  auto other = train_model<float>(spec, train_set, test_set, c);
  CHECK(other.report.epochs[0].train_loss != a.report.epochs[0].train_loss);
}

TEST_CASE("evaluation reference points") {
  auto data = two_radius(10, 120, 5);
  auto spec = small(Arch::GCN, data);
  Rng rng(0);
  auto params = models::init_params<double>(spec, rng);
  const double acc = evaluate_accuracy(spec, params, data);
  const double sigma = std::sqrt(0.1 * 0.9 / 1200.0);
  CHECK(std::abs(acc - 0.1) < 5 * sigma);

  Rng coin(8);
  const double random_acc = evaluate_predictions(data, [&](const graph::TaskInstance& inst) {
    std::map<int, int> out;
    for (const auto& [t, label] : inst.supervision) out[t] = static_cast<int>(coin.between(1, 10));
    return out;
  });
  CHECK(std::abs(random_acc - 0.1) < 0.03);

  CHECK(evaluate_predictions(data, [](const graph::TaskInstance& inst) { return inst.supervision; }) == 1.0);
  CHECK(evaluate_predictions(
            data, [](const graph::TaskInstance& inst) { return theorems::two_radius_exact_forward(inst).predictions; }) ==
        1.0);
}

TEST_CASE("probes") {
  auto data = two_radius(5, 4, 6);
  auto spec = small(Arch::GCN, data);
  Rng rng(1);
  auto params = models::init_params<double>(spec, rng);
  CHECK(gradient_norm_probe(spec, params, data, 4) > 0.0);
  for (auto& [name, t] : params) t.mutable_value() = Matrix<double>(t.rows(), t.cols(), 0.0);
  CHECK(gradient_norm_probe(spec, params, data, 4) == 0.0);
  CHECK_THROWS_AS(gradient_norm_probe(spec, params, data, 0), ParameterError);

  Rng frng(2);
  Matrix<double> h(8, 5);
  for (auto& x : h.data) x = frng.uniform(-1, 1);
  std::vector<int> rows{0, 2, 3, 7};
  Matrix<double> h3 = h;
  for (auto& x : h3.data) x *= 3;
  CHECK(metrics::mad_energy(h, rows) == doctest::Approx(metrics::mad_energy(h3, rows)).epsilon(1e-12));
}

TEST_CASE("epochs to accuracy") {
  TrainReport r;
  for (int e = 1; e <= 60; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.evaluated = true;
    rec.test_acc = std::min(1.0, e / 40.0);
    r.epochs.push_back(rec);
  }
  CHECK(epochs_to_accuracy(r, 0.92) == 37);
  CHECK_FALSE(epochs_to_accuracy(r, 1.01).has_value());
  CHECK_THROWS_AS(epochs_to_accuracy(TrainReport{}, 0.5), ParameterError);
}

TEST_CASE("set transformer solves a small two-radius task") {
  auto train_set = two_radius(10, 1000, 11);
  auto test_set = two_radius(10, 200, 12);
  auto spec = small(Arch::SetTransformer, train_set, 128);
  TrainConfig c;
  c.max_epochs = 12;
  c.eval_every = 4;
  c.probe_samples = 2;
  auto res = run_training(spec, train_set, test_set, c);
  CHECK(res.epochs.back().test_acc == 1.0);
  CHECK(epochs_to_accuracy(res, 1.0).has_value());
}
