#include <cmath>
#include <vector>

#include "doctest.h"
#include "osq/error.hpp"
#include "osq/tensor.hpp"

using namespace osq;
using namespace osq::tensor;
using T64 = Tensor<double>;

namespace {

Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  Matrix<double> m(r, c);
  for (auto& x : m.data) x = rng.uniform(lo, hi);
  return m;
}

// sum(w ⊙ f(x)) with fixed random weights so every output coordinate matters.
template <typename F>
FiniteDiffReport check_weighted(F f, std::size_t r, std::size_t c, std::uint64_t seed, double tol = 1e-5) {
  Rng rng(seed);
  auto point = random_matrix(r, c, rng);
  auto probe = f(T64::constant(point));
  auto w = T64::constant(random_matrix(probe.rows(), probe.cols(), rng));
  return finite_diff_check([&](const T64& x) { return sum_all(mul(f(x), w)); }, point, tol);
}

}  // namespace

TEST_CASE("segment_sum, leaky_relu and layer_norm on small inputs") {
  auto a = T64::constant(Matrix<double>(3, 2, {1, 2, 3, 4, 5, 6}));
  std::vector<int> idx{0, 0, 1};
  auto s = segment_sum(a, idx, 2);
  CHECK(s.value() == Matrix<double>(2, 2, {4, 6, 5, 6}));

  auto m = segment_mean(a, idx, 3);
  CHECK(m.value() == Matrix<double>(3, 2, {2, 3, 5, 6, 0, 0}));

  auto l = leaky_relu(T64::constant(Matrix<double>(1, 2, {-1, 2})), 0.01);
  CHECK(l.value().data[0] == doctest::Approx(-0.01));
  CHECK(l.value().data[1] == 2.0);

  auto ln = layer_norm(T64::constant(Matrix<double>(2, 3, {4, 4, 4, -1, -1, -1})));
  for (double x : ln.value().data) CHECK(x == 0.0);
}

TEST_CASE("propagate equals gather, scale and segment_sum") {
  Rng rng(21);
  auto a = T64::constant(random_matrix(4, 3, rng));
  auto w = T64::constant(random_matrix(5, 1, rng));
  std::vector<int> src{0, 1, 3, 3, 2};
  std::vector<int> dst{1, 1, 0, 2, 2};
  auto fused = propagate(a, src, dst, w, 3).value();
  auto composed = segment_sum(mul(gather_rows(a, src), w), dst, 3).value();
  for (std::size_t i = 0; i < fused.size(); ++i) CHECK(fused.data[i] == doctest::Approx(composed.data[i]).epsilon(1e-14));
  std::vector<int> bad{0, 1, 4, 3, 2};
  CHECK_THROWS_AS(propagate(a, bad, dst, w, 3), DimensionError);
  CHECK_THROWS_AS(propagate(a, src, dst, T64::constant(Matrix<double>(4, 1)), 3), DimensionError);
}

TEST_CASE("affine layer norm matches the composed form") {
  Rng rng(23);
  auto x = T64::constant(random_matrix(5, 6, rng));
  auto g = T64::constant(random_matrix(1, 6, rng));
  auto b = T64::constant(random_matrix(1, 6, rng));
  auto fused = layer_norm(x, g, b).value();
  auto composed = add(mul(layer_norm(x), g), b).value();
  for (std::size_t i = 0; i < fused.size(); ++i) CHECK(fused.data[i] == doctest::Approx(composed.data[i]).epsilon(1e-14));
  CHECK_THROWS_AS(layer_norm(x, T64::constant(Matrix<double>(1, 5)), b), DimensionError);
  CHECK_THROWS_AS(leaky_relu(x, 2.0), ParameterError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(5);
  auto y = softmax_rows(T64::constant(random_matrix(6, 7, rng, -20, 20)));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (double x : y.value().row(i)) s += x;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy") {
  const std::size_t classes = 10;
  auto logits = T64::constant(Matrix<double>(4, classes, 0.3));
  std::vector<int> labels{0, 3, 9, 2};
  std::vector<std::uint8_t> mask{1, 0, 1, 1};
  CHECK(cross_entropy_masked(logits, labels, mask).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    Matrix<double> v(1, 3, 0.0);
    v(0, 1) = margin;
    std::vector<int> lab{1};
    std::vector<std::uint8_t> on{1};
    const double loss = cross_entropy_masked(T64::constant(v), lab, on).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-20);

  std::vector<std::uint8_t> none(4, 0);
  CHECK_THROWS_AS(cross_entropy_masked(logits, labels, none), ParameterError);
  std::vector<int> bad{0, 3, 10, 2};
  CHECK_THROWS_AS(cross_entropy_masked(logits, bad, mask), ParameterError);
}

TEST_CASE("backward of hand-derivable losses") {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto x = T64::parameter(Matrix<double>(2, 3, {1, -2, 3, 0.5, 0, 7}));
  backward(sum_all(x));
  for (double g : x.grad().data) CHECK(g == 1.0);

  Rng rng(11);
  auto w = T64::parameter(random_matrix(3, 4, rng));
  auto xv = T64::constant(random_matrix(4, 1, rng));
  auto wx = matmul(w, xv);
  backward(sum_all(mul(wx, wx)));
  const auto& wxv = wx.value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(w.grad()(i, j) == doctest::Approx(2 * wxv(i, 0) * xv.value()(j, 0)).epsilon(1e-12));
}

TEST_CASE("backward needs a tape and a recorded loss") {
  auto x = T64::parameter(Matrix<double>(1, 1, 2.0));
  auto y = scale(x, 3.0);
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(backward(y), StateError);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  CHECK_THROWS_AS(tape.backward(y), StateError);
  auto z = scale(x, 3.0);
  CHECK(z.requires_grad());
  CHECK_THROWS_AS(tape.backward(concat_cols<double>(std::vector<T64>{z, z})), DimensionError);
}

TEST_CASE("dimension errors name operands") {
  auto a = T64::constant(Matrix<double>(3, 4));
  auto b = T64::constant(Matrix<double>(5, 2));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[3x4]") != std::string::npos);
    CHECK(std::string(e.what()).find("[5x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(mul(a, b), DimensionError);
  std::vector<int> idx{0, 1};
  CHECK_THROWS_AS(segment_sum(a, idx, 2), DimensionError);
  std::vector<int> oob{0, 1, 2};
  CHECK_THROWS_AS(segment_sum(a, oob, 2), DimensionError);
}

TEST_CASE("dropout") {
  Rng rng(3);
  auto x = T64::constant(Matrix<double>(50, 40, 1.0));
  auto eval = dropout(x, 0.3, rng, false);
  CHECK(eval.value() == x.value());
  auto train = dropout(x, 0.3, rng, true);
  std::size_t zeros = 0;
  for (double v : train.value().data) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.7));
  }
  CHECK(zeros > 450);
  CHECK(zeros < 750);
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ParameterError);
}

TEST_CASE("finite differences: quadratic form and relu kink") {
  Rng rng(17);
  auto a = random_matrix(4, 4, rng);
  Matrix<double> sym(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) sym(i, j) = a(i, j) + a(j, i);
  auto s = T64::constant(sym);
  auto rep = finite_diff_check(
      [&](const T64& x) { return sum_all(mul(matmul(s, x), x)); }, random_matrix(4, 1, rng), 1e-7);
  CHECK(rep.passed);
  CHECK(rep.checked == 4);

  auto kink = finite_diff_check([](const T64& x) { return sum_all(relu(x)); },
                                Matrix<double>(1, 3, {0.0, 0.5, -0.7}), 1e-7);
  CHECK(kink.excluded_kinks == 1);
  CHECK(kink.checked == 2);
  CHECK(kink.passed);

  // A shallow kink just inside the stencil slips past the one-sided test but
  // not past step halving.
  auto shallow = finite_diff_check([](const T64& x) { return sum_all(leaky_relu(x, 0.995)); },
                                   Matrix<double>(1, 2, {3e-6, 0.4}), 1e-7);
  CHECK(shallow.excluded_kinks == 1);
  CHECK(shallow.passed);

  // Detaching one factor halves the tape gradient; that must be caught.
  auto wrong = finite_diff_check([](const T64& x) { return sum_all(mul(x, T64::constant(x.value()))); },
                                 Matrix<double>(1, 3, {0.3, -1.2, 2.0}), 1e-5);
  CHECK_FALSE(wrong.passed);
  CHECK(wrong.checked == 3);
}

TEST_CASE("every primitive passes gradcheck") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(1000 + seed);
    auto w = T64::parameter(random_matrix(5, 3, rng));
    auto row = T64::parameter(random_matrix(1, 5, rng));
    auto col = T64::parameter(random_matrix(4, 1, rng));
    auto other = T64::parameter(random_matrix(4, 5, rng));
    auto scalar = T64::parameter(random_matrix(1, 1, rng));
    std::vector<int> idx{2, 0, 1, 2};
    std::vector<int> gather{3, 0, 0, 2, 1, 3};

    CHECK(check_weighted([&](const T64& x) { return matmul(x, w); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return matmul(other, x); }, 5, 2, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return add(x, row); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return add(other, x); }, 1, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return sub(other, x); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return mul(x, x); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return mul(other, x); }, 1, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return mul(other, x); }, 4, 1, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return mul(x, col); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return scale(x, -2.5); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return scale_by(x, scalar); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return scale_by(other, x); }, 1, 1, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return relu(x); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return leaky_relu(x, 0.01); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return softmax_rows(scale(x, 3.0)); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return layer_norm(x); }, 4, 5, seed).passed);
    CHECK(check_weighted(
              [&](const T64& x) {
                Rng drop(seed);
                return dropout(x, 0.3, drop, true);
              },
              4, 5, seed)
              .passed);
    CHECK(check_weighted([&](const T64& x) { return concat_cols<double>(std::vector<T64>{other, x, x}); }, 4, 2,
                         seed)
              .passed);
    CHECK(check_weighted([&](const T64& x) { return slice_cols(x, 1, 3); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return gather_rows(x, gather); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return segment_sum(x, idx, 4); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return segment_mean(x, idx, 3); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return segment_softmax(scale(x, 2.0), idx, 3); }, 4, 5, seed).passed);

    auto gain = T64::parameter(random_matrix(1, 5, rng));
    CHECK(check_weighted([&](const T64& x) { return layer_norm(x, gain, row); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return layer_norm(other, x, row); }, 1, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return layer_norm(other, gain, x); }, 1, 5, seed).passed);

    std::vector<int> esrc{0, 3, 1, 1, 2, 0};
    std::vector<int> edst{1, 0, 2, 2, 0, 4};
    auto ew = T64::parameter(random_matrix(6, 1, rng));
    CHECK(check_weighted([&](const T64& x) { return propagate(x, esrc, edst, ew, 5); }, 4, 5, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return propagate(other, esrc, edst, x, 5); }, 6, 1, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return propagate(x, esrc, edst, 5); }, 4, 5, seed).passed);

    std::vector<int> offsets{0, 3, 7};
    auto kk = T64::parameter(random_matrix(7, 4, rng));
    auto vv = T64::parameter(random_matrix(7, 4, rng));
    CHECK(check_weighted([&](const T64& x) { return block_attention(x, kk, vv, offsets, 2); }, 7, 4, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return block_attention(kk, x, vv, offsets, 2); }, 7, 4, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return block_attention(kk, vv, x, offsets, 2); }, 7, 4, seed).passed);
    CHECK(check_weighted([&](const T64& x) { return block_attention(x, x, x, offsets, 1); }, 7, 4, seed).passed);

    std::vector<int> labels{1, 0, 4, 2};
    std::vector<std::uint8_t> mask{1, 0, 1, 1};
    auto ce = finite_diff_check([&](const T64& x) { return cross_entropy_masked(x, labels, mask); },
                                random_matrix(4, 5, rng), 1e-5);
    CHECK(ce.passed);
  }
}

TEST_CASE("block attention rows are convex combinations within their block") {
  Rng rng(2);
  auto q = T64::constant(random_matrix(5, 2, rng));
  auto k = T64::constant(random_matrix(5, 2, rng));
  auto v = T64::constant(Matrix<double>(5, 2, {1, 1, 1, 1, 1, 1, 7, 7, 7, 7}));
  std::vector<int> offsets{0, 3, 5};
  auto out = block_attention(q, k, v, offsets, 2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(out.value()(i, j) == doctest::Approx(i < 3 ? 1.0 : 7.0));
}

TEST_CASE("float tensors record and differentiate") {
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto x = Tensor<float>::parameter(Matrix<float>(2, 2, {1, 2, 3, 4}));
  backward(sum_all(scale(mul(x, x), 0.5f)));
  CHECK(x.grad() == Matrix<float>(2, 2, {1, 2, 3, 4}));
}
