#include "osq/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "osq/error.hpp"

namespace osq::tensor {

namespace detail {

template <typename T>
void Node<T>::accumulate(const Matrix<T>& g) {
  if (grad.data.empty()) {
    grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
}

template <typename T>
Matrix<T>& Node<T>::grad_buffer() {
  if (grad.data.empty()) grad = Matrix<T>(value.rows, value.cols, T{0});
  return grad;
}

}  // namespace detail

namespace {

using detail::Node;

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;
template <typename T>
using EStrided = Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ECStrided = Eigen::Map<const EMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
EMap<T> emap(Matrix<T>& m) {
  return EMap<T>(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}
template <typename T>
ECMap<T> emap(const Matrix<T>& m) {
  return ECMap<T>(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}

// Reductions with a fixed association order: eight interleaved partial sums,
// independent of buffer alignment, so results repeat bit for bit.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[j + k] * b[j + k];
  for (std::size_t k = 0; j < n; ++j, ++k) acc[k] += a[j] * b[j];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

template <typename T>
T lane_sum(const T* a, std::size_t n) {
  T acc[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[j + k];
  for (std::size_t k = 0; j < n; ++j, ++k) acc[k] += a[j];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

template <typename T>
std::string shape_of(const Matrix<T>& m) {
  return "[" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + "]";
}

template <typename T>
thread_local Tape<T>* g_active_tape = nullptr;

// Wraps a freshly computed value; `record` is true when a backward closure
// must be recorded (active tape and at least one input requiring grad).
template <typename T>
Tensor<T> make_output(Matrix<T>&& value, std::initializer_list<const Tensor<T>*> inputs, bool& record) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  Tape<T>* tape = g_active_tape<T>;
  bool need = false;
  for (const auto* in : inputs) need = need || in->requires_grad();
  record = tape != nullptr && need;
  node->requires_grad = record;
  node->tape = record ? tape : nullptr;
  return Tensor<T>(std::move(node));
}

template <typename T>
bool wants(const std::shared_ptr<Node<T>>& n) {
  return n->requires_grad;
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::constant(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor<T>(std::move(node));
}

template <typename T>
Matrix<T> Tensor<T>::grad() const {
  if (node_->grad.data.empty()) return Matrix<T>(rows(), cols(), T{0});
  return node_->grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (rows() != 1 || cols() != 1) throw DimensionError("item() needs a 1x1 tensor, got " + shape_string());
  return node_->value.data[0];
}

template <typename T>
std::string Tensor<T>::shape_string() const {
  return shape_of(node_->value);
}

// ---- Tape -------------------------------------------------------------------

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.node()->tape != this)
    throw StateError("backward: loss was not recorded on this tape (no parameter reached it?)");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw DimensionError("backward: loss must be 1x1, got " + loss.shape_string());
  loss.node()->accumulate(Matrix<T>(1, 1, T{1}));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

template <typename T>
Tape<T>* active_tape() {
  return g_active_tape<T>;
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(g_active_tape<T>) {
  g_active_tape<T> = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  g_active_tape<T> = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = g_active_tape<T>;
  if (!tape) throw StateError("backward called without an active tape");
  tape->backward(loss);
}

// ---- primitives -------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: lhs " + a.shape_string() + " incompatible with rhs " + b.shape_string());
  Matrix<T> out(a.rows(), b.cols());
  emap(out).noalias() = emap(a.value()) * emap(b.value());
  bool record = false;
  auto res = make_output(std::move(out), {&a, &b}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), bn = b.shared(), on = res.shared()] {
      if (on->grad.data.empty()) return;
      const auto g = emap(std::as_const(on->grad));
      if (wants(an)) emap(an->grad_buffer()).noalias() += g * emap(std::as_const(bn->value)).transpose();
      if (wants(bn)) emap(bn->grad_buffer()).noalias() += emap(std::as_const(an->value)).transpose() * g;
    });
  }
  return res;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols()))
    throw DimensionError("add: " + a.shape_string() + " incompatible with " + b.shape_string());
  Matrix<T> out = a.value();
  const auto& bv = b.value();
  if (broadcast) {
    for (std::size_t i = 0; i < out.rows; ++i) {
      T* row = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < out.cols; ++j) row[j] += bv.data[j];
    }
  } else {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  }
  bool record = false;
  auto res = make_output(std::move(out), {&a, &b}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), bn = b.shared(), on = res.shared(), broadcast] {
      if (on->grad.data.empty()) return;
      if (wants(an)) an->accumulate(on->grad);
      if (!wants(bn)) return;
      if (!broadcast) {
        bn->accumulate(on->grad);
        return;
      }
      auto& gb = bn->grad_buffer();
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) gb.data[j] += g.data[i * g.cols + j];
    });
  }
  return res;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sub: " + a.shape_string() + " incompatible with " + b.shape_string());
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  bool record = false;
  auto res = make_output(std::move(out), {&a, &b}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), bn = b.shared(), on = res.shared()] {
      if (on->grad.data.empty()) return;
      if (wants(an)) an->accumulate(on->grad);
      if (wants(bn)) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= on->grad.data[i];
      }
    });
  }
  return res;
}

namespace {

enum class Bcast { None, Row, Col };

template <typename T>
Bcast mul_mode(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::None;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw DimensionError("mul: " + a.shape_string() + " incompatible with " + b.shape_string());
}

template <typename T>
T b_at(const Matrix<T>& b, Bcast mode, std::size_t i, std::size_t j, std::size_t cols) {
  switch (mode) {
    case Bcast::None: return b.data[i * cols + j];
    case Bcast::Row: return b.data[j];
    case Bcast::Col: return b.data[i];
  }
  return T{0};
}

}  // namespace

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Bcast mode = mul_mode(a, b);
  const std::size_t rows = a.rows(), cols = a.cols();
  Matrix<T> out(rows, cols);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.data[i * cols + j] = av.data[i * cols + j] * b_at(bv, mode, i, j, cols);
  bool record = false;
  auto res = make_output(std::move(out), {&a, &b}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), bn = b.shared(), on = res.shared(), mode, rows, cols] {
      if (on->grad.data.empty()) return;
      const auto& g = on->grad;
      if (wants(an)) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j)
            ga.data[i * cols + j] += g.data[i * cols + j] * b_at(bn->value, mode, i, j, cols);
      }
      if (wants(bn)) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const T d = g.data[i * cols + j] * an->value.data[i * cols + j];
            switch (mode) {
              case Bcast::None: gb.data[i * cols + j] += d; break;
              case Bcast::Row: gb.data[j] += d; break;
              case Bcast::Col: gb.data[i] += d; break;
            }
          }
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Matrix<T> out = a.value();
  for (auto& x : out.data) x *= factor;
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), factor] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += factor * on->grad.data[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& scalar) {
  if (scalar.rows() != 1 || scalar.cols() != 1)
    throw DimensionError("scale_by: scalar operand must be 1x1, got " + scalar.shape_string());
  const T s = scalar.value().data[0];
  Matrix<T> out = a.value();
  for (auto& x : out.data) x *= s;
  bool record = false;
  auto res = make_output(std::move(out), {&a, &scalar}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), sn = scalar.shared(), on = res.shared()] {
      if (on->grad.data.empty()) return;
      const auto& g = on->grad;
      if (wants(an)) {
        auto& ga = an->grad_buffer();
        const T s = sn->value.data[0];
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += s * g.data[i];
      }
      if (wants(sn)) {
        T acc{0};
        for (std::size_t i = 0; i < g.data.size(); ++i) acc += g.data[i] * an->value.data[i];
        sn->grad_buffer().data[0] += acc;
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  if (!(slope >= T{0} && slope <= T{1})) throw ParameterError("leaky_relu slope must lie in [0, 1]");
  Matrix<T> out = a.value();
  for (auto& v : out.data) v = std::max(v, v * slope);
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), slope] {
      if (on->grad.data.empty()) return;
      const T* __restrict x = an->value.data.data();
      const T* __restrict g = on->grad.data.data();
      T* __restrict ga = an->grad_buffer().data.data();
      const std::size_t size = on->grad.data.size();
      for (std::size_t i = 0; i < size; ++i) {
        const T pos = static_cast<T>(x[i] > T{0});
        ga[i] += g[i] * pos + g[i] * slope * (T{1} - pos);
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return leaky_relu(a, T{0});
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    auto row = out.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (auto& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (auto& x : row) x /= sum;
  }
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared()] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      const auto& y = on->value;
      const auto& g = on->grad;
      for (std::size_t i = 0; i < y.rows; ++i) {
        T dot{0};
        for (std::size_t j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  }
  return res;
}

namespace {

template <typename T>
Tensor<T> layer_norm_impl(const Tensor<T>& a, const Tensor<T>* gain, const Tensor<T>* bias, T eps) {
  const std::size_t rows = a.rows(), cols = a.cols();
  for (const auto* t : {gain, bias})
    if (t && (t->rows() != 1 || t->cols() != cols))
      throw DimensionError("layer_norm: affine term " + t->shape_string() + " does not match " + a.shape_string());
  Matrix<T> normed(rows, cols);
  std::vector<T> inv_std(rows);
  const T n = static_cast<T>(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* x = a.value().data.data() + i * cols;
    T* y = normed.data.data() + i * cols;
    const T mean = lane_sum(x, cols) / n;
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - mean;
    const T s = T{1} / std::sqrt(lane_dot(y, y, cols) / n + eps);
    for (std::size_t j = 0; j < cols; ++j) y[j] *= s;
    inv_std[i] = s;
  }
  Matrix<T> out = normed;
  const T* gv = gain ? gain->value().data.data() : nullptr;
  const T* bv = bias ? bias->value().data.data() : nullptr;
  for (std::size_t i = 0; i < rows; ++i) {
    T* o = out.data.data() + i * cols;
    if (gv)
      for (std::size_t j = 0; j < cols; ++j) o[j] *= gv[j];
    if (bv)
      for (std::size_t j = 0; j < cols; ++j) o[j] += bv[j];
  }
  bool record = false;
  Tensor<T> none;
  auto res = make_output(std::move(out), {&a, gain ? gain : &none, bias ? bias : &none}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), gn = gain ? gain->shared() : nullptr, bn = bias ? bias->shared() : nullptr,
                              on = res.shared(), normed = std::move(normed), inv_std = std::move(inv_std)] {
      if (on->grad.data.empty()) return;
      const std::size_t rows = normed.rows, cols = normed.cols;
      const T* g = on->grad.data.data();
      const T* y = normed.data.data();
      T* gb = bn && bn->requires_grad ? bn->grad_buffer().data.data() : nullptr;
      T* gg = gn && gn->requires_grad ? gn->grad_buffer().data.data() : nullptr;
      for (std::size_t i = 0; i < rows; ++i) {
        const T* gr = g + i * cols;
        const T* yr = y + i * cols;
        if (gb)
          for (std::size_t j = 0; j < cols; ++j) gb[j] += gr[j];
        if (gg)
          for (std::size_t j = 0; j < cols; ++j) gg[j] += gr[j] * yr[j];
      }
      if (!an->requires_grad) return;
      const T* gain = gn ? gn->value.data.data() : nullptr;
      T* ga = an->grad_buffer().data.data();
      const T n = static_cast<T>(cols);
      std::vector<T> gy(cols);
      for (std::size_t i = 0; i < rows; ++i) {
        const T* gr = g + i * cols;
        const T* yr = y + i * cols;
        T* out = ga + i * cols;
        if (gain)
          for (std::size_t j = 0; j < cols; ++j) gy[j] = gr[j] * gain[j];
        else
          std::copy(gr, gr + cols, gy.begin());
        const T mean_g = lane_sum(gy.data(), cols) / n;
        const T mean_gy = lane_dot(gy.data(), yr, cols) / n;
        const T s = inv_std[i];
        for (std::size_t j = 0; j < cols; ++j) out[j] += s * (gy[j] - mean_g - yr[j] * mean_gy);
      }
    });
  }
  return res;
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps) {
  return layer_norm_impl<T>(a, nullptr, nullptr, eps);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  return layer_norm_impl(a, &gain, &bias, eps);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T p, Rng& rng, bool train) {
  if (p < T{0} || p >= T{1}) throw ParameterError("dropout probability must lie in [0, 1)");
  if (!train || p == T{0}) return a;
  const T keep_scale = T{1} / (T{1} - p);
  std::vector<T> mask(a.value().data.size());
  for (auto& m : mask) m = rng.uniform() < static_cast<double>(p) ? T{0} : keep_scale;
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), mask = std::move(mask)] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += mask[i] * on->grad.data[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw DimensionError("concat_cols: " + parts[0].shape_string() + " incompatible with " + p.shape_string());
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(p.value().data.data() + i * p.cols(), p.cols(), out.data.data() + i * cols + offset);
    offset += p.cols();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(out);
  Tape<T>* tape = active_tape<T>();
  const bool need = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  const bool record = tape && need;
  node->requires_grad = record;
  node->tape = record ? tape : nullptr;
  Tensor<T> res(node);
  if (record) {
    std::vector<std::shared_ptr<Node<T>>> inputs;
    for (const auto& p : parts) inputs.push_back(p.shared());
    tape->record([inputs = std::move(inputs), on = res.shared()] {
      if (on->grad.data.empty()) return;
      const std::size_t cols = on->value.cols;
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        const std::size_t c = in->value.cols;
        if (in->requires_grad) {
          auto& g = in->grad_buffer();
          for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < c; ++j) g.data[i * c + j] += on->grad.data[i * cols + offset + j];
        }
        offset += c;
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count) {
  if (start + count > a.cols())
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + a.shape_string());
  const std::size_t rows = a.rows(), cols = a.cols();
  Matrix<T> out(rows, count);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(a.value().data.data() + i * cols + start, count, out.data.data() + i * count);
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), start, count] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      const std::size_t cols = ga.cols;
      for (std::size_t i = 0; i < ga.rows; ++i)
        for (std::size_t j = 0; j < count; ++j) ga.data[i * cols + start + j] += on->grad.data[i * count + j];
    });
  }
  return res;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const int> index) {
  const std::size_t cols = a.cols();
  Matrix<T> out(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const int src = index[i];
    if (src < 0 || static_cast<std::size_t>(src) >= a.rows())
      throw DimensionError("gather_rows: index " + std::to_string(src) + " outside " + a.shape_string());
    std::copy_n(a.value().data.data() + static_cast<std::size_t>(src) * cols, cols, out.data.data() + i * cols);
  }
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), idx = std::vector<int>(index.begin(), index.end())] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      const std::size_t cols = ga.cols;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = ga.data.data() + static_cast<std::size_t>(idx[i]) * cols;
        const T* src = on->grad.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    });
  }
  return res;
}

namespace {

void check_segments(std::span<const int> index, std::size_t rows, std::size_t segments, const char* op) {
  if (index.size() != rows)
    throw DimensionError(std::string(op) + ": index length " + std::to_string(index.size()) + " vs " +
                         std::to_string(rows) + " rows");
  for (int s : index)
    if (s < 0 || static_cast<std::size_t>(s) >= segments)
      throw DimensionError(std::string(op) + ": segment " + std::to_string(s) + " outside [0, " +
                           std::to_string(segments) + ")");
}

}  // namespace

template <typename T>
Tensor<T> segment_sum(const Tensor<T>& a, std::span<const int> index, std::size_t segments) {
  check_segments(index, a.rows(), segments, "segment_sum");
  const std::size_t cols = a.cols();
  Matrix<T> out(segments, cols, T{0});
  for (std::size_t i = 0; i < index.size(); ++i) {
    T* dst = out.data.data() + static_cast<std::size_t>(index[i]) * cols;
    const T* src = a.value().data.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
  }
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), idx = std::vector<int>(index.begin(), index.end())] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      const std::size_t cols = ga.cols;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const T* src = on->grad.data.data() + static_cast<std::size_t>(idx[i]) * cols;
        T* dst = ga.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> segment_mean(const Tensor<T>& a, std::span<const int> index, std::size_t segments) {
  check_segments(index, a.rows(), segments, "segment_mean");
  std::vector<T> count(segments, T{0});
  for (int s : index) count[static_cast<std::size_t>(s)] += T{1};
  std::vector<T> inv(segments, T{0});
  for (std::size_t s = 0; s < segments; ++s)
    if (count[s] > T{0}) inv[s] = T{1} / count[s];
  const std::size_t cols = a.cols();
  Matrix<T> out(segments, cols, T{0});
  for (std::size_t i = 0; i < index.size(); ++i) {
    T* dst = out.data.data() + static_cast<std::size_t>(index[i]) * cols;
    const T* src = a.value().data.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
  }
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t j = 0; j < cols; ++j) out.data[s * cols + j] *= inv[s];
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), idx = std::vector<int>(index.begin(), index.end()),
                              inv = std::move(inv)] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      const std::size_t cols = ga.cols;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto s = static_cast<std::size_t>(idx[i]);
        const T* src = on->grad.data.data() + s * cols;
        T* dst = ga.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += inv[s] * src[j];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& a, std::span<const int> index, std::size_t segments) {
  check_segments(index, a.rows(), segments, "segment_softmax");
  const std::size_t rows = a.rows(), cols = a.cols();
  const auto& x = a.value();
  Matrix<T> mx(segments, cols, -std::numeric_limits<T>::infinity());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) mx(index[i], j) = std::max(mx(index[i], j), x(i, j));
  Matrix<T> out(rows, cols);
  Matrix<T> sum(segments, cols, T{0});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      out(i, j) = std::exp(x(i, j) - mx(index[i], j));
      sum(index[i], j) += out(i, j);
    }
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) /= sum(index[i], j);
  bool record = false;
  auto res = make_output(std::move(out), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared(), idx = std::vector<int>(index.begin(), index.end()),
                              segments] {
      if (on->grad.data.empty()) return;
      const auto& y = on->value;
      const auto& g = on->grad;
      Matrix<T> dot(segments, y.cols, T{0});
      for (std::size_t i = 0; i < y.rows; ++i)
        for (std::size_t j = 0; j < y.cols; ++j) dot(idx[i], j) += g(i, j) * y(i, j);
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < y.rows; ++i)
        for (std::size_t j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot(idx[i], j));
    });
  }
  return res;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s{0};
  for (T x : a.value().data) s += x;
  bool record = false;
  auto res = make_output(Matrix<T>(1, 1, s), {&a}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), on = res.shared()] {
      if (on->grad.data.empty()) return;
      auto& ga = an->grad_buffer();
      const T g = on->grad.data[0];
      for (auto& x : ga.data) x += g;
    });
  }
  return res;
}

namespace {

template <typename T>
void check_edges(const Tensor<T>& a, std::span<const int> src, std::span<const int> dst, std::size_t nodes) {
  if (src.size() != dst.size())
    throw DimensionError("propagate: " + std::to_string(src.size()) + " sources vs " + std::to_string(dst.size()) +
                         " destinations");
  for (std::size_t e = 0; e < src.size(); ++e) {
    if (src[e] < 0 || static_cast<std::size_t>(src[e]) >= a.rows())
      throw DimensionError("propagate: source " + std::to_string(src[e]) + " outside " + a.shape_string());
    if (dst[e] < 0 || static_cast<std::size_t>(dst[e]) >= nodes)
      throw DimensionError("propagate: destination " + std::to_string(dst[e]) + " outside [0, " +
                           std::to_string(nodes) + ")");
  }
}

template <typename T>
Tensor<T> propagate_impl(const Tensor<T>& a, std::span<const int> src, std::span<const int> dst, const Tensor<T>* w,
                         std::size_t nodes) {
  check_edges(a, src, dst, nodes);
  if (w && (w->rows() != src.size() || w->cols() != 1))
    throw DimensionError("propagate: weights " + w->shape_string() + " must be [" + std::to_string(src.size()) +
                         "x1]");
  const std::size_t cols = a.cols();
  Matrix<T> out(nodes, cols, T{0});
  const T* x = a.value().data.data();
  const T* wv = w ? w->value().data.data() : nullptr;
  for (std::size_t e = 0; e < src.size(); ++e) {
    const T c = wv ? wv[e] : T{1};
    const T* in = x + static_cast<std::size_t>(src[e]) * cols;
    T* o = out.data.data() + static_cast<std::size_t>(dst[e]) * cols;
    for (std::size_t j = 0; j < cols; ++j) o[j] += c * in[j];
  }
  bool record = false;
  Tensor<T> none;
  auto res = make_output(std::move(out), {&a, w ? w : &none}, record);
  if (record) {
    active_tape<T>()->record([an = a.shared(), wn = w ? w->shared() : nullptr, on = res.shared(),
                              s = std::vector<int>(src.begin(), src.end()),
                              d = std::vector<int>(dst.begin(), dst.end())] {
      if (on->grad.data.empty()) return;
      const std::size_t cols = an->value.cols;
      const T* g = on->grad.data.data();
      const T* wv = wn ? wn->value.data.data() : nullptr;
      if (an->requires_grad) {
        T* ga = an->grad_buffer().data.data();
        for (std::size_t e = 0; e < s.size(); ++e) {
          const T c = wv ? wv[e] : T{1};
          const T* go = g + static_cast<std::size_t>(d[e]) * cols;
          T* dst_row = ga + static_cast<std::size_t>(s[e]) * cols;
          for (std::size_t j = 0; j < cols; ++j) dst_row[j] += c * go[j];
        }
      }
      if (wn && wn->requires_grad) {
        T* gw = wn->grad_buffer().data.data();
        const T* x = an->value.data.data();
        for (std::size_t e = 0; e < s.size(); ++e) {
          const T* go = g + static_cast<std::size_t>(d[e]) * cols;
          const T* in = x + static_cast<std::size_t>(s[e]) * cols;
          T acc{0};
          for (std::size_t j = 0; j < cols; ++j) acc += go[j] * in[j];
          gw[e] += acc;
        }
      }
    });
  }
  return res;
}

}  // namespace

template <typename T>
Tensor<T> propagate(const Tensor<T>& a, std::span<const int> src, std::span<const int> dst, const Tensor<T>& w,
                    std::size_t nodes) {
  return propagate_impl(a, src, dst, &w, nodes);
}

template <typename T>
Tensor<T> propagate(const Tensor<T>& a, std::span<const int> src, std::span<const int> dst, std::size_t nodes) {
  return propagate_impl<T>(a, src, dst, nullptr, nodes);
}

template <typename T>
Tensor<T> block_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::span<const int> offsets, std::size_t heads) {
  const std::size_t n = q.rows(), d = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != d || v.cols() != d)
    throw DimensionError("block_attention: q " + q.shape_string() + ", k " + k.shape_string() + ", v " +
                         v.shape_string() + " must share one shape");
  if (heads == 0 || d % heads != 0)
    throw DimensionError("block_attention: " + std::to_string(heads) + " heads do not divide width " +
                         std::to_string(d));
  if (offsets.size() < 2 || offsets.front() != 0 || static_cast<std::size_t>(offsets.back()) != n)
    throw DimensionError("block_attention: offsets must run from 0 to the row count");
  const std::size_t dh = d / heads;
  const T scale_factor = T{1} / std::sqrt(static_cast<T>(dh));
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));

  Matrix<T> out(n, d, T{0});
  // Attention probabilities per (block, head), kept for the backward pass.
  std::vector<EMat<T>> probs;
  probs.reserve((offsets.size() - 1) * heads);
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const auto a = static_cast<std::size_t>(offsets[g]);
    const auto m = static_cast<Eigen::Index>(offsets[g + 1] - offsets[g]);
    if (m < 0) throw DimensionError("block_attention: offsets must be non-decreasing");
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = a * d + h * dh;
      ECStrided<T> qh(q.value().data.data() + off, m, static_cast<Eigen::Index>(dh), stride);
      ECStrided<T> kh(k.value().data.data() + off, m, static_cast<Eigen::Index>(dh), stride);
      ECStrided<T> vh(v.value().data.data() + off, m, static_cast<Eigen::Index>(dh), stride);
      EMat<T> s = (qh * kh.transpose()) * scale_factor;
      for (Eigen::Index i = 0; i < m; ++i) {
        const T mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      EStrided<T> oh(out.data.data() + off, m, static_cast<Eigen::Index>(dh), stride);
      oh.noalias() = s * vh;
      probs.push_back(std::move(s));
    }
  }
  bool record = false;
  auto res = make_output(std::move(out), {&q, &k, &v}, record);
  if (record) {
    active_tape<T>()->record([qn = q.shared(), kn = k.shared(), vn = v.shared(), on = res.shared(),
                              offs = std::vector<int>(offsets.begin(), offsets.end()), heads, dh, d, scale_factor,
                              probs = std::move(probs)] {
      if (on->grad.data.empty()) return;
      const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
      const auto w = static_cast<Eigen::Index>(dh);
      T* gq = qn->requires_grad ? qn->grad_buffer().data.data() : nullptr;
      T* gk = kn->requires_grad ? kn->grad_buffer().data.data() : nullptr;
      T* gv = vn->requires_grad ? vn->grad_buffer().data.data() : nullptr;
      std::size_t p = 0;
      for (std::size_t g = 0; g + 1 < offs.size(); ++g) {
        const auto a = static_cast<std::size_t>(offs[g]);
        const auto m = static_cast<Eigen::Index>(offs[g + 1] - offs[g]);
        for (std::size_t h = 0; h < heads; ++h, ++p) {
          const std::size_t off = a * d + h * dh;
          const EMat<T>& prob = probs[p];
          ECStrided<T> go(on->grad.data.data() + off, m, w, stride);
          ECStrided<T> qh(qn->value.data.data() + off, m, w, stride);
          ECStrided<T> kh(kn->value.data.data() + off, m, w, stride);
          ECStrided<T> vh(vn->value.data.data() + off, m, w, stride);
          if (gv) EStrided<T>(gv + off, m, w, stride).noalias() += prob.transpose() * go;
          if (!gq && !gk) continue;
          EMat<T> dp = go * vh.transpose();
          for (Eigen::Index i = 0; i < m; ++i) {
            const T dot = dp.row(i).dot(prob.row(i));
            dp.row(i) = prob.row(i).array() * (dp.row(i).array() - dot);
          }
          dp *= scale_factor;
          if (gq) EStrided<T>(gq + off, m, w, stride).noalias() += dp * kh;
          if (gk) EStrided<T>(gk + off, m, w, stride).noalias() += dp.transpose() * qh;
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> cross_entropy_masked(const Tensor<T>& logits, std::span<const int> labels,
                               std::span<const std::uint8_t> mask) {
  const std::size_t rows = logits.rows(), classes = logits.cols();
  if (labels.size() != rows || mask.size() != rows)
    throw DimensionError("cross_entropy_masked: labels/mask length must equal the " + std::to_string(rows) +
                         " logit rows");
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ParameterError("cross_entropy_masked: label " + std::to_string(labels[i]) + " outside [0, " +
                           std::to_string(classes) + ")");
  }
  if (count == 0) throw ParameterError("cross_entropy_masked: mask selects no rows");

  const auto& x = logits.value();
  Matrix<T> prob(rows, classes, T{0});
  T loss{0};
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    const auto row = x.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(row[j] - mx);
    const T log_z = mx + std::log(sum);
    loss += log_z - row[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < classes; ++j) prob(i, j) = std::exp(row[j] - log_z);
  }
  loss /= static_cast<T>(count);
  bool record = false;
  auto res = make_output(Matrix<T>(1, 1, loss), {&logits}, record);
  if (record) {
    active_tape<T>()->record([ln = logits.shared(), on = res.shared(), prob = std::move(prob),
                              lab = std::vector<int>(labels.begin(), labels.end()),
                              msk = std::vector<std::uint8_t>(mask.begin(), mask.end()), count] {
      if (on->grad.data.empty()) return;
      const T g = on->grad.data[0] / static_cast<T>(count);
      auto& gl = ln->grad_buffer();
      for (std::size_t i = 0; i < gl.rows; ++i) {
        if (!msk[i]) continue;
        for (std::size_t j = 0; j < gl.cols; ++j) gl(i, j) += g * prob(i, j);
        gl(i, static_cast<std::size_t>(lab[i])) -= g;
      }
    });
  }
  return res;
}

// ---- gradient checking ------------------------------------------------------

FiniteDiffReport finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                   const Matrix<double>& point, double tolerance, double h) {
  Matrix<double> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto x = Tensor<double>::parameter(point);
    auto y = f(x);
    tape.backward(y);
    analytic = x.grad();
  }
  auto eval = [&](const Matrix<double>& p) { return f(Tensor<double>::constant(p)).item(); };
  const double f0 = eval(point);

  std::vector<double> numeric(point.size()), half(point.size()), fwd(point.size()), bwd(point.size());
  Matrix<double> p = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = p.data[i];
    auto at = [&](double x) {
      p.data[i] = x;
      return eval(p);
    };
    const double fp = at(orig + h), fm = at(orig - h);
    const double fp2 = at(orig + h / 2), fm2 = at(orig - h / 2);
    p.data[i] = orig;
    numeric[i] = (fp - fm) / (2 * h);
    half[i] = (fp2 - fm2) / h;
    fwd[i] = (fp - f0) / h;
    bwd[i] = (f0 - fm) / h;
  }
  double scale_ref = 0;
  for (double n : numeric) scale_ref = std::max(scale_ref, std::abs(n));
  // Central differences carry roundoff of order eps*|f|/h; gradients below
  // 1e-5*max(1,|f|) are indistinguishable from that noise.
  const double floor = std::max(1e-3 * scale_ref, 1e-5 * std::max(1.0, std::abs(f0)));

  FiniteDiffReport rep;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double denom_kink = std::max({std::abs(fwd[i]), std::abs(bwd[i]), floor});
    const double denom = std::max({std::abs(analytic.data[i]), std::abs(numeric[i]), floor});
    // Smooth coordinates give steps h and h/2 agreeing to O(h^2); a kink
    // inside the stencil or roundoff makes them drift apart.
    if (std::abs(fwd[i] - bwd[i]) > 1e-2 * denom_kink || std::abs(numeric[i] - half[i]) > 0.5 * tolerance * denom) {
      ++rep.excluded_kinks;
      continue;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, std::abs(analytic.data[i] - numeric[i]) / denom);
    ++rep.checked;
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

// ---- instantiations ---------------------------------------------------------

#define OSQ_INSTANTIATE(T)                                                                                     \
  template struct detail::Node<T>;                                                                            \
  template class Tensor<T>;                                                                                   \
  template class Tape<T>;                                                                                     \
  template class TapeScope<T>;                                                                                \
  template Tape<T>* active_tape<T>();                                                                         \
  template void backward<T>(const Tensor<T>&);                                                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                           \
  template Tensor<T> scale_by<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                               \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                                      \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                       \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, T);                                                      \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> dropout<T>(const Tensor<T>&, T, Rng&, bool);                                             \
  template Tensor<T> concat_cols<T>(std::span<const Tensor<T>>);                                              \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);                               \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const int>);                                  \
  template Tensor<T> segment_sum<T>(const Tensor<T>&, std::span<const int>, std::size_t);                     \
  template Tensor<T> segment_mean<T>(const Tensor<T>&, std::span<const int>, std::size_t);                    \
  template Tensor<T> segment_softmax<T>(const Tensor<T>&, std::span<const int>, std::size_t);                 \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                                            \
  template Tensor<T> propagate<T>(const Tensor<T>&, std::span<const int>, std::span<const int>, const Tensor<T>&,  \
                                  std::size_t);                                                               \
  template Tensor<T> propagate<T>(const Tensor<T>&, std::span<const int>, std::span<const int>, std::size_t);   \
  template Tensor<T> block_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                        std::span<const int>, std::size_t);                                   \
  template Tensor<T> cross_entropy_masked<T>(const Tensor<T>&, std::span<const int>,                          \
                                             std::span<const std::uint8_t>);

OSQ_INSTANTIATE(float)
OSQ_INSTANTIATE(double)

#undef OSQ_INSTANTIATE

}  // namespace osq::tensor
