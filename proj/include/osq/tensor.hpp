#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "osq/matrix.hpp"
#include "osq/rng.hpp"

namespace osq::tensor {

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  const Tape<T>* tape = nullptr;  // recording tape, null for leaves

  void accumulate(const Matrix<T>& g);
  Matrix<T>& grad_buffer();
};

}  // namespace detail

// Dense 2-D tensor. Copies share the underlying node, so a parameter held in
// ModelParams and the same parameter seen by the tape are one object.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix<T> value);
  // Leaf that receives gradients: model parameters and watched inputs.
  static Tensor parameter(Matrix<T> value);

  bool defined() const { return node_ != nullptr; }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  // Zero-filled when no gradient has flowed into this tensor.
  Matrix<T> grad() const;
  bool has_grad() const { return node_ && !node_->grad.data.empty(); }
  void zero_grad() { node_->grad = Matrix<T>(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  T item() const;  // value of a 1x1 tensor
  std::string shape_string() const;

  detail::Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& shared() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// Define-by-run record of one forward pass. Operations record onto the tape
// that is active on the current thread (see TapeScope); with no active tape
// they only compute values.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return ops_.size(); }

  // Reverse traversal from a 1x1 loss recorded on this tape. Gradients
  // accumulate into every leaf that requires them.
  void backward(const Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> ops_;
};

template <typename T>
Tape<T>* active_tape();

template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Backward through the active tape; StateError without one.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- primitives -----------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Same shape, or b a [1 x cols] row broadcast over the rows of a.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
// Elementwise product; b may also be [1 x cols] (row broadcast) or
// [rows x 1] (column broadcast).
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// a times a learnable 1x1 scalar.
template <typename T> Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& scalar);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
// Per-row standardization without affine terms.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& a, T eps = T(1e-5));
// Standardization followed by a per-column gain and bias, both [1 x cols].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
// Inverted dropout: survivors are scaled by 1/(1-p) at train time; identity otherwise.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, T p, Rng& rng, bool train);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const int> index);
// out[index[i]] += a[i] over `segments` output rows.
template <typename T> Tensor<T> segment_sum(const Tensor<T>& a, std::span<const int> index, std::size_t segments);
// segment_sum divided by segment sizes; empty segments stay zero.
template <typename T> Tensor<T> segment_mean(const Tensor<T>& a, std::span<const int> index, std::size_t segments);
// Column-wise softmax over the rows sharing a segment index.
template <typename T> Tensor<T> segment_softmax(const Tensor<T>& a, std::span<const int> index, std::size_t segments);
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
// out[dst[e]] += w[e] * a[src[e]] over `nodes` output rows; w is [edges x 1].
// Equal to segment_sum(mul(gather_rows(a, src), w), dst, nodes) without the
// per-edge intermediates.
template <typename T>
Tensor<T> propagate(const Tensor<T>& a, std::span<const int> src, std::span<const int> dst, const Tensor<T>& w,
                    std::size_t nodes);
template <typename T>
Tensor<T> propagate(const Tensor<T>& a, std::span<const int> src, std::span<const int> dst, std::size_t nodes);

// Multi-head scaled dot-product attention restricted to row blocks
// [offsets[g], offsets[g+1]); q, k, v are [N x D] with D divisible by heads.
template <typename T>
Tensor<T> block_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::span<const int> offsets, std::size_t heads);

// Mean of -log softmax(logits)[label] over rows with mask set.
// labels are class indices; rows outside the mask are ignored.
template <typename T>
Tensor<T> cross_entropy_masked(const Tensor<T>& logits, std::span<const int> labels,
                               std::span<const std::uint8_t> mask);

// ---- gradient checking ----------------------------------------------------

struct FiniteDiffReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t excluded_kinks = 0;
  bool passed = false;
};

// Compares tape gradients of a scalar f against central differences with
// step h. Coordinates whose one-sided slopes disagree, or whose central
// differences at h and h/2 differ by more than half the tolerance, are
// treated as kinks and excluded. The relative error of a coordinate is measured against
// max(|analytic|, |numeric|, 1e-3 * max_i |numeric_i|, 1e-5 * max(1, |f|)).
FiniteDiffReport finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                   const Matrix<double>& point, double tolerance, double h = 1e-5);

}  // namespace osq::tensor
