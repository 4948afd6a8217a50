#include "osq/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "osq/error.hpp"
#include "osq/metrics.hpp"

namespace osq::train {

using models::GraphBatch;
using models::ModelParams;
using models::ModelSpec;
using tensor::Tensor;

void validate(const TrainConfig& c) {
  if (!(c.lr > 0)) throw ParameterError("learning rate must be > 0");
  if (c.batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (c.max_epochs < 1) throw ParameterError("max_epochs must be >= 1");
  if (!(c.scheduler_factor > 0 && c.scheduler_factor < 1)) throw ParameterError("scheduler factor must lie in (0, 1)");
  if (c.scheduler_patience < 0) throw ParameterError("scheduler patience must be >= 0");
  if (c.min_lr < 0) throw ParameterError("min_lr must be >= 0");
  if (c.eval_every < 1) throw ParameterError("eval_every must be >= 1");
  if (c.probe_samples < 0) throw ParameterError("probe_samples must be >= 0");
}

// ---- optimizer --------------------------------------------------------------

template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (T g : t.node()->grad.data)
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericalError("non-finite gradient in parameter '" + name + "' at Adam step " +
                             std::to_string(state.step + 1));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    auto& value = t.mutable_value();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.data.empty()) {
      m = Matrix<T>(value.rows, value.cols, T{0});
      v = Matrix<T>(value.rows, value.cols, T{0});
    }
    if (!t.has_grad()) continue;
    const auto& g = t.node()->grad.data;
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T step = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(state.eps);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m.data[i] = b1 * m.data[i] + (T{1} - b1) * g[i];
      v.data[i] = b2 * v.data[i] + (T{1} - b2) * g[i] * g[i];
      value.data[i] -= step * m.data[i] / (std::sqrt(v.data[i] * inv_c2) + eps);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_lr)
    : lr_(lr), factor_(factor), min_lr_(min_lr), patience_(patience), best_(INFINITY) {}

double PlateauScheduler::step(double metric) {
  if (metric < best_ * (1.0 - 1e-4)) {
    best_ = metric;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ > patience_) {
    const double next = std::max(lr_ * factor_, min_lr_);
    if (next < lr_ * (1.0 - 1e-9)) {
      lr_ = next;
      ++reductions_;
    }
    bad_epochs_ = 0;
  }
  return lr_;
}

// ---- evaluation -------------------------------------------------------------

namespace {

template <typename T>
GraphBatch<T> batch_of(std::span<const graph::TaskInstance> set, std::span<const std::size_t> order) {
  std::vector<const graph::TaskInstance*> ptrs;
  ptrs.reserve(order.size());
  for (std::size_t i : order) ptrs.push_back(&set[i]);
  return models::make_batch<T>(std::span<const graph::TaskInstance* const>(ptrs));
}

template <typename T>
std::pair<std::size_t, std::size_t> count_correct(const Matrix<T>& logits, const GraphBatch<T>& b) {
  std::size_t correct = 0, total = 0;
  for (std::size_t v = 0; v < logits.rows; ++v) {
    if (!b.target_mask[v]) continue;
    ++total;
    const auto row = logits.row(v);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == b.class_index[v]) ++correct;
  }
  return {correct, total};
}

}  // namespace

template <typename T>
double evaluate_accuracy(const ModelSpec& spec, const ModelParams<T>& params,
                         std::span<const graph::TaskInstance> dataset, int batch_size) {
  if (dataset.empty()) throw ParameterError("cannot evaluate on an empty dataset");
  std::size_t correct = 0, total = 0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min(static_cast<std::size_t>(batch_size), order.size() - start);
    auto b = batch_of<T>(dataset, std::span<const std::size_t>(order).subspan(start, len));
    auto out = models::forward(spec, params, b);
    auto [c, t] = count_correct(out.logits.value(), b);
    correct += c;
    total += t;
  }
  if (total == 0) throw ParameterError("dataset has no supervised target nodes");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate_predictions(std::span<const graph::TaskInstance> dataset, const Predictor& predict) {
  if (dataset.empty()) throw ParameterError("cannot evaluate on an empty dataset");
  std::size_t correct = 0, total = 0;
  for (const auto& inst : dataset) {
    const auto pred = predict(inst);
    for (const auto& [t, label] : inst.supervision) {
      ++total;
      auto it = pred.find(t);
      if (it != pred.end() && it->second == label) ++correct;
    }
  }
  if (total == 0) throw ParameterError("dataset has no supervised target nodes");
  return static_cast<double>(correct) / static_cast<double>(total);
}

template <typename T>
double gradient_norm_probe(const ModelSpec& spec, const ModelParams<T>& params,
                           std::span<const graph::TaskInstance> instances, int count) {
  if (count < 1) throw ParameterError("gradient probe needs count >= 1");
  const std::size_t m = std::min(static_cast<std::size_t>(count), instances.size());
  if (m == 0) throw ParameterError("gradient probe needs at least one instance");
  ModelParams<T> frozen;
  for (const auto& [name, t] : params) frozen[name] = Tensor<T>::constant(t.value());
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& inst = instances[i];
    auto b = models::make_batch<T>(inst);
    tensor::Tape<T> tape;
    tensor::TapeScope<T> scope(tape);
    auto x = Tensor<T>::parameter(b.features);
    auto out = models::forward(spec, frozen, b, x, false);
    std::vector<int> targets;
    for (const auto& [t, label] : inst.supervision) targets.push_back(t);
    auto objective = tensor::sum_all(tensor::gather_rows(out.logits, targets));
    tensor::backward(objective);
    const auto g = x.grad();
    double sq = 0;
    for (int s : inst.graph.nodes_with_role(graph::Role::Source))
      for (T val : g.row(static_cast<std::size_t>(s))) sq += static_cast<double>(val) * static_cast<double>(val);
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(m);
}

template <typename T>
double mad_probe(const ModelSpec& spec, const ModelParams<T>& params, const graph::TaskInstance& instance) {
  auto b = models::make_batch<T>(instance);
  auto out = models::forward(spec, params, b);
  std::vector<int> targets;
  for (const auto& [t, label] : instance.supervision) targets.push_back(t);
  return metrics::mad_energy(out.hidden.value(), targets);
}

std::optional<int> epochs_to_accuracy(const TrainReport& report, double threshold) {
  if (report.epochs.empty()) throw ParameterError("epochs_to_accuracy: empty report");
  for (const auto& e : report.epochs)
    if (e.evaluated && e.test_acc >= threshold) return e.epoch;
  return std::nullopt;
}

// ---- training loop ----------------------------------------------------------

namespace {

// Activation buffers are freed and reallocated every batch; keeping them on the
// heap instead of fresh mmap pages removes most of the kernel time.
void retain_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace

template <typename T>
TrainResult<T> train_model(const ModelSpec& spec, std::span<const graph::TaskInstance> train_set,
                           std::span<const graph::TaskInstance> test_set, const TrainConfig& config,
                           const EpochCallback& on_epoch) {
  validate(config);
  models::validate(spec);
  if (train_set.empty() || test_set.empty()) throw ParameterError("training and test sets must be nonempty");
  retain_heap();
  const auto started = std::chrono::steady_clock::now();

  Rng init_rng = Rng::derive(config.seed, 1);
  Rng shuffle_rng = Rng::derive(config.seed, 2);
  Rng dropout_rng = Rng::derive(config.seed, 3);

  TrainResult<T> result;
  result.params = models::init_params<T>(spec, init_rng);
  AdamState<T> adam;
  PlateauScheduler scheduler(config.lr, config.scheduler_factor, config.scheduler_patience, config.min_lr);

  const std::size_t probe_count = std::min(static_cast<std::size_t>(config.probe_samples), test_set.size());
  const bool mad_possible = !test_set.empty() && test_set[0].supervision.size() >= 2;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0;
    std::size_t target_sum = 0;
    const double lr = scheduler.lr();
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      auto b = batch_of<T>(train_set, std::span<const std::size_t>(order).subspan(start, len));
      double loss_value = 0;
      {
        tensor::Tape<T> tape;
        tensor::TapeScope<T> scope(tape);
        auto out = models::forward(spec, result.params, b, true, &dropout_rng);
        auto loss = tensor::cross_entropy_masked(out.logits, b.class_index, b.target_mask);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          throw NumericalError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
        tape.backward(loss);
      }
      adam_step(result.params, adam, lr);
      for (auto& [name, t] : result.params) t.zero_grad();
      const auto targets = static_cast<std::size_t>(std::count(b.target_mask.begin(), b.target_mask.end(), 1));
      loss_sum += loss_value * static_cast<double>(targets);
      target_sum += targets;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(target_sum);
    rec.lr = lr;
    scheduler.step(rec.train_loss);

    if (epoch % config.eval_every == 0 || epoch == config.max_epochs) {
      rec.evaluated = true;
      rec.test_acc = evaluate_accuracy(spec, result.params, test_set, config.batch_size);
      if (probe_count > 0) {
        rec.grad_probe = gradient_norm_probe(spec, result.params, test_set, static_cast<int>(probe_count));
        if (mad_possible) {
          double mad = 0;
          for (std::size_t i = 0; i < probe_count; ++i) mad += mad_probe(spec, result.params, test_set[i]);
          rec.mad = mad / static_cast<double>(probe_count);
        }
      }
      if (config.record_time)
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      result.report.epochs.push_back(rec);
      if (probe_count > 0) result.report.final_grad_probe = rec.grad_probe;
      result.report.final_mad = rec.mad;
      if (on_epoch) on_epoch(rec);
    }
  }
  return result;
}

TrainReport run_training(const ModelSpec& spec, std::span<const graph::TaskInstance> train_set,
                         std::span<const graph::TaskInstance> test_set, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  if (config.precision == Precision::F64) return train_model<double>(spec, train_set, test_set, config, on_epoch).report;
  return train_model<float>(spec, train_set, test_set, config, on_epoch).report;
}

#define OSQ_INSTANTIATE(T)                                                                                        \
  template void adam_step<T>(ModelParams<T>&, AdamState<T>&, double);                                            \
  template TrainResult<T> train_model<T>(const ModelSpec&, std::span<const graph::TaskInstance>,                \
                                         std::span<const graph::TaskInstance>, const TrainConfig&,              \
                                         const EpochCallback&);                                                 \
  template double evaluate_accuracy<T>(const ModelSpec&, const ModelParams<T>&,                                  \
                                       std::span<const graph::TaskInstance>, int);                               \
  template double gradient_norm_probe<T>(const ModelSpec&, const ModelParams<T>&,                                \
                                         std::span<const graph::TaskInstance>, int);                             \
  template double mad_probe<T>(const ModelSpec&, const ModelParams<T>&, const graph::TaskInstance&);

OSQ_INSTANTIATE(float)
OSQ_INSTANTIATE(double)

#undef OSQ_INSTANTIATE

}  // namespace osq::train
