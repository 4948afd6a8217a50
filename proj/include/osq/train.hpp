#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osq/graphgen.hpp"
#include "osq/models.hpp"

namespace osq::train {

enum class Precision { F32, F64 };

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 64;
  int max_epochs = 300;
  double scheduler_factor = 0.1;
  int scheduler_patience = 50;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  int eval_every = 1;
  int probe_samples = 10;
  bool record_time = true;  // wall_seconds stays 0 when unset
};

void validate(const TrainConfig& config);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Matrix<T>> m, v;
};

// One bias-corrected Adam update from the gradients held by the parameters.
// Throws NumericalError naming the parameter on a non-finite gradient.
template <typename T>
void adam_step(models::ModelParams<T>& params, AdamState<T>& state, double lr);

// ReduceLROnPlateau on a minimized metric with relative threshold 1e-4.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr);
  // Reports the epoch metric and returns the learning rate for the next epoch.
  double step(double metric);
  double lr() const { return lr_; }
  int reductions() const { return reductions_; }

 private:
  double lr_, factor_, min_lr_;
  int patience_;
  double best_;
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double lr = 0;
  bool evaluated = false;
  double test_acc = 0;
  double grad_probe = 0;
  std::optional<double> mad;
  double wall_seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;  // evaluated epochs only
  std::optional<double> final_grad_probe;
  std::optional<double> final_mad;
};

template <typename T>
struct TrainResult {
  TrainReport report;
  models::ModelParams<T> params;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batches are disjoint unions; the loss is cross entropy over target
// nodes. Parameters are initialized from Rng::derive(config.seed, 1).
template <typename T>
TrainResult<T> train_model(const models::ModelSpec& spec, std::span<const graph::TaskInstance> train_set,
                           std::span<const graph::TaskInstance> test_set, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});

// Precision chosen by config.precision.
TrainReport run_training(const models::ModelSpec& spec, std::span<const graph::TaskInstance> train_set,
                         std::span<const graph::TaskInstance> test_set, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

// Fraction of target nodes whose argmax logit is the supervised label.
template <typename T>
double evaluate_accuracy(const models::ModelSpec& spec, const models::ModelParams<T>& params,
                         std::span<const graph::TaskInstance> dataset, int batch_size = 64);

// Accuracy of arbitrary per-instance predictions (target node -> label).
using Predictor = std::function<std::map<int, int>(const graph::TaskInstance&)>;
double evaluate_predictions(std::span<const graph::TaskInstance> dataset, const Predictor& predict);

// Mean over the first `count` instances of ||d(sum of target logits)/d(source features)||_2.
template <typename T>
double gradient_norm_probe(const models::ModelSpec& spec, const models::ModelParams<T>& params,
                           std::span<const graph::TaskInstance> instances, int count);

// MAD energy of final hidden target features; needs at least two targets.
template <typename T>
double mad_probe(const models::ModelSpec& spec, const models::ModelParams<T>& params,
                 const graph::TaskInstance& instance);

// First evaluated epoch whose accuracy reaches the threshold.
std::optional<int> epochs_to_accuracy(const TrainReport& report, double threshold);

}  // namespace osq::train
