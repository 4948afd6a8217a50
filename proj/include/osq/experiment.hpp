#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "osq/graphgen.hpp"
#include "osq/models.hpp"
#include "osq/train.hpp"

namespace osq::experiment {

// Flat `section.key = value` text; lists are comma separated, `#` starts a
// comment. Unknown keys are rejected.
struct ExperimentConfig {
  graph::Family family = graph::Family::TwoRadius;
  std::vector<int> n{10};
  std::vector<int> k{1};
  std::vector<int> r{0};
  int L = 10;
  bool distinct_labels = false;
  graph::CentralIds central_ids = graph::CentralIds::Distinct;
  int train_count = 2000;
  int test_count = 500;
  std::uint64_t data_seed = 0;

  std::vector<models::Arch> archs{models::Arch::GCN};
  std::vector<int> hidden{128};
  std::optional<int> layers;  // arch default when unset
  bool layers_match_radius = false;  // `model.layers = radius`
  int heads = 2;
  std::optional<double> dropout;
  std::vector<bool> vn{false};
  int vn_count = 1;
  models::VNAggregation vn_aggregation = models::VNAggregation::Mean;

  std::vector<double> lr;  // empty: per-arch default
  int batch_size = 64;
  int epochs = 300;
  double scheduler_factor = 0.1;
  int scheduler_patience = 50;
  train::Precision precision = train::Precision::F32;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int eval_every = 1;
  int probe_samples = 10;
  bool wall_time = false;

  std::string csv = "results.csv";
  std::string svg_dir = "figures";
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);
// Applies one `section.key = value` assignment on top of a config.
void apply_setting(ExperimentConfig& config, std::string_view assignment);
std::string format_config(const ExperimentConfig& config);

// Hops needed to carry information from the farthest relevant node to the
// target: 2 for two-radius, r for the ring, depth + 1 for the tree.
int problem_radius(graph::Family family, int r);

// Learning rates tuned per architecture for hidden width 256.
double default_lr(models::Arch arch);

struct RunSpec {
  std::string run_id;
  graph::DatasetSpec train_data, test_data;
  models::ModelSpec model;
  train::TrainConfig train;
};

// Cross product over n, k, r, arch, hidden, vn, lr and seed, in that nesting
// order. Lists that do not apply to the family contribute a single 0.
std::vector<RunSpec> expand_grid(const ExperimentConfig& config);

struct ResultRow {
  std::string run_id;
  std::string family;
  int n = 0, k = 0, r = 0;
  std::string arch;
  int hidden = 0;
  int vn = 0;
  double lr = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  double train_loss = 0;
  double test_acc = 0;
  double grad_probe = 0;
  std::optional<double> mad;
  double wall_seconds = 0;
};

inline constexpr std::string_view kCsvHeader =
    "run_id,family,n,k,r,arch,hidden,vn,lr,seed,epoch,train_loss,test_acc,grad_probe,mad,wall_seconds";

std::string format_row(const ResultRow& row);
std::vector<ResultRow> parse_csv(std::string_view text);
std::vector<ResultRow> read_csv(const std::string& path);

// Trains one grid point and returns one row per evaluated epoch. The final
// parameters go to `checkpoint` when it is nonempty.
std::vector<ResultRow> execute(const RunSpec& run, const train::EpochCallback& on_epoch = {},
                               const std::string& checkpoint = {});

struct SweepSummary {
  int total = 0;
  int skipped = 0;  // already present in the CSV
  int completed = 0;
};

using RunCallback = std::function<void(const RunSpec&, const std::vector<ResultRow>&)>;

// Runs every grid point whose run_id is absent from the CSV, appending each
// run's rows with a single write. Up to `workers` runs execute concurrently.
SweepSummary run_sweep(const std::vector<RunSpec>& runs, const std::string& csv_path, int workers,
                       const RunCallback& on_run = {});

// Run ids already complete in the CSV; a torn trailing run is truncated away.
std::set<std::string> completed_runs(const std::string& csv_path);
// Appends one run's rows with a single write, creating the header if needed.
void append_rows(const std::string& csv_path, const std::vector<ResultRow>& rows);

// OSQ_WORKERS, or 1 when unset.
int workers_from_env();

enum class PlotMetric { Accuracy, GradProbe, Mad, TrainLoss };
enum class PlotAxis { N, K, R, Epoch };

PlotMetric parse_metric(std::string_view token);
PlotAxis parse_axis(std::string_view token);

struct SeriesPoint {
  double x = 0;
  double mean = 0;
  double sem = 0;
  int samples = 0;
};

// Series keyed by arch (suffixed "+vn"); per-axis values use each run's final
// evaluated epoch unless the axis is Epoch. SEM is over seeds.
std::map<std::string, std::vector<SeriesPoint>> aggregate(const std::vector<ResultRow>& rows, PlotMetric metric,
                                                          PlotAxis axis);

// Error bars are one standard error; the gradient probe uses a log y axis.
std::string render_svg(const std::vector<ResultRow>& rows, PlotMetric metric, PlotAxis axis);

}  // namespace osq::experiment
