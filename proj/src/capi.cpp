#include "osq/osq.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "osq/error.hpp"
#include "osq/experiment.hpp"
#include "osq/graphgen.hpp"
#include "osq/metrics.hpp"
#include "osq/theorems.hpp"

struct osq_dataset {
  std::vector<osq::graph::TaskInstance> instances;
};

struct osq_config {
  osq::experiment::ExperimentConfig config;
};

struct osq_verification {
  std::vector<osq::theorems::CheckResult> checks;
};

namespace {

thread_local std::string last_error;

osq_status fail(osq_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
osq_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return OSQ_OK;
  } catch (const osq::Error& e) {
    return fail(static_cast<osq_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(OSQ_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(OSQ_E_INTERNAL, e.what());
  } catch (...) {
    return fail(OSQ_E_INTERNAL, "unknown failure");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw osq::Error(osq::ErrorKind::Usage, what);
}

char* duplicate(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string slurp(const char* path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw osq::IoError(std::string("cannot read '") + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

osq::graph::Validation level(int structural) {
  return structural ? osq::graph::Validation::Structural : osq::graph::Validation::Strict;
}

}  // namespace

extern "C" {

const char* osq_last_error(void) { return last_error.c_str(); }

const char* osq_version(void) { return "0.1.0"; }

void osq_string_free(char* s) { std::free(s); }

void osq_dataset_spec_init(osq_dataset_spec* spec) {
  if (!spec) return;
  *spec = osq_dataset_spec{"two-radius", 10, 1, 10, 0, 1, 0, 0, 0};
}

osq_status osq_dataset_generate(const osq_dataset_spec* spec, osq_dataset** out) {
  return guarded([&] {
    require(spec && out, "osq_dataset_generate: null argument");
    require(spec->family, "osq_dataset_generate: family is required");
    osq::graph::DatasetSpec d;
    d.family = osq::graph::parse_family(spec->family);
    d.params = {spec->n, spec->k, spec->L, spec->r};
    d.count = spec->count;
    d.seed = spec->seed;
    d.distinct_labels = spec->distinct_labels != 0;
    d.central_ids = spec->shared_central_ids ? osq::graph::CentralIds::Shared : osq::graph::CentralIds::Distinct;
    if (d.count < 1) throw osq::ParameterError("count must be >= 1");
    auto ds = std::make_unique<osq_dataset>();
    ds->instances = osq::graph::sample_dataset(d);
    *out = ds.release();
  });
}

osq_status osq_dataset_parse(const char* text, int structural, osq_dataset** out) {
  return guarded([&] {
    require(text && out, "osq_dataset_parse: null argument");
    auto ds = std::make_unique<osq_dataset>();
    ds->instances = osq::graph::parse_graphs(text, level(structural));
    *out = ds.release();
  });
}

osq_status osq_dataset_read(const char* path, int structural, osq_dataset** out) {
  return guarded([&] {
    require(path && out, "osq_dataset_read: null argument");
    auto ds = std::make_unique<osq_dataset>();
    ds->instances = osq::graph::parse_graphs(slurp(path), level(structural));
    *out = ds.release();
  });
}

osq_status osq_dataset_write(const osq_dataset* dataset, const char* path, int force) {
  return guarded([&] {
    require(dataset && path, "osq_dataset_write: null argument");
    if (!force && std::filesystem::exists(path))
      throw osq::StateError(std::string("'") + path + "' exists; pass force to overwrite");
    const std::string text = osq::graph::serialize_dataset(dataset->instances);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw osq::IoError(std::string("cannot write '") + path + "'");
    f << text;
    if (!f.flush()) throw osq::IoError(std::string("write to '") + path + "' failed");
  });
}

osq_status osq_dataset_serialize(const osq_dataset* dataset, char** text) {
  return guarded([&] {
    require(dataset && text, "osq_dataset_serialize: null argument");
    *text = duplicate(osq::graph::serialize_dataset(dataset->instances));
  });
}

size_t osq_dataset_size(const osq_dataset* dataset) { return dataset ? dataset->instances.size() : 0; }

void osq_dataset_free(osq_dataset* dataset) { delete dataset; }

osq_status osq_diagnose(const osq_dataset* dataset, size_t index, char** report, char** curvature_csv) {
  return guarded([&] {
    require(dataset && report, "osq_diagnose: null argument");
    if (index >= dataset->instances.size())
      throw osq::ParameterError("instance " + std::to_string(index) + " out of range");
    const auto r = osq::metrics::diagnose(dataset->instances[index]);
    std::string text = osq::metrics::format_report(r);
    std::string csv = curvature_csv ? osq::metrics::format_curvature_csv(r) : std::string();
    *report = duplicate(text);
    if (curvature_csv) {
      try {
        *curvature_csv = duplicate(csv);
      } catch (...) {
        std::free(*report);
        *report = nullptr;
        throw;
      }
    }
  });
}

osq_status osq_config_default(osq_config** out) {
  return guarded([&] {
    require(out, "osq_config_default: null argument");
    *out = new osq_config();
  });
}

osq_status osq_config_parse(const char* text, osq_config** out) {
  return guarded([&] {
    require(text && out, "osq_config_parse: null argument");
    auto c = std::make_unique<osq_config>();
    c->config = osq::experiment::parse_config(text);
    *out = c.release();
  });
}

osq_status osq_config_read(const char* path, osq_config** out) {
  return guarded([&] {
    require(path && out, "osq_config_read: null argument");
    auto c = std::make_unique<osq_config>();
    c->config = osq::experiment::load_config(path);
    *out = c.release();
  });
}

osq_status osq_config_set(osq_config* config, const char* assignment) {
  return guarded([&] {
    require(config && assignment, "osq_config_set: null argument");
    osq::experiment::apply_setting(config->config, assignment);
  });
}

osq_status osq_config_format(const osq_config* config, char** text) {
  return guarded([&] {
    require(config && text, "osq_config_format: null argument");
    *text = duplicate(osq::experiment::format_config(config->config));
  });
}

osq_status osq_config_run_count(const osq_config* config, size_t* count) {
  return guarded([&] {
    require(config && count, "osq_config_run_count: null argument");
    *count = osq::experiment::expand_grid(config->config).size();
  });
}

const char* osq_config_csv_path(const osq_config* config) { return config ? config->config.csv.c_str() : ""; }

void osq_config_free(osq_config* config) { delete config; }

osq_status osq_train(const osq_config* config, const char* checkpoint, osq_epoch_fn on_epoch, void* user,
                     int* skipped) {
  return guarded([&] {
    require(config, "osq_train: null config");
    const auto runs = osq::experiment::expand_grid(config->config);
    if (runs.size() != 1)
      throw osq::ValidationError("train needs exactly one grid point; the config expands to " +
                                 std::to_string(runs.size()) + " runs (use sweep)");
    const auto& run = runs.front();
    const std::string& csv = config->config.csv;
    if (skipped) *skipped = 0;
    if (osq::experiment::completed_runs(csv).count(run.run_id)) {
      if (skipped) *skipped = 1;
      return;
    }
    osq::train::EpochCallback cb;
    if (on_epoch)
      cb = [&](const osq::train::EpochRecord& e) {
        const osq_epoch c{e.epoch, e.train_loss, e.lr, e.test_acc, e.grad_probe, e.mad.has_value() ? 1 : 0,
                          e.mad.value_or(0.0), e.wall_seconds};
        on_epoch(run.run_id.c_str(), &c, user);
      };
    const auto rows = osq::experiment::execute(run, cb, checkpoint ? checkpoint : "");
    osq::experiment::append_rows(csv, rows);
  });
}

osq_status osq_workers_from_env(int* workers) {
  return guarded([&] {
    require(workers, "osq_workers_from_env: null argument");
    *workers = osq::experiment::workers_from_env();
  });
}

osq_status osq_sweep(const osq_config* config, int workers, osq_run_fn on_run, void* user,
                     osq_sweep_summary* summary) {
  return guarded([&] {
    require(config, "osq_sweep: null config");
    if (workers < 0) throw osq::ParameterError("worker count must be >= 0");
    const int w = workers == 0 ? osq::experiment::workers_from_env() : workers;
    const auto runs = osq::experiment::expand_grid(config->config);
    osq::experiment::RunCallback cb;
    if (on_run)
      cb = [&](const osq::experiment::RunSpec& run, const std::vector<osq::experiment::ResultRow>& rows) {
        on_run(run.run_id.c_str(), rows.empty() ? 0.0 : rows.back().test_acc, user);
      };
    const auto s = osq::experiment::run_sweep(runs, config->config.csv, w, cb);
    if (summary) *summary = osq_sweep_summary{s.total, s.skipped, s.completed};
  });
}

osq_status osq_verify(int quick, osq_verification** out) {
  return guarded([&] {
    require(out, "osq_verify: null argument");
    auto v = std::make_unique<osq_verification>();
    v->checks = osq::theorems::run_verification(quick != 0);
    *out = v.release();
  });
}

size_t osq_verification_count(const osq_verification* v) { return v ? v->checks.size() : 0; }

osq_status osq_verification_check(const osq_verification* v, size_t index, const char** name, int* passed,
                                  const char** detail) {
  return guarded([&] {
    require(v, "osq_verification_check: null handle");
    if (index >= v->checks.size()) throw osq::ParameterError("check index out of range");
    const auto& c = v->checks[index];
    if (name) *name = c.name.c_str();
    if (passed) *passed = c.passed ? 1 : 0;
    if (detail) *detail = c.detail.c_str();
  });
}

void osq_verification_free(osq_verification* v) { delete v; }

osq_status osq_plot(const char* csv_path, const char* metric, const char* axis, const char* svg_path) {
  return guarded([&] {
    require(csv_path && metric && axis && svg_path, "osq_plot: null argument");
    const auto m = osq::experiment::parse_metric(metric);
    const auto a = osq::experiment::parse_axis(axis);
    const auto rows = osq::experiment::read_csv(csv_path);
    const std::string svg = osq::experiment::render_svg(rows, m, a);
    const auto parent = std::filesystem::path(svg_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(svg_path, std::ios::binary | std::ios::trunc);
    if (!f) throw osq::IoError(std::string("cannot write '") + svg_path + "'");
    f << svg;
    if (!f.flush()) throw osq::IoError(std::string("write to '") + svg_path + "' failed");
  });
}

}  // extern "C"
