// osqlab: command-line front end over the osq C API.

#include <cstdio>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "osq/osq.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

int exit_code(osq_status s) {
  switch (s) {
    case OSQ_OK: return 0;
    case OSQ_E_USAGE: return kExitUsage;
    case OSQ_E_VALIDATION:
    case OSQ_E_IO:
    case OSQ_E_STATE: return kExitValidation;
    case OSQ_E_NUMERICAL:
    case OSQ_E_INTERNAL: return kExitNumerical;
  }
  return kExitNumerical;
}

struct Failure {
  int code;
};

void check(osq_status s) {
  if (s == OSQ_OK) return;
  std::cerr << "osqlab: error: " << osq_last_error() << '\n';
  throw Failure{exit_code(s)};
}

void usage(const std::string& message) {
  std::cerr << "osqlab: " << message << '\n';
  throw Failure{kExitUsage};
}

// Owning wrappers for C handles.
template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { if (p) Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Dataset = Handle<osq_dataset, osq_dataset_free>;
using Config = Handle<osq_config, osq_config_free>;
using Verification = Handle<osq_verification, osq_verification_free>;

struct Text {
  char* p = nullptr;
  ~Text() { osq_string_free(p); }
  char** out() { return &p; }
};

struct GenerateArgs {
  std::string family;
  std::optional<int> n, k, r;
  int L = 10;
  int count = 1;
  std::uint64_t seed = 0;
  bool distinct = false;
  bool shared_ids = false;
  std::string out;
  bool force = false;
};

int cmd_generate(const GenerateArgs& a) {
  osq_dataset_spec spec;
  osq_dataset_spec_init(&spec);
  spec.family = a.family.c_str();
  const bool two_radius = a.family == "two-radius" || a.family == "tworadius";
  if (two_radius) {
    if (!a.n) usage("generate: --n is required for two-radius");
    spec.n = *a.n;
    spec.k = a.k.value_or(1);
    spec.r = 0;
  } else {
    if (!a.r) usage("generate: --r is required for " + a.family);
    spec.n = 0;
    spec.k = 0;
    spec.r = *a.r;
  }
  spec.L = a.L;
  spec.count = a.count;
  spec.seed = a.seed;
  spec.distinct_labels = a.distinct;
  spec.shared_central_ids = a.shared_ids;
  Dataset ds;
  check(osq_dataset_generate(&spec, ds.out()));
  if (a.out.empty() || a.out == "-") {
    Text text;
    check(osq_dataset_serialize(ds.get(), text.out()));
    std::fputs(text.p, stdout);
  } else {
    check(osq_dataset_write(ds.get(), a.out.c_str(), a.force));
    std::cerr << "wrote " << osq_dataset_size(ds.get()) << " instances to " << a.out << '\n';
  }
  return 0;
}

struct DiagnoseArgs {
  std::string input;
  std::optional<std::size_t> index;
  std::string curvature_csv;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  Dataset ds;
  if (a.input == "-") {
    const std::string text{std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
    check(osq_dataset_parse(text.c_str(), 1, ds.out()));
  } else {
    check(osq_dataset_read(a.input.c_str(), 1, ds.out()));
  }
  const std::size_t size = osq_dataset_size(ds.get());
  std::size_t lo = 0, hi = size;
  if (a.index) {
    lo = *a.index;
    hi = lo + 1;
  }
  std::FILE* csv = nullptr;
  if (!a.curvature_csv.empty()) {
    csv = std::fopen(a.curvature_csv.c_str(), "wb");
    if (!csv) {
      std::cerr << "osqlab: error: cannot write '" << a.curvature_csv << "'\n";
      throw Failure{kExitValidation};
    }
  }
  int code = 0;
  try {
    for (std::size_t i = lo; i < hi; ++i) {
      Text report, curv;
      check(osq_diagnose(ds.get(), i, report.out(), csv ? curv.out() : nullptr));
      if (hi - lo > 1) std::printf("%sinstance = %zu\n", i > lo ? "\n" : "", i);
      std::fputs(report.p, stdout);
      if (csv) {
        std::string body = curv.p;
        if (i > lo) body = body.substr(body.find('\n') + 1);
        std::fputs(body.c_str(), csv);
      }
    }
  } catch (const Failure& f) {
    code = f.code;
  }
  if (csv) std::fclose(csv);
  if (code) throw Failure{code};
  return 0;
}

void load_config(Config& cfg, const std::string& path, const std::vector<std::string>& settings) {
  if (path.empty()) check(osq_config_default(cfg.out()));
  else check(osq_config_read(path.c_str(), cfg.out()));
  for (const auto& s : settings) check(osq_config_set(cfg.get(), s.c_str()));
}

struct RunArgs {
  std::string config;
  std::vector<std::string> settings;
  std::string checkpoint;
  std::optional<int> workers;
  bool quiet = false;
  bool dry_run = false;
};

void print_epoch(const char* run_id, const osq_epoch* e, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::printf("%s epoch %d loss %.6g lr %.3g acc %.4f grad %.4g", run_id, e->epoch, e->train_loss, e->lr, e->test_acc,
              e->grad_probe);
  if (e->has_mad) std::printf(" mad %.4g", e->mad);
  std::printf("\n");
  std::fflush(stdout);
}

int cmd_train(RunArgs a) {
  Config cfg;
  load_config(cfg, a.config, a.settings);
  if (a.dry_run) {
    Text text;
    check(osq_config_format(cfg.get(), text.out()));
    std::fputs(text.p, stdout);
    return 0;
  }
  int skipped = 0;
  check(osq_train(cfg.get(), a.checkpoint.empty() ? nullptr : a.checkpoint.c_str(), print_epoch, &a.quiet, &skipped));
  if (skipped) std::printf("run already present in %s; nothing to do\n", osq_config_csv_path(cfg.get()));
  else std::printf("rows appended to %s\n", osq_config_csv_path(cfg.get()));
  return 0;
}

void print_run(const char* run_id, double acc, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::printf("done %s final_acc %.4f\n", run_id, acc);
  std::fflush(stdout);
}

int cmd_sweep(RunArgs a) {
  Config cfg;
  load_config(cfg, a.config, a.settings);
  std::size_t count = 0;
  check(osq_config_run_count(cfg.get(), &count));
  if (a.dry_run) {
    std::printf("%zu runs\n", count);
    return 0;
  }
  int workers = 0;
  if (a.workers) {
    if (*a.workers < 1) usage("sweep: --workers must be >= 1");
    workers = *a.workers;
  } else {
    check(osq_workers_from_env(&workers));
  }
  osq_sweep_summary s{};
  check(osq_sweep(cfg.get(), workers, print_run, &a.quiet, &s));
  std::printf("runs %d skipped %d completed %d csv %s\n", s.total, s.skipped, s.completed,
              osq_config_csv_path(cfg.get()));
  return 0;
}

int cmd_verify(bool quick) {
  Verification v;
  check(osq_verify(quick, v.out()));
  const std::size_t n = osq_verification_count(v.get());
  std::vector<std::string> failing;
  std::size_t width = 5;
  for (std::size_t i = 0; i < n; ++i) {
    const char* name = nullptr;
    check(osq_verification_check(v.get(), i, &name, nullptr, nullptr));
    width = std::max(width, std::string(name).size());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const char *name = nullptr, *detail = nullptr;
    int passed = 0;
    check(osq_verification_check(v.get(), i, &name, &passed, &detail));
    std::printf("%-*s  %s  %s\n", static_cast<int>(width), name, passed ? "PASS" : "FAIL", detail);
    if (!passed) failing.emplace_back(name);
  }
  std::printf("%zu/%zu checks passed\n", n - failing.size(), n);
  if (failing.empty()) return 0;
  std::printf("failing:");
  for (const auto& f : failing) std::printf(" %s", f.c_str());
  std::printf("\n");
  return kExitNumerical;
}

struct PlotArgs {
  std::string csv;
  std::string metric = "accuracy";
  std::string axis = "n";
  std::string out;
};

int cmd_plot(const PlotArgs& a) {
  const std::string out = a.out.empty() ? a.metric + "_vs_" + a.axis + ".svg" : a.out;
  check(osq_plot(a.csv.c_str(), a.metric.c_str(), a.axis.c_str(), out.c_str()));
  std::cerr << "wrote " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Oversquashing lab: task generators, diagnostics, training sweeps, theorem checks."};
  app.set_version_flag("--version", std::string(osq_version()));
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a serialized dataset of task graphs");
  g->add_option("--family", gen.family, "two-radius, ring-transfer or tree-neighbors-match")->required();
  g->add_option("--n", gen.n, "Source count (two-radius)");
  g->add_option("--k", gen.k, "Central count (two-radius, default 1)");
  g->add_option("--r", gen.r, "Ring radius or tree depth");
  g->add_option("--L", gen.L, "Label classes")->capture_default_str();
  g->add_option("--count", gen.count, "Instances")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_flag("--distinct", gen.distinct, "Distinct source labels 1..n");
  g->add_flag("--shared-central-ids", gen.shared_ids, "Give every central node the same identifier");
  g->add_option("--out,-o", gen.out, "Output file (stdout when omitted)");
  g->add_flag("--force", gen.force, "Overwrite an existing output file");

  DiagnoseArgs diag;
  auto* d = app.add_subcommand("diagnose", "Spectral gap, Cheeger constant, resistance and curvature of graphs");
  d->add_option("input", diag.input, "Graph file, or - for stdin")->required();
  d->add_option("--index", diag.index, "Only this instance");
  d->add_option("--curvature-csv", diag.curvature_csv, "Write per-edge curvature here");

  RunArgs tr;
  auto* t = app.add_subcommand("train", "Train the single run described by a config");
  t->add_option("--config,-c", tr.config, "Config file (defaults when omitted)");
  t->add_option("--set,-s", tr.settings, "Override, e.g. model.arch=gat")->allow_extra_args(false);
  t->add_option("--checkpoint", tr.checkpoint, "Save final parameters here");
  t->add_flag("--quiet,-q", tr.quiet, "No per-epoch output");
  t->add_flag("--dry-run", tr.dry_run, "Print the resolved config and exit");

  RunArgs sw;
  auto* s = app.add_subcommand("sweep", "Run a config's full grid, resuming from the CSV");
  s->add_option("--config,-c", sw.config, "Config file")->required();
  s->add_option("--set,-s", sw.settings, "Override, e.g. train.epochs=50")->allow_extra_args(false);
  s->add_option("--workers,-j", sw.workers, "Concurrent runs (default OSQ_WORKERS or 1)");
  s->add_flag("--quiet,-q", sw.quiet, "No per-run output");
  s->add_flag("--dry-run", sw.dry_run, "Print the run count and exit");

  bool quick = false;
  auto* v = app.add_subcommand("verify", "Run the exact theorem and measure checks");
  v->add_flag("--quick", quick, "Small sizes only");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "Render mean and standard error over seeds from a results CSV");
  p->add_option("csv", pl.csv, "Results CSV")->required();
  p->add_option("--metric,-m", pl.metric, "accuracy, grad-probe, mad or loss")->capture_default_str();
  p->add_option("--axis,-x", pl.axis, "n, k, r or epoch")->capture_default_str();
  p->add_option("--out,-o", pl.out, "SVG path (default <metric>_vs_<axis>.svg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*d) return cmd_diagnose(diag);
    if (*t) return cmd_train(tr);
    if (*s) return cmd_sweep(sw);
    if (*v) return cmd_verify(quick);
    if (*p) return cmd_plot(pl);
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitUsage;
}
