#include "osq/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "osq/error.hpp"

namespace osq::experiment {

using graph::Family;
using models::Arch;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

template <typename N>
N number(std::string_view key, std::string_view token) {
  N value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ValidationError(std::string(key) + ": '" + std::string(token) + "' is not a number");
  return value;
}

bool boolean(std::string_view key, std::string_view token) {
  if (token == "true" || token == "on" || token == "1" || token == "yes") return true;
  if (token == "false" || token == "off" || token == "0" || token == "no") return false;
  throw ValidationError(std::string(key) + ": '" + std::string(token) + "' is not a boolean");
}

template <typename V, typename F>
std::vector<V> list(std::string_view key, std::string_view value, F parse) {
  std::vector<V> out;
  for (auto token : split(value, ',')) {
    if (token.empty()) throw ValidationError(std::string(key) + ": empty list element");
    out.push_back(parse(token));
  }
  return out;
}

std::string shortest(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

template <typename V, typename F>
std::string join(const std::vector<V>& xs, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

}  // namespace

void apply_setting(ExperimentConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ValidationError("expected 'section.key = value', got '" + std::string(assignment) + "'");
  const auto key = trim(assignment.substr(0, eq));
  const auto value = trim(assignment.substr(eq + 1));
  if (value.empty()) throw ValidationError(std::string(key) + ": missing value");
  auto ints = [&](std::string_view t) { return number<int>(key, t); };

  try {
    if (key == "task.family") c.family = graph::parse_family(value);
    else if (key == "task.n") c.n = list<int>(key, value, ints);
    else if (key == "task.k") c.k = list<int>(key, value, ints);
    else if (key == "task.r") c.r = list<int>(key, value, ints);
    else if (key == "task.L") c.L = number<int>(key, value);
    else if (key == "task.distinct_labels") c.distinct_labels = boolean(key, value);
    else if (key == "task.central_ids") {
      if (value == "distinct") c.central_ids = graph::CentralIds::Distinct;
      else if (value == "shared") c.central_ids = graph::CentralIds::Shared;
      else throw ValidationError("task.central_ids must be distinct or shared");
    } else if (key == "task.train_count") c.train_count = number<int>(key, value);
    else if (key == "task.test_count") c.test_count = number<int>(key, value);
    else if (key == "task.seed") c.data_seed = number<std::uint64_t>(key, value);
    else if (key == "model.arch") c.archs = list<Arch>(key, value, models::parse_arch);
    else if (key == "model.hidden") c.hidden = list<int>(key, value, ints);
    else if (key == "model.layers") {
      c.layers_match_radius = value == "radius";
      if (c.layers_match_radius) c.layers.reset();
      else c.layers = number<int>(key, value);
    }
    else if (key == "model.heads") c.heads = number<int>(key, value);
    else if (key == "model.dropout") c.dropout = number<double>(key, value);
    else if (key == "model.vn") c.vn = list<bool>(key, value, [&](std::string_view t) { return boolean(key, t); });
    else if (key == "model.vn_count") c.vn_count = number<int>(key, value);
    else if (key == "model.vn_aggregation") c.vn_aggregation = models::parse_aggregation(value);
    else if (key == "train.lr") {
      if (value == "default") c.lr.clear();
      else c.lr = list<double>(key, value, [&](std::string_view t) { return number<double>(key, t); });
    } else if (key == "train.batch") c.batch_size = number<int>(key, value);
    else if (key == "train.epochs") c.epochs = number<int>(key, value);
    else if (key == "train.scheduler_factor") c.scheduler_factor = number<double>(key, value);
    else if (key == "train.scheduler_patience") c.scheduler_patience = number<int>(key, value);
    else if (key == "train.precision") {
      if (value == "f32") c.precision = train::Precision::F32;
      else if (value == "f64") c.precision = train::Precision::F64;
      else throw ValidationError("train.precision must be f32 or f64");
    } else if (key == "train.seeds")
      c.seeds = list<std::uint64_t>(key, value, [&](std::string_view t) { return number<std::uint64_t>(key, t); });
    else if (key == "train.eval_every") c.eval_every = number<int>(key, value);
    else if (key == "train.probe_samples") c.probe_samples = number<int>(key, value);
    else if (key == "train.wall_time") c.wall_time = boolean(key, value);
    else if (key == "output.csv") c.csv = std::string(value);
    else if (key == "output.svg_dir") c.svg_dir = std::string(value);
    else throw ValidationError("unknown config key '" + std::string(key) + "'");
  } catch (const ParameterError& e) {
    throw ValidationError(std::string(key) + ": " + e.what());
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    try {
      apply_setting(c, line);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& c) {
  auto str = [](auto x) { return std::to_string(x); };
  auto onoff = [](bool b) { return std::string(b ? "on" : "off"); };
  std::ostringstream os;
  os << "task.family = " << graph::family_name(c.family) << "\n"
     << "task.n = " << join(c.n, str) << "\n"
     << "task.k = " << join(c.k, str) << "\n"
     << "task.r = " << join(c.r, str) << "\n"
     << "task.L = " << c.L << "\n"
     << "task.distinct_labels = " << onoff(c.distinct_labels) << "\n"
     << "task.central_ids = " << (c.central_ids == graph::CentralIds::Shared ? "shared" : "distinct") << "\n"
     << "task.train_count = " << c.train_count << "\n"
     << "task.test_count = " << c.test_count << "\n"
     << "task.seed = " << c.data_seed << "\n"
     << "model.arch = " << join(c.archs, [](Arch a) { return std::string(models::arch_name(a)); }) << "\n"
     << "model.hidden = " << join(c.hidden, str) << "\n";
  if (c.layers_match_radius) os << "model.layers = radius\n";
  else if (c.layers) os << "model.layers = " << *c.layers << "\n";
  os << "model.heads = " << c.heads << "\n";
  if (c.dropout) os << "model.dropout = " << shortest(*c.dropout) << "\n";
  os << "model.vn = " << join(c.vn, onoff) << "\n"
     << "model.vn_count = " << c.vn_count << "\n"
     << "model.vn_aggregation = " << models::aggregation_name(c.vn_aggregation) << "\n"
     << "train.lr = " << (c.lr.empty() ? std::string("default") : join(c.lr, shortest)) << "\n"
     << "train.batch = " << c.batch_size << "\n"
     << "train.epochs = " << c.epochs << "\n"
     << "train.scheduler_factor = " << shortest(c.scheduler_factor) << "\n"
     << "train.scheduler_patience = " << c.scheduler_patience << "\n"
     << "train.precision = " << (c.precision == train::Precision::F64 ? "f64" : "f32") << "\n"
     << "train.seeds = " << join(c.seeds, str) << "\n"
     << "train.eval_every = " << c.eval_every << "\n"
     << "train.probe_samples = " << c.probe_samples << "\n"
     << "train.wall_time = " << onoff(c.wall_time) << "\n"
     << "output.csv = " << c.csv << "\n"
     << "output.svg_dir = " << c.svg_dir << "\n";
  return os.str();
}

int problem_radius(Family family, int r) {
  switch (family) {
    case Family::TwoRadius: return 2;
    case Family::RingTransfer: return r;
    case Family::TreeNeighborsMatch: return r + 1;
  }
  return r;
}

double default_lr(Arch arch) {
  switch (arch) {
    case Arch::GCN: return 5e-4;
    case Arch::GAT: return 1e-4;
    case Arch::GIN: return 5e-5;
    case Arch::SAGE: return 5e-5;
    case Arch::MLP: return 1e-4;
    case Arch::SetTransformer: return 1e-3;
  }
  return 1e-3;
}

// ---- grid -------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex8(std::uint64_t x) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(x ^ (x >> 32)));
  return buf;
}

std::string canonical(const RunSpec& r) {
  const auto& m = r.model;
  const auto& t = r.train;
  const auto& d = r.train_data;
  std::ostringstream os;
  os << graph::family_name(d.family) << '|' << d.params.n << '|' << d.params.k << '|' << d.params.L << '|'
     << d.params.r << '|' << d.count << '|' << r.test_data.count << '|' << d.seed << '|' << d.distinct_labels << '|'
     << static_cast<int>(d.central_ids) << '|' << models::arch_name(m.arch) << '|' << m.layers << '|' << m.hidden
     << '|' << m.heads << '|' << shortest(m.dropout) << '|' << (m.vn ? m.vn->count : 0) << '|'
     << (m.vn ? models::aggregation_name(m.vn->aggregation) : "none") << '|' << shortest(t.lr) << '|'
     << t.batch_size << '|' << t.max_epochs << '|' << shortest(t.scheduler_factor) << '|' << t.scheduler_patience
     << '|' << static_cast<int>(t.precision) << '|' << t.seed << '|' << t.eval_every << '|' << t.probe_samples;
  return os.str();
}

}  // namespace

std::vector<RunSpec> expand_grid(const ExperimentConfig& c) {
  auto nonempty = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string(what) + " list is empty");
  };
  nonempty(!c.archs.empty(), "model.arch");
  nonempty(!c.hidden.empty(), "model.hidden");
  nonempty(!c.vn.empty(), "model.vn");
  nonempty(!c.seeds.empty(), "train.seeds");
  if (c.train_count < 1 || c.test_count < 1) throw ValidationError("train_count and test_count must be >= 1");

  const bool two_radius = c.family == Family::TwoRadius;
  if (two_radius) {
    nonempty(!c.n.empty(), "task.n");
    nonempty(!c.k.empty(), "task.k");
  } else {
    nonempty(!c.r.empty(), "task.r");
  }
  const std::vector<int> zero{0};
  const auto& ns = two_radius ? c.n : zero;
  const auto& ks = two_radius ? c.k : zero;
  const auto& rs = two_radius ? zero : c.r;

  std::vector<RunSpec> runs;
  for (int n : ns)
    for (int k : ks)
      for (int r : rs)
        for (Arch arch : c.archs)
          for (int hidden : c.hidden)
            for (bool vn : c.vn) {
              const std::vector<double> lrs = c.lr.empty() ? std::vector<double>{default_lr(arch)} : c.lr;
              for (double lr : lrs)
                for (std::uint64_t seed : c.seeds) {
                  RunSpec run;
                  graph::DatasetSpec d;
                  d.family = c.family;
                  d.params = {n, k, c.L, r};
                  d.count = c.train_count;
                  d.seed = c.data_seed;
                  d.distinct_labels = c.distinct_labels;
                  d.central_ids = c.central_ids;
                  run.train_data = d;
                  run.test_data = d;
                  run.test_data.count = c.test_count;
                  run.test_data.seed = Rng::derive(c.data_seed, 1).next_u64();

                  const auto probe = graph::make_instance(d, 0);
                  const int classes = probe.graph.params.L;
                  run.model = models::default_spec(arch, probe.graph.input_dim(), classes, hidden);
                  if (c.layers_match_radius) run.model.layers = problem_radius(c.family, r);
                  else if (c.layers) run.model.layers = *c.layers;
                  run.model.heads = c.heads;
                  if (c.dropout) run.model.dropout = *c.dropout;
                  if (vn) run.model.vn = models::VNConfig{c.vn_count, c.vn_aggregation};
                  models::validate(run.model);

                  auto& t = run.train;
                  t.lr = lr;
                  t.batch_size = c.batch_size;
                  t.max_epochs = c.epochs;
                  t.scheduler_factor = c.scheduler_factor;
                  t.scheduler_patience = c.scheduler_patience;
                  t.precision = c.precision;
                  t.seed = seed;
                  t.eval_every = c.eval_every;
                  t.probe_samples = c.probe_samples;
                  t.record_time = c.wall_time;
                  train::validate(t);

                  std::ostringstream id;
                  id << graph::family_name(c.family);
                  if (two_radius) id << "_n" << n << "_k" << k;
                  else id << "_r" << r;
                  id << "_" << models::arch_name(arch) << "_h" << hidden << (vn ? "_vn" : "") << "_lr" << shortest(lr)
                     << "_s" << seed;
                  run.run_id = id.str() + "_" + hex8(fnv1a(canonical(run)));
                  runs.push_back(std::move(run));
                }
            }
  return runs;
}

// ---- CSV --------------------------------------------------------------------

std::string format_row(const ResultRow& r) {
  std::string out;
  out.reserve(160);
  out += r.run_id + "," + r.family + "," + std::to_string(r.n) + "," + std::to_string(r.k) + "," +
         std::to_string(r.r) + "," + r.arch + "," + std::to_string(r.hidden) + "," + std::to_string(r.vn) + "," +
         shortest(r.lr) + "," + std::to_string(r.seed) + "," + std::to_string(r.epoch) + "," + shortest(r.train_loss) +
         "," + shortest(r.test_acc) + "," + shortest(r.grad_probe) + "," + (r.mad ? shortest(*r.mad) : "") + "," +
         shortest(r.wall_seconds);
  return out;
}

std::vector<ResultRow> parse_csv(std::string_view text) {
  auto lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.front() != kCsvHeader) throw ValidationError("CSV header does not match the results schema");
  std::vector<ResultRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    const std::string where = "CSV line " + std::to_string(i + 1);
    if (f.size() != 16) throw ValidationError(where + ": expected 16 fields, found " + std::to_string(f.size()));
    ResultRow r;
    r.run_id = std::string(f[0]);
    r.family = std::string(f[1]);
    r.n = number<int>(where, f[2]);
    r.k = number<int>(where, f[3]);
    r.r = number<int>(where, f[4]);
    r.arch = std::string(f[5]);
    r.hidden = number<int>(where, f[6]);
    r.vn = number<int>(where, f[7]);
    r.lr = number<double>(where, f[8]);
    r.seed = number<std::uint64_t>(where, f[9]);
    r.epoch = number<int>(where, f[10]);
    r.train_loss = number<double>(where, f[11]);
    r.test_acc = number<double>(where, f[12]);
    r.grad_probe = number<double>(where, f[13]);
    if (!f[14].empty()) r.mad = number<double>(where, f[14]);
    r.wall_seconds = number<double>(where, f[15]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ResultRow> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read CSV '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (ss.str().empty()) throw ValidationError("CSV '" + path + "' is empty");
  return parse_csv(ss.str());
}

namespace {

template <typename T>
train::TrainReport train_and_save(const RunSpec& run, std::span<const graph::TaskInstance> train_set,
                                  std::span<const graph::TaskInstance> test_set, const train::EpochCallback& on_epoch,
                                  const std::string& checkpoint) {
  auto result = train::train_model<T>(run.model, train_set, test_set, run.train, on_epoch);
  models::save_checkpoint(result.params, checkpoint);
  return std::move(result.report);
}

}  // namespace

std::vector<ResultRow> execute(const RunSpec& run, const train::EpochCallback& on_epoch,
                               const std::string& checkpoint) {
  const auto train_set = graph::sample_dataset(run.train_data);
  const auto test_set = graph::sample_dataset(run.test_data);
  train::TrainReport report;
  if (checkpoint.empty())
    report = train::run_training(run.model, train_set, test_set, run.train, on_epoch);
  else if (run.train.precision == train::Precision::F64)
    report = train_and_save<double>(run, train_set, test_set, on_epoch, checkpoint);
  else
    report = train_and_save<float>(run, train_set, test_set, on_epoch, checkpoint);
  std::vector<ResultRow> rows;
  for (const auto& e : report.epochs) {
    ResultRow r;
    r.run_id = run.run_id;
    r.family = std::string(graph::family_name(run.train_data.family));
    r.n = run.train_data.params.n;
    r.k = run.train_data.params.k;
    r.r = run.train_data.params.r;
    r.arch = std::string(models::arch_name(run.model.arch));
    r.hidden = run.model.hidden;
    r.vn = run.model.vn ? run.model.vn->count : 0;
    r.lr = run.train.lr;
    r.seed = run.train.seed;
    r.epoch = e.epoch;
    r.train_loss = e.train_loss;
    r.test_acc = e.test_acc;
    r.grad_probe = e.grad_probe;
    r.mad = e.mad;
    r.wall_seconds = e.wall_seconds;
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- sweep ------------------------------------------------------------------

namespace {

void write_all(int fd, const std::string& data, const std::string& path) {
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) throw IoError("write to '" + path + "' failed");
    done += static_cast<std::size_t>(n);
  }
}

// Completed run ids. A run's rows are written with one append, so a file that
// does not end in a newline holds a torn final run; that run is cut off.
std::set<std::string> recover(const std::string& path) {
  namespace fs = std::filesystem;
  std::set<std::string> done;
  if (!fs::exists(path) || fs::file_size(path) == 0) return done;
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.back() != '\n') {
    std::vector<std::size_t> starts{0};
    for (std::size_t i = 0; i + 1 < text.size(); ++i)
      if (text[i] == '\n') starts.push_back(i + 1);
    if (starts.size() < 2) throw ValidationError("CSV '" + path + "' has no complete header");
    const std::string_view torn = std::string_view(text).substr(starts.back());
    const std::string_view torn_id = torn.substr(0, torn.find(','));
    auto id_at = [&](std::size_t line) {
      const std::string_view l = std::string_view(text).substr(starts[line]);
      return l.substr(0, l.find(','));
    };
    std::size_t keep = starts.size() - 1;
    const std::size_t last = keep - 1;
    const std::string_view prev = id_at(last);
    const bool same_run = last > 0 && (prev == torn_id || (torn.find(',') == std::string_view::npos &&
                                                           prev.substr(0, torn_id.size()) == torn_id));
    if (same_run)
      while (keep > 1 && id_at(keep - 1) == prev) --keep;
    text.resize(starts[keep]);
    fs::resize_file(path, text.size());
  }
  for (const auto& row : parse_csv(text)) done.insert(row.run_id);
  return done;
}

int open_for_append(const std::string& path) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw IoError("cannot open '" + path + "' for appending");
  if (std::filesystem::file_size(path) == 0) {
    try {
      write_all(fd, std::string(kCsvHeader) + "\n", path);
    } catch (...) {
      ::close(fd);
      throw;
    }
  }
  return fd;
}

struct Closer {
  int fd;
  ~Closer() { ::close(fd); }
};

}  // namespace

std::set<std::string> completed_runs(const std::string& csv_path) { return recover(csv_path); }

void append_rows(const std::string& csv_path, const std::vector<ResultRow>& rows) {
  const int fd = open_for_append(csv_path);
  Closer closer{fd};
  std::string block;
  for (const auto& row : rows) block += format_row(row) + "\n";
  write_all(fd, block, csv_path);
}

SweepSummary run_sweep(const std::vector<RunSpec>& runs, const std::string& csv_path, int workers,
                       const RunCallback& on_run) {
  if (workers < 1) throw ParameterError("worker count must be >= 1");
  std::set<std::string> ids;
  for (const auto& r : runs)
    if (!ids.insert(r.run_id).second) throw ValidationError("duplicate run id '" + r.run_id + "'");

  const auto done = recover(csv_path);
  const int fd = open_for_append(csv_path);
  Closer closer{fd};

  SweepSummary summary;
  summary.total = static_cast<int>(runs.size());
  std::vector<const RunSpec*> pending;
  for (const auto& r : runs) {
    if (done.count(r.run_id)) ++summary.skipped;
    else pending.push_back(&r);
  }

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      try {
        const auto rows = execute(*pending[i]);
        std::string block;
        for (const auto& row : rows) block += format_row(row) + "\n";
        std::lock_guard<std::mutex> lock(writer);
        if (failure) return;
        write_all(fd, block, csv_path);
        ++summary.completed;
        if (on_run) on_run(*pending[i], rows);
      } catch (...) {
        std::lock_guard<std::mutex> lock(writer);
        if (!failure) failure = std::current_exception();
        next.store(pending.size());
        return;
      }
    }
  };
  const int threads = std::min<int>(workers, static_cast<int>(pending.size()));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return summary;
}

int workers_from_env() {
  const char* v = std::getenv("OSQ_WORKERS");
  if (!v || !*v) return 1;
  const int w = number<int>("OSQ_WORKERS", v);
  if (w < 1) throw ParameterError("OSQ_WORKERS must be >= 1");
  return w;
}

// ---- plotting ---------------------------------------------------------------

PlotMetric parse_metric(std::string_view t) {
  if (t == "accuracy" || t == "test_acc") return PlotMetric::Accuracy;
  if (t == "grad-probe" || t == "grad_probe") return PlotMetric::GradProbe;
  if (t == "mad") return PlotMetric::Mad;
  if (t == "loss" || t == "train_loss") return PlotMetric::TrainLoss;
  throw ParameterError("unknown plot metric '" + std::string(t) + "'");
}

PlotAxis parse_axis(std::string_view t) {
  if (t == "n") return PlotAxis::N;
  if (t == "k") return PlotAxis::K;
  if (t == "r") return PlotAxis::R;
  if (t == "epoch") return PlotAxis::Epoch;
  throw ParameterError("unknown plot axis '" + std::string(t) + "'");
}

namespace {

std::optional<double> metric_of(const ResultRow& r, PlotMetric m) {
  switch (m) {
    case PlotMetric::Accuracy: return r.test_acc;
    case PlotMetric::GradProbe: return r.grad_probe;
    case PlotMetric::Mad: return r.mad;
    case PlotMetric::TrainLoss: return r.train_loss;
  }
  return std::nullopt;
}

const char* metric_label(PlotMetric m) {
  switch (m) {
    case PlotMetric::Accuracy: return "test accuracy";
    case PlotMetric::GradProbe: return "gradient norm";
    case PlotMetric::Mad: return "MAD energy";
    case PlotMetric::TrainLoss: return "train loss";
  }
  return "";
}

const char* axis_label(PlotAxis a) {
  switch (a) {
    case PlotAxis::N: return "n";
    case PlotAxis::K: return "k";
    case PlotAxis::R: return "r";
    case PlotAxis::Epoch: return "epoch";
  }
  return "";
}

}  // namespace

std::map<std::string, std::vector<SeriesPoint>> aggregate(const std::vector<ResultRow>& rows, PlotMetric metric,
                                                          PlotAxis axis) {
  if (rows.empty()) throw ValidationError("no result rows to plot");
  std::set<int> hiddens;
  std::set<double> lrs;
  for (const auto& r : rows) {
    hiddens.insert(r.hidden);
    lrs.insert(r.lr);
  }
  auto series_of = [&](const ResultRow& r) {
    std::string s = r.arch;
    if (r.vn) s += "+vn";
    if (hiddens.size() > 1) s += " h" + std::to_string(r.hidden);
    if (lrs.size() > 1) s += " lr" + shortest(r.lr);
    return s;
  };

  std::map<std::string, const ResultRow*> last;
  for (const auto& r : rows) {
    auto& slot = last[r.run_id];
    if (!slot || r.epoch > slot->epoch) slot = &r;
  }

  std::map<std::string, std::map<double, std::vector<double>>> buckets;
  auto add = [&](const ResultRow& r, double x) {
    if (auto v = metric_of(r, metric)) buckets[series_of(r)][x].push_back(*v);
  };
  if (axis == PlotAxis::Epoch) {
    for (const auto& r : rows) add(r, r.epoch);
  } else {
    for (const auto& [id, r] : last)
      add(*r, axis == PlotAxis::N ? r->n : axis == PlotAxis::K ? r->k : r->r);
  }

  std::map<std::string, std::vector<SeriesPoint>> out;
  for (const auto& [series, xs] : buckets)
    for (const auto& [x, vals] : xs) {
      SeriesPoint p;
      p.x = x;
      p.samples = static_cast<int>(vals.size());
      double sum = 0;
      for (double v : vals) sum += v;
      p.mean = sum / p.samples;
      if (p.samples > 1) {
        double ss = 0;
        for (double v : vals) ss += (v - p.mean) * (v - p.mean);
        p.sem = std::sqrt(ss / (p.samples - 1)) / std::sqrt(static_cast<double>(p.samples));
      }
      out[series].push_back(p);
    }
  if (out.empty()) throw ValidationError("no values for the requested metric");
  return out;
}

std::string render_svg(const std::vector<ResultRow>& rows, PlotMetric metric, PlotAxis axis) {
  const auto data = aggregate(rows, metric, axis);
  const bool log_y = metric == PlotMetric::GradProbe;
  const double W = 640, H = 420, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& [s, pts] : data)
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      const double lo = p.mean - p.sem, hi = p.mean + p.sem;
      if (log_y) {
        if (p.mean <= 0) continue;
        ymin = std::min(ymin, lo > 0 ? lo : p.mean);
        ymax = std::max(ymax, hi);
      } else {
        ymin = std::min(ymin, lo);
        ymax = std::max(ymax, hi);
      }
    }
  if (!std::isfinite(ymin)) throw ValidationError("no positive values for a log-scale plot");
  if (xmax == xmin) {
    xmin -= 1;
    xmax += 1;
  }
  if (log_y) {
    ymin = std::pow(10.0, std::floor(std::log10(ymin)));
    ymax = std::pow(10.0, std::ceil(std::log10(ymax)));
    if (ymax <= ymin) ymax = ymin * 10;
  } else {
    if (metric == PlotMetric::Accuracy) {
      ymin = std::min(ymin, 0.0);
      ymax = std::max(ymax, 1.0);
    }
    if (ymax == ymin) ymax = ymin + 1;
  }
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) {
    const double t = log_y ? (std::log10(y) - std::log10(ymin)) / (std::log10(ymax) - std::log10(ymin))
                           : (y - ymin) / (ymax - ymin);
    return top + (1 - t) * ph;
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return std::string(buf);
  };
  auto tick = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << metric_label(metric)
     << " vs " << axis_label(axis) << "</text>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  std::vector<double> yticks;
  if (log_y) {
    for (double v = ymin; v <= ymax * 1.0001; v *= 10) yticks.push_back(v);
  } else {
    for (int i = 0; i <= 5; ++i) yticks.push_back(ymin + (ymax - ymin) * i / 5.0);
  }
  for (double v : yticks)
    os << "<line x1=\"" << left - 4 << "\" x2=\"" << left << "\" y1=\"" << num(sy(v)) << "\" y2=\"" << num(sy(v))
       << "\" stroke=\"black\"/><text x=\"" << left - 6 << "\" y=\"" << num(sy(v) + 4) << "\" text-anchor=\"end\">"
       << tick(v) << "</text>\n";
  std::set<double> xs;
  for (const auto& [s, pts] : data)
    for (const auto& p : pts) xs.insert(p.x);
  const std::size_t stride = std::max<std::size_t>(1, xs.size() / 10);
  std::size_t i = 0;
  for (double x : xs)
    if (i++ % stride == 0)
      os << "<line x1=\"" << num(sx(x)) << "\" x2=\"" << num(sx(x)) << "\" y1=\"" << top + ph << "\" y2=\""
         << top + ph + 4 << "\" stroke=\"black\"/><text x=\"" << num(sx(x)) << "\" y=\"" << top + ph + 18
         << "\" text-anchor=\"middle\">" << tick(x) << "</text>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << axis_label(axis)
     << "</text>\n<text transform=\"translate(18," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << metric_label(metric) << (log_y ? " (log)" : "") << "</text>\n";

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::size_t si = 0;
  for (const auto& [series, pts] : data) {
    const char* color = palette[si % 8];
    std::string path;
    for (const auto& p : pts) {
      if (log_y && p.mean <= 0) continue;
      path += (path.empty() ? "" : " ") + num(sx(p.x)) + "," + num(sy(p.mean));
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << path << "\"/>\n";
    for (const auto& p : pts) {
      if (log_y && p.mean <= 0) continue;
      if (p.sem > 0) {
        const double lo = log_y ? std::max(p.mean - p.sem, ymin) : p.mean - p.sem;
        os << "<line x1=\"" << num(sx(p.x)) << "\" x2=\"" << num(sx(p.x)) << "\" y1=\"" << num(sy(lo)) << "\" y2=\""
           << num(sy(p.mean + p.sem)) << "\" stroke=\"" << color << "\"/>\n";
      }
      os << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.mean)) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(si);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4
       << "\">" << series << "</text>\n";
    ++si;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace osq::experiment
