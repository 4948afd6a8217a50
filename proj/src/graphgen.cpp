#include "osq/graphgen.hpp"

#include <algorithm>
#include <charconv>
#include <queue>
#include <set>
#include <sstream>

#include "osq/error.hpp"

namespace osq::graph {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::TwoRadius: return "two-radius";
    case Family::RingTransfer: return "ring";
    case Family::TreeNeighborsMatch: return "tree";
  }
  return "?";
}

Family parse_family(std::string_view token) {
  if (token == "two-radius" || token == "tworadius") return Family::TwoRadius;
  if (token == "ring" || token == "ring-transfer") return Family::RingTransfer;
  if (token == "tree" || token == "tree-neighbors-match") return Family::TreeNeighborsMatch;
  throw ParameterError("unknown task family '" + std::string(token) + "'");
}

char role_code(Role r) {
  switch (r) {
    case Role::Source: return 'S';
    case Role::Central: return 'C';
    case Role::Target: return 'T';
  }
  return '?';
}

int TaskGraph::id_vocab() const {
  switch (family) {
    case Family::TwoRadius: return params.n + params.k + 1;
    case Family::RingTransfer: return 3;
    case Family::TreeNeighborsMatch: return params.n + 1;
  }
  return 0;
}

std::vector<int> TaskGraph::nodes_with_role(Role role) const {
  std::vector<int> out;
  for (int v = 0; v < node_count(); ++v)
    if (attrs[v].role == role) out.push_back(v);
  return out;
}

std::vector<std::vector<int>> TaskGraph::adjacency() const {
  std::vector<std::vector<int>> adj(attrs.size());
  for (const auto& e : edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

std::vector<int> TaskGraph::degrees() const {
  std::vector<int> deg(attrs.size(), 0);
  for (const auto& e : edges) {
    ++deg[e.u];
    ++deg[e.v];
  }
  return deg;
}

template <typename T>
Matrix<T> TaskGraph::features() const {
  const int ids = id_vocab();
  Matrix<T> x(attrs.size(), static_cast<std::size_t>(input_dim()), T{0});
  for (std::size_t v = 0; v < attrs.size(); ++v) {
    x(v, static_cast<std::size_t>(attrs[v].iota)) = T{1};
    x(v, static_cast<std::size_t>(ids + attrs[v].label)) = T{1};
  }
  return x;
}

template Matrix<float> TaskGraph::features<float>() const;
template Matrix<double> TaskGraph::features<double>() const;

namespace {

void sort_edges(TaskGraph& g) { std::sort(g.edges.begin(), g.edges.end()); }

}  // namespace

TaskInstance make_two_radius(int n, int k, int L, Rng& rng, bool distinct_labels,
                             CentralIds central_ids) {
  if (n < 1 || k < 1 || L < 1)
    throw ParameterError("two-radius requires n >= 1, k >= 1, L >= 1");
  if (distinct_labels && L != n)
    throw ParameterError("distinct-label mode requires L = n");

  TaskInstance inst;
  TaskGraph& g = inst.graph;
  g.family = Family::TwoRadius;
  g.params = {n, k, L, 0};
  g.attrs.resize(static_cast<std::size_t>(2 * n + k));

  const auto source_ids = rng.permutation(n, 1);
  std::vector<int> labels;
  if (distinct_labels) {
    labels = rng.permutation(n, 1);
  } else {
    labels.resize(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.between(1, L));
  }
  const auto target_ids = rng.permutation(n, 1);

  for (int i = 0; i < n; ++i) {
    g.attrs[i] = {Role::Source, source_ids[i], labels[i]};
    g.attrs[n + i] = {Role::Target, target_ids[i], L};
  }
  for (int c = 0; c < k; ++c) {
    const int iota = central_ids == CentralIds::Shared ? 0 : n + 1 + c;
    g.attrs[2 * n + c] = {Role::Central, iota, 0};
  }
  for (int v = 0; v < 2 * n; ++v)
    for (int c = 0; c < k; ++c) g.edges.push_back({v, 2 * n + c});
  sort_edges(g);
  inst.supervision = derive_supervision(g);
  return inst;
}

TaskInstance make_ring_transfer(int r, int L, Rng& rng) {
  if (r < 1) throw ParameterError("ring transfer requires r >= 1");
  if (L < 1) throw ParameterError("ring transfer requires L >= 1");

  TaskInstance inst;
  TaskGraph& g = inst.graph;
  g.family = Family::RingTransfer;
  const int nodes = 2 * r;
  g.params = {1, nodes - 2, L, r};
  g.attrs.resize(static_cast<std::size_t>(nodes));
  for (int v = 0; v < nodes; ++v) {
    const int label = static_cast<int>(rng.between(1, L));
    if (v == 0)
      g.attrs[v] = {Role::Source, 1, label};
    else if (v == r)
      g.attrs[v] = {Role::Target, 2, label};
    else
      g.attrs[v] = {Role::Central, 0, label};
  }
  if (r == 1) {
    // The two length-1 arcs would be parallel edges; keep a simple graph.
    g.edges.push_back({0, 1});
  } else {
    for (int v = 0; v < nodes; ++v) {
      const int w = (v + 1) % nodes;
      g.edges.push_back({std::min(v, w), std::max(v, w)});
    }
  }
  sort_edges(g);
  inst.supervision = derive_supervision(g);
  return inst;
}

TaskInstance make_tree_neighbors_match(int depth, Rng& rng, int L) {
  if (depth < 1) throw ParameterError("tree neighbors-match requires depth >= 1");
  if (depth > 16) throw ParameterError("tree depth above 16 is not supported");
  const int leaves = 1 << depth;
  if (L == 0) L = leaves;
  if (L < 1) throw ParameterError("tree neighbors-match requires L >= 1");

  TaskInstance inst;
  TaskGraph& g = inst.graph;
  g.family = Family::TreeNeighborsMatch;
  const int internal = leaves - 1;
  g.params = {leaves, internal, L, depth};
  g.attrs.resize(static_cast<std::size_t>(internal + leaves + 1));

  // Heap layout: node i has children 2i+1, 2i+2; leaves follow the internal nodes.
  for (int v = 0; v < internal; ++v) g.attrs[v] = {Role::Central, 0, 0};
  const auto ids = rng.permutation(leaves, 1);
  for (int i = 0; i < leaves; ++i)
    g.attrs[internal + i] = {Role::Source, ids[i], static_cast<int>(rng.between(1, L))};
  const int target = internal + leaves;
  g.attrs[target] = {Role::Target, static_cast<int>(rng.between(1, leaves)), L};

  for (int v = 0; v < internal; ++v) {
    g.edges.push_back({v, 2 * v + 1});
    g.edges.push_back({v, 2 * v + 2});
  }
  g.edges.push_back({0, target});
  sort_edges(g);
  inst.supervision = derive_supervision(g);
  return inst;
}

TaskInstance make_instance(const DatasetSpec& spec, std::uint64_t index) {
  Rng rng = Rng::derive(spec.seed, index);
  const auto& p = spec.params;
  switch (spec.family) {
    case Family::TwoRadius:
      return make_two_radius(p.n, p.k, p.L, rng, spec.distinct_labels, spec.central_ids);
    case Family::RingTransfer:
      return make_ring_transfer(p.r, p.L, rng);
    case Family::TreeNeighborsMatch:
      return make_tree_neighbors_match(p.r, rng, p.L);
  }
  throw ParameterError("unknown family");
}

std::vector<TaskInstance> sample_dataset(const DatasetSpec& spec) {
  if (spec.count < 1) throw ParameterError("dataset count must be >= 1");
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) out.push_back(make_instance(spec, static_cast<std::uint64_t>(i)));
  return out;
}

std::map<int, int> derive_supervision(const TaskGraph& g) {
  std::map<int, int> sup;
  const auto sources = g.nodes_with_role(Role::Source);
  const auto targets = g.nodes_with_role(Role::Target);
  if (g.family == Family::RingTransfer) {
    if (sources.size() != 1)
      throw ValidationError("ring transfer needs exactly one source node");
    for (int t : targets) sup[t] = g.attrs[sources[0]].label;
    return sup;
  }
  std::map<int, int> label_by_id;
  for (int s : sources) {
    if (!label_by_id.emplace(g.attrs[s].iota, g.attrs[s].label).second)
      throw ValidationError("duplicate source identifier " + std::to_string(g.attrs[s].iota));
  }
  for (int t : targets) {
    auto it = label_by_id.find(g.attrs[t].iota);
    if (it == label_by_id.end())
      throw ValidationError("target node " + std::to_string(t) + " identifier " +
                            std::to_string(g.attrs[t].iota) + " matches no source");
    sup[t] = it->second;
  }
  return sup;
}

std::vector<int> bfs_distances(const std::vector<std::vector<int>>& adj, int source) {
  std::vector<int> dist(adj.size(), -1);
  std::queue<int> frontier;
  dist[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop();
    for (int w : adj[v]) {
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        frontier.push(w);
      }
    }
  }
  return dist;
}

bool is_connected(const TaskGraph& g) {
  if (g.node_count() == 0) return false;
  const auto dist = bfs_distances(g.adjacency(), 0);
  return std::none_of(dist.begin(), dist.end(), [](int d) { return d < 0; });
}

namespace {

[[noreturn]] void invalid(const std::string& what) { throw ValidationError(what); }

void check_id_permutation(const TaskGraph& g, Role role, int n, const char* what) {
  std::vector<int> seen(static_cast<std::size_t>(n) + 1, 0);
  for (const auto& a : g.attrs) {
    if (a.role != role) continue;
    if (a.iota < 1 || a.iota > n)
      invalid(std::string(what) + " identifier " + std::to_string(a.iota) + " outside {1.." +
              std::to_string(n) + "}");
    if (seen[a.iota]++)
      invalid(std::string("duplicate ") + what + " identifier " + std::to_string(a.iota));
  }
}

void validate_two_radius(const TaskGraph& g) {
  const auto [n, k, L, r] = g.params;
  if (n < 1 || k < 1 || L < 1) invalid("two-radius parameters must satisfy n, k, L >= 1");
  if (g.node_count() != 2 * n + k)
    invalid("two-radius graph must have 2n+k = " + std::to_string(2 * n + k) + " nodes");
  if (static_cast<int>(g.nodes_with_role(Role::Source).size()) != n ||
      static_cast<int>(g.nodes_with_role(Role::Target).size()) != n)
    invalid("two-radius graph must have n source and n target nodes");
  check_id_permutation(g, Role::Source, n, "source");
  check_id_permutation(g, Role::Target, n, "target");
  const auto deg = g.degrees();
  for (int v = 0; v < g.node_count(); ++v) {
    const auto& a = g.attrs[v];
    if (a.role == Role::Central) {
      if (a.iota != 0 && (a.iota <= n || a.iota > n + k))
        invalid("central identifier " + std::to_string(a.iota) + " outside {0} or {n+1..n+k}");
      if (a.label != 0) invalid("central node " + std::to_string(v) + " must carry label 0");
      if (deg[v] != 2 * n) invalid("central node " + std::to_string(v) + " must have degree 2n");
    } else {
      if (a.role == Role::Target && a.label != L)
        invalid("target node " + std::to_string(v) + " must carry the constant label L");
      if (a.role == Role::Source && (a.label < 1 || a.label > L))
        invalid("source label " + std::to_string(a.label) + " outside {1..L}");
      if (deg[v] != k) invalid("node " + std::to_string(v) + " must have degree k");
    }
  }
  for (const auto& e : g.edges) {
    const bool cu = g.attrs[e.u].role == Role::Central;
    const bool cv = g.attrs[e.v].role == Role::Central;
    if (cu == cv)
      invalid("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
              ") must join a central node to a source/target node");
  }
}

void validate_ring(const TaskGraph& g) {
  const auto [n, k, L, r] = g.params;
  if (r < 1 || L < 1) invalid("ring parameters must satisfy r >= 1, L >= 1");
  if (g.node_count() != 2 * r) invalid("ring graph must have 2r nodes");
  const auto sources = g.nodes_with_role(Role::Source);
  const auto targets = g.nodes_with_role(Role::Target);
  if (sources.size() != 1 || targets.size() != 1)
    invalid("ring graph must have exactly one source and one target");
  for (const auto& a : g.attrs) {
    const int want = a.role == Role::Source ? 1 : a.role == Role::Target ? 2 : 0;
    if (a.iota != want) invalid("ring identifier " + std::to_string(a.iota) + " inconsistent with role");
    if (a.label < 1 || a.label > L) invalid("ring label " + std::to_string(a.label) + " outside {1..L}");
  }
  const auto deg = g.degrees();
  const int want_deg = r == 1 ? 1 : 2;
  for (int d : deg)
    if (d != want_deg) invalid("ring graph nodes must have degree " + std::to_string(want_deg));
  const auto dist = bfs_distances(g.adjacency(), sources[0]);
  if (dist[targets[0]] != r) invalid("ring source and target must be at distance r");
}

void validate_tree(const TaskGraph& g) {
  const auto [n, k, L, depth] = g.params;
  if (depth < 1 || depth > 16) invalid("tree depth outside {1..16}");
  const int leaves = 1 << depth;
  if (n != leaves || k != leaves - 1) invalid("tree parameters inconsistent with depth");
  if (g.node_count() != 2 * leaves) invalid("tree graph must have 2^(depth+1) nodes");
  if (static_cast<int>(g.edges.size()) != g.node_count() - 1) invalid("tree graph must have |V|-1 edges");
  check_id_permutation(g, Role::Source, leaves, "source");
  const auto targets = g.nodes_with_role(Role::Target);
  if (targets.size() != 1) invalid("tree graph must have exactly one target");
  const auto& t = g.attrs[targets[0]];
  if (t.iota < 1 || t.iota > leaves)
    invalid("target identifier " + std::to_string(t.iota) + " outside {1.." + std::to_string(leaves) + "}");
}

}  // namespace

void validate(const TaskGraph& g, Validation level) {
  const int nodes = g.node_count();
  std::set<Edge> seen;
  for (const auto& e : g.edges) {
    if (e.u < 0 || e.v < 0 || e.u >= nodes || e.v >= nodes)
      invalid("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) + ") references a missing node");
    if (e.u == e.v) invalid("self-loop at node " + std::to_string(e.u));
    if (e.u > e.v) invalid("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) + ") must have u < v");
    if (!seen.insert(e).second)
      invalid("duplicate edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) + ")");
  }
  for (int v = 0; v < nodes; ++v) {
    const auto& a = g.attrs[v];
    if (a.iota < 0 || a.iota >= g.id_vocab())
      invalid("node " + std::to_string(v) + " identifier " + std::to_string(a.iota) + " outside vocabulary");
    if (a.label < 0 || a.label > g.params.L)
      invalid("node " + std::to_string(v) + " label " + std::to_string(a.label) + " outside {0..L}");
  }
  if (level == Validation::Structural) return;
  if (!is_connected(g)) invalid("graph is not connected");
  if (g.nodes_with_role(Role::Central).empty() && g.family != Family::RingTransfer)
    invalid("graph has no central nodes");
  switch (g.family) {
    case Family::TwoRadius: validate_two_radius(g); break;
    case Family::RingTransfer: validate_ring(g); break;
    case Family::TreeNeighborsMatch: validate_tree(g); break;
  }
}

std::string serialize_graph(const TaskInstance& instance) {
  const TaskGraph& g = instance.graph;
  std::ostringstream out;
  out << family_name(g.family) << ' ' << g.params.n << ' ' << g.params.k << ' ' << g.params.L
      << ' ' << g.params.r << '\n';
  for (int v = 0; v < g.node_count(); ++v) {
    const auto& a = g.attrs[v];
    out << v << ' ' << role_code(a.role) << ' ' << a.iota << ' ' << a.label << '\n';
  }
  for (const auto& e : g.edges) out << e.u << ' ' << e.v << '\n';
  return out.str();
}

std::string serialize_dataset(const std::vector<TaskInstance>& instances) {
  std::string out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (i) out += '\n';
    out += serialize_graph(instances[i]);
  }
  return out;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

int parse_int(std::string_view tok, std::size_t line, const char* field) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ValidationError("line " + std::to_string(line) + ": field '" + field +
                          "' is not an integer: '" + std::string(tok) + "'");
  return value;
}

struct Block {
  std::size_t first_line = 0;
  std::vector<std::pair<std::size_t, std::string_view>> lines;
};

TaskInstance parse_block(const Block& block, Validation level) {
  TaskInstance inst;
  TaskGraph& g = inst.graph;
  const auto& [header_line, header] = block.lines.front();
  const auto head = split_ws(header);
  if (head.size() != 5)
    throw ValidationError("line " + std::to_string(header_line) + ": header must be 'family n k L r'");
  try {
    g.family = parse_family(head[0]);
  } catch (const ParameterError&) {
    throw ValidationError("line " + std::to_string(header_line) + ": field 'family' unknown: '" +
                          std::string(head[0]) + "'");
  }
  g.params = {parse_int(head[1], header_line, "n"), parse_int(head[2], header_line, "k"),
              parse_int(head[3], header_line, "L"), parse_int(head[4], header_line, "r")};

  std::set<Edge> seen;
  bool in_edges = false;
  for (std::size_t i = 1; i < block.lines.size(); ++i) {
    const auto& [ln, text] = block.lines[i];
    const auto tok = split_ws(text);
    if (tok.size() == 4 && !in_edges) {
      const int index = parse_int(tok[0], ln, "index");
      if (index != g.node_count())
        throw ValidationError("line " + std::to_string(ln) + ": field 'index' expected " +
                              std::to_string(g.node_count()));
      NodeAttr a;
      if (tok[1] == "S") a.role = Role::Source;
      else if (tok[1] == "C") a.role = Role::Central;
      else if (tok[1] == "T") a.role = Role::Target;
      else
        throw ValidationError("line " + std::to_string(ln) + ": field 'role' must be S, C or T");
      a.iota = parse_int(tok[2], ln, "iota");
      a.label = parse_int(tok[3], ln, "label");
      g.attrs.push_back(a);
    } else if (tok.size() == 2) {
      in_edges = true;
      Edge e{parse_int(tok[0], ln, "u"), parse_int(tok[1], ln, "v")};
      if (e.u >= e.v)
        throw ValidationError("line " + std::to_string(ln) + ": edge (" + std::to_string(e.u) + ", " +
                              std::to_string(e.v) + ") must have u < v");
      if (e.v >= g.node_count())
        throw ValidationError("line " + std::to_string(ln) + ": edge (" + std::to_string(e.u) + ", " +
                              std::to_string(e.v) + ") references a missing node");
      if (!seen.insert(e).second)
        throw ValidationError("line " + std::to_string(ln) + ": duplicate edge (" +
                              std::to_string(e.u) + ", " + std::to_string(e.v) + ")");
      g.edges.push_back(e);
    } else {
      throw ValidationError("line " + std::to_string(ln) + ": expected a node line 'index role iota label'"
                            " or an edge line 'u v'");
    }
  }
  sort_edges(g);
  try {
    validate(g, level);
    if (level == Validation::Strict) {
      inst.supervision = derive_supervision(g);
    } else {
      try {
        inst.supervision = derive_supervision(g);
      } catch (const ValidationError&) {
      }
    }
  } catch (const ValidationError& e) {
    throw ValidationError("instance at line " + std::to_string(block.first_line) + ": " + e.what());
  }
  return inst;
}

}  // namespace

std::vector<TaskInstance> parse_graphs(std::string_view text, Validation level) {
  std::vector<Block> blocks;
  Block current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (split_ws(line).empty()) {
      if (!current.lines.empty()) {
        blocks.push_back(std::move(current));
        current = Block{};
      }
    } else {
      if (current.lines.empty()) current.first_line = line_no;
      current.lines.emplace_back(line_no, line);
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  if (!current.lines.empty()) blocks.push_back(std::move(current));
  if (blocks.empty()) throw ValidationError("no graph instances found");

  std::vector<TaskInstance> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(parse_block(b, level));
  return out;
}

TaskInstance parse_graph(std::string_view text, Validation level) {
  auto all = parse_graphs(text, level);
  if (all.size() != 1)
    throw ValidationError("expected exactly one instance, found " + std::to_string(all.size()));
  return std::move(all.front());
}

}  // namespace osq::graph
