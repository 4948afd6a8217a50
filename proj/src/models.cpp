#include "osq/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "osq/error.hpp"

namespace osq::models {

using tensor::Tensor;

std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::GCN: return "gcn";
    case Arch::GIN: return "gin";
    case Arch::GAT: return "gat";
    case Arch::SAGE: return "sage";
    case Arch::MLP: return "mlp";
    case Arch::SetTransformer: return "set-transformer";
  }
  return "?";
}

Arch parse_arch(std::string_view token) {
  for (Arch a : {Arch::GCN, Arch::GIN, Arch::GAT, Arch::SAGE, Arch::MLP, Arch::SetTransformer})
    if (arch_name(a) == token) return a;
  if (token == "transformer" || token == "settransformer") return Arch::SetTransformer;
  throw ParameterError("unknown architecture '" + std::string(token) +
                       "' (expected gcn, gin, gat, sage, mlp or set-transformer)");
}

std::string_view aggregation_name(VNAggregation a) {
  return a == VNAggregation::Mean ? "mean" : "sum";
}

VNAggregation parse_aggregation(std::string_view token) {
  if (token == "mean") return VNAggregation::Mean;
  if (token == "sum") return VNAggregation::Sum;
  throw ParameterError("unknown virtual-node aggregation '" + std::string(token) + "' (expected mean or sum)");
}

ModelSpec default_spec(Arch arch, int in_dim, int out_classes, int hidden) {
  ModelSpec s;
  s.arch = arch;
  s.in_dim = in_dim;
  s.out_classes = out_classes;
  s.hidden = hidden;
  switch (arch) {
    case Arch::GAT: s.dropout = 0.1; break;
    case Arch::MLP:
      s.activation = Activation::ReLU;
      s.dropout = 0.3;
      break;
    case Arch::SetTransformer:
      s.layers = 2;
      s.activation = Activation::ReLU;
      s.dropout = 0.1;
      break;
    default: break;
  }
  return s;
}

void validate(const ModelSpec& s) {
  if (s.in_dim < 1) throw ParameterError("model input dimension must be >= 1");
  if (s.layers < 1) throw ParameterError("model needs at least one layer");
  if (s.hidden < 1) throw ParameterError("hidden dimension must be >= 1");
  if (s.out_classes < 1) throw ParameterError("out_classes must be >= 1");
  if (s.dropout < 0 || s.dropout >= 1) throw ParameterError("dropout must lie in [0, 1)");
  const bool attention = s.arch == Arch::GAT || s.arch == Arch::SetTransformer;
  if (attention && (s.heads < 1 || s.hidden % s.heads != 0))
    throw ParameterError("heads (" + std::to_string(s.heads) + ") must divide hidden (" + std::to_string(s.hidden) +
                         ")");
  if (s.vn && s.vn->count < 1) throw ParameterError("virtual-node count must be >= 1");
}

// ---- batching ---------------------------------------------------------------

template <typename T>
GraphBatch<T> make_batch(std::span<const graph::TaskInstance* const> instances) {
  if (instances.empty()) throw ParameterError("cannot batch an empty set of graphs");
  GraphBatch<T> b;
  const int dim = instances[0]->graph.input_dim();
  b.graphs = static_cast<int>(instances.size());
  b.graph_offsets.push_back(0);
  for (const auto* inst : instances) {
    if (inst->graph.input_dim() != dim)
      throw DimensionError("batched graphs disagree on input dimension (" + std::to_string(dim) + " vs " +
                           std::to_string(inst->graph.input_dim()) + ")");
    b.nodes += inst->graph.node_count();
    b.graph_offsets.push_back(b.nodes);
  }
  b.features = Matrix<T>(static_cast<std::size_t>(b.nodes), static_cast<std::size_t>(dim), T{0});
  b.node_graph.resize(static_cast<std::size_t>(b.nodes));
  b.class_index.assign(static_cast<std::size_t>(b.nodes), -1);
  b.target_mask.assign(static_cast<std::size_t>(b.nodes), 0);

  for (int gi = 0; gi < b.graphs; ++gi) {
    const auto& g = instances[static_cast<std::size_t>(gi)]->graph;
    const int off = b.graph_offsets[static_cast<std::size_t>(gi)];
    const auto feats = g.features<T>();
    std::copy(feats.data.begin(), feats.data.end(),
              b.features.data.begin() + static_cast<std::ptrdiff_t>(off) * dim);
    const auto adj = g.adjacency();
    std::vector<T> inv_sqrt(adj.size());
    for (std::size_t v = 0; v < adj.size(); ++v)
      inv_sqrt[v] = T{1} / std::sqrt(static_cast<T>(adj[v].size() + 1));
    for (int v = 0; v < g.node_count(); ++v) {
      b.node_graph[static_cast<std::size_t>(off + v)] = gi;
      bool self_done = false;
      const auto& nb = adj[static_cast<std::size_t>(v)];
      for (int u : nb) {
        if (!self_done && u > v) {
          b.loop_src.push_back(off + v);
          b.loop_dst.push_back(off + v);
          b.gcn_coeff.push_back(inv_sqrt[static_cast<std::size_t>(v)] * inv_sqrt[static_cast<std::size_t>(v)]);
          self_done = true;
        }
        b.nbr_src.push_back(off + u);
        b.nbr_dst.push_back(off + v);
        b.loop_src.push_back(off + u);
        b.loop_dst.push_back(off + v);
        b.gcn_coeff.push_back(inv_sqrt[static_cast<std::size_t>(u)] * inv_sqrt[static_cast<std::size_t>(v)]);
      }
      if (!self_done) {
        b.loop_src.push_back(off + v);
        b.loop_dst.push_back(off + v);
        b.gcn_coeff.push_back(inv_sqrt[static_cast<std::size_t>(v)] * inv_sqrt[static_cast<std::size_t>(v)]);
      }
    }
    for (const auto& [node, label] : instances[static_cast<std::size_t>(gi)]->supervision) {
      b.class_index[static_cast<std::size_t>(off + node)] = label - 1;
      b.target_mask[static_cast<std::size_t>(off + node)] = 1;
    }
  }
  return b;
}

template <typename T>
GraphBatch<T> make_batch(const graph::TaskInstance& instance) {
  const graph::TaskInstance* one[] = {&instance};
  return make_batch<T>(std::span<const graph::TaskInstance* const>(one));
}

// ---- parameters -------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<T> m(fan_in, fan_out);
  for (auto& x : m.data) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::parameter(std::move(m));
}

template <typename T>
Tensor<T> filled(std::size_t rows, std::size_t cols, T value) {
  return Tensor<T>::parameter(Matrix<T>(rows, cols, value));
}

template <typename T>
void add_linear(ModelParams<T>& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p[name + ".weight"] = glorot<T>(in, out, rng);
  p[name + ".bias"] = filled<T>(1, out, T{0});
}

template <typename T>
void add_norm(ModelParams<T>& p, const std::string& name, std::size_t width) {
  p[name + ".gain"] = filled<T>(1, width, T{1});
  p[name + ".bias"] = filled<T>(1, width, T{0});
}

std::string layer_prefix(int l) {
  return "layer" + std::to_string(l);
}

std::string vn_prefix(int j, int l) {
  return "vn" + std::to_string(j) + ".layer" + std::to_string(l);
}

template <typename T>
const Tensor<T>& param(const ModelParams<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ParameterError("model parameter '" + name + "' is missing");
  return it->second;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const ModelParams<T>& p, const std::string& name) {
  return tensor::add(tensor::matmul(x, param(p, name + ".weight")), param(p, name + ".bias"));
}

template <typename T>
Tensor<T> affine_norm(const Tensor<T>& x, const ModelParams<T>& p, const std::string& name) {
  return tensor::layer_norm(x, param(p, name + ".gain"), param(p, name + ".bias"));
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  return a == Activation::ReLU ? tensor::relu(x) : tensor::leaky_relu(x, static_cast<T>(kLeakySlope));
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelSpec& spec, Rng& rng) {
  validate(spec);
  ModelParams<T> p;
  const auto H = static_cast<std::size_t>(spec.hidden);
  for (int l = 0; l < spec.layers; ++l) {
    const std::string pre = layer_prefix(l);
    const auto in = l == 0 ? static_cast<std::size_t>(spec.in_dim) : H;
    switch (spec.arch) {
      case Arch::GCN:
      case Arch::MLP: add_linear(p, pre + ".lin", in, H, rng); break;
      case Arch::GIN:
        p[pre + ".eps"] = filled<T>(1, 1, T{0});
        add_linear(p, pre + ".mlp1", in, H, rng);
        add_linear(p, pre + ".mlp2", H, H, rng);
        break;
      case Arch::SAGE:
        p[pre + ".self.weight"] = glorot<T>(in, H, rng);
        p[pre + ".nbr.weight"] = glorot<T>(in, H, rng);
        p[pre + ".bias"] = filled<T>(1, H, T{0});
        break;
      case Arch::GAT: {
        const auto dh = H / static_cast<std::size_t>(spec.heads);
        p[pre + ".weight"] = glorot<T>(in, H, rng);
        for (int h = 0; h < spec.heads; ++h) {
          p[pre + ".att_src" + std::to_string(h)] = glorot<T>(dh, 1, rng);
          p[pre + ".att_dst" + std::to_string(h)] = glorot<T>(dh, 1, rng);
        }
        p[pre + ".bias"] = filled<T>(1, H, T{0});
        break;
      }
      case Arch::SetTransformer:
        add_linear(p, pre + ".q", in, H, rng);
        p[pre + ".k.weight"] = glorot<T>(in, H, rng);
        add_linear(p, pre + ".v", in, H, rng);
        add_norm(p, pre + ".norm1", H);
        add_linear(p, pre + ".ff", H, H, rng);
        add_norm(p, pre + ".norm2", H);
        break;
    }
    if (spec.layer_norm && spec.arch != Arch::SetTransformer) add_norm(p, pre + ".norm", H);
    if (spec.vn) {
      for (int j = 0; j < spec.vn->count; ++j) {
        add_linear(p, vn_prefix(j, l) + ".fc1", H, H, rng);
        add_linear(p, vn_prefix(j, l) + ".fc2", H, H, rng);
      }
    }
  }
  add_linear(p, "head", H, static_cast<std::size_t>(spec.out_classes), rng);
  return p;
}

template <typename T>
std::size_t parameter_count(const ModelParams<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.value().size();
  return n;
}

// ---- layers -----------------------------------------------------------------

template <typename T>
Tensor<T> gcn_layer(const Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p, const std::string& prefix) {
  auto hw = tensor::matmul(h, param(p, prefix + ".lin.weight"));
  auto coeff = Tensor<T>::constant(Matrix<T>(b.gcn_coeff.size(), 1, b.gcn_coeff));
  auto agg = tensor::propagate(hw, b.loop_src, b.loop_dst, coeff, static_cast<std::size_t>(b.nodes));
  return tensor::add(agg, param(p, prefix + ".lin.bias"));
}

template <typename T>
Tensor<T> gin_layer(const Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p, const std::string& prefix) {
  auto one = Tensor<T>::constant(Matrix<T>(1, 1, T{1}));
  auto self = tensor::scale_by(h, tensor::add(param(p, prefix + ".eps"), one));
  auto agg = tensor::propagate(h, b.nbr_src, b.nbr_dst, static_cast<std::size_t>(b.nodes));
  auto z = tensor::add(self, agg);
  return linear(tensor::relu(linear(z, p, prefix + ".mlp1")), p, prefix + ".mlp2");
}

template <typename T>
Tensor<T> sage_layer(const Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p, const std::string& prefix) {
  auto mean = tensor::segment_mean(tensor::gather_rows(h, b.nbr_src), b.nbr_dst, static_cast<std::size_t>(b.nodes));
  auto out = tensor::add(tensor::matmul(h, param(p, prefix + ".self.weight")),
                         tensor::matmul(mean, param(p, prefix + ".nbr.weight")));
  return tensor::add(out, param(p, prefix + ".bias"));
}

template <typename T>
Tensor<T> gat_layer(const Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p, const std::string& prefix,
                    int heads, std::vector<Tensor<T>>* attention) {
  const auto& w = param(p, prefix + ".weight");
  auto wh = tensor::matmul(h, w);
  const std::size_t dh = w.cols() / static_cast<std::size_t>(heads);
  const auto nodes = static_cast<std::size_t>(b.nodes);
  std::vector<Tensor<T>> outs;
  for (int k = 0; k < heads; ++k) {
    auto whk = tensor::slice_cols(wh, static_cast<std::size_t>(k) * dh, dh);
    auto s_src = tensor::matmul(whk, param(p, prefix + ".att_src" + std::to_string(k)));
    auto s_dst = tensor::matmul(whk, param(p, prefix + ".att_dst" + std::to_string(k)));
    auto e = tensor::leaky_relu(tensor::add(tensor::gather_rows(s_dst, b.loop_dst), tensor::gather_rows(s_src, b.loop_src)),
                                static_cast<T>(kGatSlope));
    auto alpha = tensor::segment_softmax(e, b.loop_dst, nodes);
    if (attention) attention->push_back(alpha);
    outs.push_back(tensor::propagate(whk, b.loop_src, b.loop_dst, alpha, nodes));
  }
  auto cat = heads == 1 ? outs[0] : tensor::concat_cols<T>(outs);
  return tensor::add(cat, param(p, prefix + ".bias"));
}

template <typename T>
Tensor<T> set_attention_layer(const Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p,
                              const std::string& prefix, int heads) {
  auto q = linear(h, p, prefix + ".q");
  auto k = tensor::matmul(h, param(p, prefix + ".k.weight"));
  auto v = linear(h, p, prefix + ".v");
  auto att = tensor::block_attention(q, k, v, b.graph_offsets, static_cast<std::size_t>(heads));
  auto h1 = affine_norm(tensor::add(q, att), p, prefix + ".norm1");
  auto ff = tensor::relu(linear(h1, p, prefix + ".ff"));
  return affine_norm(tensor::add(h1, ff), p, prefix + ".norm2");
}

template <typename T>
Tensor<T> virtual_node_step(const Tensor<T>& h, std::vector<Tensor<T>>& states, const GraphBatch<T>& b,
                            const ModelParams<T>& p, const std::string& prefix, VNAggregation aggregation,
                            Activation activation) {
  const auto graphs = static_cast<std::size_t>(b.graphs);
  auto pooled = aggregation == VNAggregation::Mean ? tensor::segment_mean(h, b.node_graph, graphs)
                                                   : tensor::segment_sum(h, b.node_graph, graphs);
  Tensor<T> total;
  for (std::size_t j = 0; j < states.size(); ++j) {
    const std::string name = "vn" + std::to_string(j) + "." + prefix;
    auto z = tensor::add(states[j], pooled);
    states[j] = linear(activate(linear(z, p, name + ".fc1"), activation), p, name + ".fc2");
    total = j == 0 ? states[j] : tensor::add(total, states[j]);
  }
  return tensor::add(h, tensor::gather_rows(total, b.node_graph));
}

// ---- forward ----------------------------------------------------------------

template <typename T>
ForwardResult<T> forward(const ModelSpec& spec, const ModelParams<T>& params, const GraphBatch<T>& batch,
                         const Tensor<T>& input, bool train, Rng* rng) {
  if (input.cols() != static_cast<std::size_t>(spec.in_dim) || input.rows() != static_cast<std::size_t>(batch.nodes))
    throw DimensionError("model expects [" + std::to_string(batch.nodes) + "x" + std::to_string(spec.in_dim) +
                         "] node features, got " + input.shape_string());
  const bool use_dropout = train && spec.dropout > 0;
  if (use_dropout && !rng) throw ParameterError("training with dropout needs a random stream");

  ForwardResult<T> out;
  std::vector<Tensor<T>> vn_states;
  if (spec.vn) {
    for (int j = 0; j < spec.vn->count; ++j)
      vn_states.push_back(Tensor<T>::constant(
          Matrix<T>(static_cast<std::size_t>(batch.graphs), static_cast<std::size_t>(spec.hidden), T{0})));
  }
  Tensor<T> h = input;
  for (int l = 0; l < spec.layers; ++l) {
    const std::string pre = layer_prefix(l);
    const bool same_width = h.cols() == static_cast<std::size_t>(spec.hidden);
    Tensor<T> z;
    switch (spec.arch) {
      case Arch::GCN: z = gcn_layer(h, batch, params, pre); break;
      case Arch::GIN: z = gin_layer(h, batch, params, pre); break;
      case Arch::SAGE: z = sage_layer(h, batch, params, pre); break;
      case Arch::GAT: z = gat_layer(h, batch, params, pre, spec.heads); break;
      case Arch::MLP: z = linear(h, params, pre + ".lin"); break;
      case Arch::SetTransformer:
        z = set_attention_layer(h, batch, params, pre, spec.heads);
        break;
    }
    if (spec.arch != Arch::SetTransformer) {
      if (spec.residual && same_width) z = tensor::add(z, h);
      if (spec.layer_norm) z = affine_norm(z, params, pre + ".norm");
      z = activate(z, spec.activation);
    }
    if (use_dropout) z = tensor::dropout(z, static_cast<T>(spec.dropout), *rng, true);
    if (spec.vn) z = virtual_node_step(z, vn_states, batch, params, "layer" + std::to_string(l), spec.vn->aggregation,
                                       spec.activation);
    out.layer_outputs.push_back(z);
    h = z;
  }
  out.hidden = h;
  out.logits = linear(h, params, "head");
  return out;
}

template <typename T>
ForwardResult<T> forward(const ModelSpec& spec, const ModelParams<T>& params, const GraphBatch<T>& batch, bool train,
                         Rng* rng) {
  return forward(spec, params, batch, Tensor<T>::constant(batch.features), train, rng);
}

tensor::FiniteDiffReport gradcheck_model(const ModelSpec& spec, const graph::TaskInstance& instance,
                                         std::uint64_t seed, double tolerance) {
  Rng rng(seed);
  auto params = init_params<double>(spec, rng);
  // Perturb the zero-initialized biases and norms so their gradients are generic.
  for (auto& [name, t] : params)
    for (auto& x : t.mutable_value().data) x += rng.uniform(-0.1, 0.1);
  const auto batch = make_batch<double>(instance);
  Matrix<double> w(static_cast<std::size_t>(batch.nodes), static_cast<std::size_t>(spec.out_classes));
  for (auto& x : w.data) x = rng.uniform(-1, 1);
  const auto weights = Tensor<double>::constant(w);
  const Rng drop_stream = Rng::derive(seed, 1);

  tensor::FiniteDiffReport total;
  total.passed = true;
  for (const auto& [name, original] : params) {
    auto objective = [&, key = name](const Tensor<double>& x) {
      ModelParams<double> local = params;
      local[key] = x;
      Rng drop = drop_stream;
      auto out = forward(spec, local, batch, spec.dropout > 0, &drop);
      return tensor::sum_all(tensor::mul(out.logits, weights));
    };
    auto rep = tensor::finite_diff_check(objective, original.value(), tolerance);
    total.max_rel_error = std::max(total.max_rel_error, rep.max_rel_error);
    total.checked += rep.checked;
    total.excluded_kinks += rep.excluded_kinks;
    total.passed = total.passed && rep.passed;
  }
  return total;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::string& path) {
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  std::ofstream manifest(path + ".manifest", std::ios::trunc);
  if (!bin || !manifest) throw IoError("cannot write checkpoint " + path);
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    const auto& v = t.value();
    bin.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    manifest << name << ' ' << v.rows << ' ' << v.cols << ' ' << dtype_name<T>() << ' ' << offset << '\n';
    offset += v.size() * sizeof(T);
  }
  if (!bin || !manifest) throw IoError("failed while writing checkpoint " + path);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  std::ifstream bin(path, std::ios::binary);
  std::ifstream manifest(path + ".manifest");
  if (!bin || !manifest) throw IoError("cannot open checkpoint " + path + " (and its .manifest)");
  std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  ModelParams<T> params;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string name, dtype;
    std::size_t rows = 0, cols = 0, offset = 0;
    if (!(in >> name >> rows >> cols >> dtype >> offset))
      throw ValidationError("checkpoint manifest line " + std::to_string(line_no) + ": malformed entry");
    if (dtype != dtype_name<T>())
      throw ValidationError("checkpoint manifest line " + std::to_string(line_no) + ": dtype " + dtype +
                            " does not match " + dtype_name<T>());
    const std::size_t bytes = rows * cols * sizeof(T);
    if (offset + bytes > blob.size())
      throw ValidationError("checkpoint manifest line " + std::to_string(line_no) + ": tensor " + name +
                            " runs past the end of the data file");
    Matrix<T> m(rows, cols);
    std::memcpy(m.data.data(), blob.data() + offset, bytes);
    params[name] = Tensor<T>::parameter(std::move(m));
  }
  return params;
}

#define OSQ_INSTANTIATE(T)                                                                                          \
  template GraphBatch<T> make_batch<T>(std::span<const graph::TaskInstance* const>);                               \
  template GraphBatch<T> make_batch<T>(const graph::TaskInstance&);                                                \
  template ModelParams<T> init_params<T>(const ModelSpec&, Rng&);                                                  \
  template std::size_t parameter_count<T>(const ModelParams<T>&);                                                  \
  template ForwardResult<T> forward<T>(const ModelSpec&, const ModelParams<T>&, const GraphBatch<T>&,              \
                                       const Tensor<T>&, bool, Rng*);                                              \
  template ForwardResult<T> forward<T>(const ModelSpec&, const ModelParams<T>&, const GraphBatch<T>&, bool, Rng*); \
  template Tensor<T> gcn_layer<T>(const Tensor<T>&, const GraphBatch<T>&, const ModelParams<T>&,                   \
                                  const std::string&);                                                             \
  template Tensor<T> gin_layer<T>(const Tensor<T>&, const GraphBatch<T>&, const ModelParams<T>&,                   \
                                  const std::string&);                                                             \
  template Tensor<T> sage_layer<T>(const Tensor<T>&, const GraphBatch<T>&, const ModelParams<T>&,                  \
                                   const std::string&);                                                            \
  template Tensor<T> gat_layer<T>(const Tensor<T>&, const GraphBatch<T>&, const ModelParams<T>&,                   \
                                  const std::string&, int, std::vector<Tensor<T>>*);                               \
  template Tensor<T> set_attention_layer<T>(const Tensor<T>&, const GraphBatch<T>&, const ModelParams<T>&,         \
                                            const std::string&, int);                                        \
  template Tensor<T> virtual_node_step<T>(const Tensor<T>&, std::vector<Tensor<T>>&, const GraphBatch<T>&,         \
                                          const ModelParams<T>&, const std::string&, VNAggregation, Activation);   \
  template void save_checkpoint<T>(const ModelParams<T>&, const std::string&);                                     \
  template ModelParams<T> load_checkpoint<T>(const std::string&);

OSQ_INSTANTIATE(float)
OSQ_INSTANTIATE(double)

#undef OSQ_INSTANTIATE

}  // namespace osq::models
