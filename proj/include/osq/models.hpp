#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "osq/graphgen.hpp"
#include "osq/rng.hpp"
#include "osq/tensor.hpp"

namespace osq::models {

enum class Arch { GCN, GIN, GAT, SAGE, MLP, SetTransformer };
enum class Activation { ReLU, LeakyReLU };
enum class VNAggregation { Mean, Sum };

std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view token);
std::string_view aggregation_name(VNAggregation a);
VNAggregation parse_aggregation(std::string_view token);

struct VNConfig {
  int count = 1;
  VNAggregation aggregation = VNAggregation::Mean;
  friend bool operator==(const VNConfig&, const VNConfig&) = default;
};

struct ModelSpec {
  Arch arch = Arch::GCN;
  int in_dim = 0;
  int layers = 4;
  int hidden = 128;
  int heads = 2;
  bool residual = true;
  bool layer_norm = true;
  double dropout = 0.0;
  Activation activation = Activation::LeakyReLU;
  int out_classes = 10;
  std::optional<VNConfig> vn;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kGatSlope = 0.2;

// Per-architecture defaults: layers, heads, activation and dropout.
ModelSpec default_spec(Arch arch, int in_dim, int out_classes, int hidden = 128);
// Throws ParameterError for an inconsistent spec.
void validate(const ModelSpec& spec);

// Disjoint union of task graphs, ready for the message-passing layers.
// Neighbor lists are grouped by destination node and sorted by source, so the
// accumulation order at a node depends only on its own neighborhood.
template <typename T>
struct GraphBatch {
  int nodes = 0;
  int graphs = 0;
  Matrix<T> features;
  std::vector<int> node_graph;    // graph index of each node
  std::vector<int> graph_offsets;  // graphs + 1 entries
  std::vector<int> nbr_src, nbr_dst;    // directed edges, both orientations
  std::vector<int> loop_src, loop_dst;  // the same plus one self loop per node
  std::vector<T> gcn_coeff;             // D^-1/2 (A+I) D^-1/2 entry per loop edge
  std::vector<int> class_index;         // supervised class (label - 1) or -1
  std::vector<std::uint8_t> target_mask;
};

template <typename T>
GraphBatch<T> make_batch(std::span<const graph::TaskInstance* const> instances);
template <typename T>
GraphBatch<T> make_batch(const graph::TaskInstance& instance);

// Named parameters, iterated in name order.
template <typename T>
using ModelParams = std::map<std::string, tensor::Tensor<T>>;

// Weights uniform in +-sqrt(6/(fan_in+fan_out)); biases zero; norm gains one.
template <typename T>
ModelParams<T> init_params(const ModelSpec& spec, Rng& rng);

template <typename T>
std::size_t parameter_count(const ModelParams<T>& params);

template <typename T>
struct ForwardResult {
  tensor::Tensor<T> logits;                 // [nodes x out_classes]
  tensor::Tensor<T> hidden;                 // final features before the head
  std::vector<tensor::Tensor<T>> layer_outputs;
};

// `input` replaces batch.features, so callers can watch the inputs.
// rng is only consulted when train is set and dropout > 0.
template <typename T>
ForwardResult<T> forward(const ModelSpec& spec, const ModelParams<T>& params, const GraphBatch<T>& batch,
                         const tensor::Tensor<T>& input, bool train, Rng* rng = nullptr);
template <typename T>
ForwardResult<T> forward(const ModelSpec& spec, const ModelParams<T>& params, const GraphBatch<T>& batch,
                         bool train = false, Rng* rng = nullptr);

// Single layers, for tests and probes. `prefix` names the layer's parameters.
template <typename T>
tensor::Tensor<T> gcn_layer(const tensor::Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p,
                            const std::string& prefix);
template <typename T>
tensor::Tensor<T> gin_layer(const tensor::Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p,
                            const std::string& prefix);
template <typename T>
tensor::Tensor<T> sage_layer(const tensor::Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p,
                             const std::string& prefix);
// attention, when given, receives one [loop edges x 1] weight column per head.
template <typename T>
tensor::Tensor<T> gat_layer(const tensor::Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p,
                            const std::string& prefix, int heads,
                            std::vector<tensor::Tensor<T>>* attention = nullptr);
// Set attention block: H = LN(Q + attention(Q, K, V)); out = LN(H + relu(H W + c)).
template <typename T>
tensor::Tensor<T> set_attention_layer(const tensor::Tensor<T>& h, const GraphBatch<T>& b, const ModelParams<T>& p,
                                      const std::string& prefix, int heads);

// One virtual-node update: every state becomes MLP_j(state_j + aggregate(h))
// and the sum of the new states is broadcast onto the nodes of each graph.
template <typename T>
tensor::Tensor<T> virtual_node_step(const tensor::Tensor<T>& h, std::vector<tensor::Tensor<T>>& states,
                                    const GraphBatch<T>& b, const ModelParams<T>& p, const std::string& prefix,
                                    VNAggregation aggregation, Activation activation);

// Finite-difference check of d sum(W * logits) / d theta for every parameter
// tensor of a freshly initialized 64-bit model (W fixed random weights).
// Dropout, if configured, is replayed with the same mask on every evaluation.
tensor::FiniteDiffReport gradcheck_model(const ModelSpec& spec, const graph::TaskInstance& instance,
                                         std::uint64_t seed, double tolerance = 1e-5);

// Checkpoint: `<path>` holds raw little-endian values, `<path>.manifest` one
// line per tensor: name rows cols dtype byte_offset.
template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::string& path);
template <typename T>
ModelParams<T> load_checkpoint(const std::string& path);

}  // namespace osq::models
