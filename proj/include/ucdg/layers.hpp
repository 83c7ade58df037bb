#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ucdg/ops.hpp"
#include "ucdg/skeleton.hpp"

namespace ucdg {

struct ForwardContext {
  Tape& tape;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required when training
};

// Node and edge streams: (B, C_n, T, J) and (B, C_e, T, E).
struct FeatureVars {
  Var nodes;
  Var edges;
};

using ParameterList = std::vector<Parameter*>;
using BufferList = std::vector<Tensor*>;

struct Linear {
  Parameter weight;  // (out, in)
  Parameter bias;    // (out)

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }
  void parameters(ParameterList& out) { out.push_back(&weight), out.push_back(&bias); }
};

// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
// Channel-axis affine map: x (B, in, ...) -> (B, out, ...).
Var apply_linear(ForwardContext& ctx, Var x, Linear& layer);

struct Norm {
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

  void parameters(ParameterList& out) { out.push_back(&gamma), out.push_back(&beta); }
  void buffers(BufferList& out) { out.push_back(&running_mean), out.push_back(&running_var); }
};

Norm make_norm(const std::string& name, std::size_t channels);

// sigma(norm(w . [slot0; slot1; slot2] + b)), the shared form of every
// graph-update step.
struct GraphStep {
  Linear linear;
  std::optional<Norm> norm;

  void parameters(ParameterList& out);
  void buffers(BufferList& out);
};

GraphStep make_graph_step(const std::string& name, std::size_t in, std::size_t out, bool normalize,
                          std::mt19937_64& rng);

struct SparseInitConfig {
  std::size_t bases = 16;
  std::size_t nonzeros_per_column = 3;
  double sigma = 0.01;
};

// (m, J, J) bases; in every column of every basis exactly k rows, drawn
// without replacement, get Normal(0, sigma^2) values and the rest stay zero.
Tensor sparse_init(std::size_t joints, const SparseInitConfig& cfg, std::mt19937_64& rng);

struct CondConnectionBank {
  Parameter bases;  // (m, J, J)
  Linear routing;   // (C_n + C_e) -> m

  std::size_t count() const { return bases.value.dim(0); }
  std::size_t joints() const { return bases.value.dim(1); }
  void parameters(ParameterList& out);
};

CondConnectionBank make_bank(const std::string& name, std::size_t joints, std::size_t routing_in,
                             const SparseInitConfig& cfg, std::mt19937_64& rng);

// Per-sample connection matrices and the blend weights that produced them.
struct Routing {
  Var blend;        // (B, m), entries in (0, 1)
  Var connections;  // (B, J, J)
};

// Global average pool over (T, J) and (T, E), concatenated, then an affine
// map and a sigmoid give the blend weights; connections = sum_i w_i * basis_i.
Routing routing(ForwardContext& ctx, const FeatureVars& in, CondConnectionBank& bank);

// Fixed gather/pool matrices derived from the skeleton incidence.
struct GraphOperators {
  std::size_t joints = 0;
  std::size_t edges = 0;
  Tensor in_edge_gather;  // (E, J): picks the incoming edge of each node
  Tensor out_edge_mean;   // (E, J): averages the outgoing edges of each node
  Tensor source_gather;   // (J, E): picks the source node of each edge
  Tensor target_gather;   // (J, E): picks the target node of each edge

  static GraphOperators from(const IncidenceMaps& maps);
};

// Node update over the skeleton: slots [incoming edge; node; mean of outgoing
// edges]. Missing slots (root in-edge, leaf out-edges) are zero.
Var dgconv_step_nodes(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, GraphStep& step);

// Node update over predicted connections: slots
// [sum_j A[j,i] f(n_j); f(n_i); sum_j A[i,j] f(n_j)].
Var cond_step_nodes(ForwardContext& ctx, Var nodes, Var connections, GraphStep& step);

// Edge update: slots [source node; edge; target node].
Var dgconv_step_edges(ForwardContext& ctx, Var nodes, Var edges, const GraphOperators& ops, GraphStep& step);

struct GraphConv {
  GraphStep node_step;
  GraphStep edge_step;
  std::optional<GraphStep> cond_step;
  std::optional<CondConnectionBank> bank;

  bool conditional() const { return bank.has_value(); }
  void parameters(ParameterList& out);
  void buffers(BufferList& out);
};

struct GraphConvOptions {
  bool conditional = false;
  bool normalize = true;
  SparseInitConfig bank;
};

GraphConv make_graph_conv(const std::string& name, std::size_t node_in, std::size_t edge_in, std::size_t out,
                          std::size_t joints, const GraphConvOptions& opts, std::mt19937_64& rng);

// Adds the conditional node step and the connection bank to a plain layer.
void add_conditional(GraphConv& conv, const std::string& name, std::size_t node_in, std::size_t edge_in,
                     std::size_t joints, const GraphConvOptions& opts, std::mt19937_64& rng);

// Node step then edge step.
FeatureVars dgconv(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, GraphConv& conv);

enum class CondStep { apply, identity };

// Routing, node step, conditional node step, edge step. With
// CondStep::identity the conditional step passes node features through.
FeatureVars cond_dgconv(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, GraphConv& conv,
                        CondStep mode = CondStep::apply, Routing* routing_out = nullptr);

struct TemporalConv {
  Parameter weight;  // (out, in, kernel)
  Parameter bias;    // (out)
  std::size_t stride = 1;

  void parameters(ParameterList& out) { out.push_back(&weight), out.push_back(&bias); }
};

TemporalConv make_temporal_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                                std::size_t stride, std::mt19937_64& rng);

// Convolution along T; nodes and edges use their own parameters.
FeatureVars temporal_conv(ForwardContext& ctx, const FeatureVars& in, TemporalConv& node_conv,
                          TemporalConv& edge_conv);

struct STBlock {
  GraphConv graph;
  TemporalConv node_conv;
  TemporalConv edge_conv;
  double dropout = 0.0;

  bool conditional() const { return graph.conditional(); }
  std::size_t stride() const { return node_conv.stride; }
  std::size_t out_channels() const { return node_conv.weight.value.dim(0); }
  void parameters(ParameterList& out);
  void buffers(BufferList& out);
};

struct BlockOptions {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  double dropout = 0.3;
  GraphConvOptions graph;
};

STBlock make_st_block(const std::string& name, std::size_t node_in, std::size_t edge_in, std::size_t out,
                      std::size_t joints, const BlockOptions& opts, std::mt19937_64& rng);

// Graph convolution (conditional when the block carries a bank), temporal
// convolution, then dropout while training.
FeatureVars st_block(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, STBlock& block,
                     Routing* routing_out = nullptr);

// An ST block whose temporal convolution has stride 2: T -> ceil(T/2).
FeatureVars temporal_downsample(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops,
                                STBlock& block);

// Linear interpolation of both streams along T.
FeatureVars temporal_upsample(ForwardContext& ctx, const FeatureVars& in, std::size_t length);

struct FCHead {
  Linear linear;  // C -> 3
  void parameters(ParameterList& out) { linear.parameters(out); }
};

FCHead make_fc_head(const std::string& name, std::size_t channels, std::mt19937_64& rng);

// (B, C, T, J) -> (B, T, J, 3)
Var fc_head(ForwardContext& ctx, Var nodes, FCHead& head);

}  // namespace ucdg
