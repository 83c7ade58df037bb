#include "ucdg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ucdg {
namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data()) v = u(rng);
  return t;
}

Var apply_step(ForwardContext& ctx, const std::vector<Var>& slots, GraphStep& step) {
  Var x = concat(slots, 1);
  Tape& tape = ctx.tape;
  Var y = channel_affine(x, tape.param(step.linear.weight), tape.param(step.linear.bias));
  if (step.norm) {
    Norm& n = *step.norm;
    BatchNormState st{&n.running_mean, &n.running_var, 0.1, 1e-5, ctx.training};
    y = batch_norm(y, tape.param(n.gamma), tape.param(n.beta), st);
  }
  return relu(y);
}

}  // namespace

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(in));
  Linear l;
  l.weight = Parameter(name + ".weight", uniform_tensor({out, in}, bound, rng));
  l.bias = Parameter(name + ".bias", uniform_tensor({out}, bound, rng));
  return l;
}

Var apply_linear(ForwardContext& ctx, Var x, Linear& layer) {
  return channel_affine(x, ctx.tape.param(layer.weight), ctx.tape.param(layer.bias));
}

Norm make_norm(const std::string& name, std::size_t channels) {
  Norm n;
  n.gamma = Parameter(name + ".gamma", Tensor({channels}, 1.0));
  n.beta = Parameter(name + ".beta", Tensor({channels}, 0.0));
  n.running_mean = Tensor({channels}, 0.0);
  n.running_var = Tensor({channels}, 1.0);
  return n;
}

void GraphStep::parameters(ParameterList& out) {
  linear.parameters(out);
  if (norm) norm->parameters(out);
}

void GraphStep::buffers(BufferList& out) {
  if (norm) norm->buffers(out);
}

GraphStep make_graph_step(const std::string& name, std::size_t in, std::size_t out, bool normalize,
                          std::mt19937_64& rng) {
  GraphStep s;
  s.linear = make_linear(name + ".linear", in, out, rng);
  if (normalize) s.norm = make_norm(name + ".norm", out);
  return s;
}

Tensor sparse_init(std::size_t joints, const SparseInitConfig& cfg, std::mt19937_64& rng) {
  if (cfg.bases == 0) throw std::invalid_argument("sparse_init: at least one basis required");
  if (cfg.nonzeros_per_column > joints) {
    throw std::invalid_argument("sparse_init: " + std::to_string(cfg.nonzeros_per_column) +
                                " nonzeros per column exceed " + std::to_string(joints) + " rows");
  }
  Tensor bases({cfg.bases, joints, joints}, 0.0);
  std::normal_distribution<double> normal(0.0, cfg.sigma);
  std::vector<std::size_t> rows(joints);
  for (std::size_t m = 0; m < cfg.bases; ++m) {
    for (std::size_t col = 0; col < joints; ++col) {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      // Partial Fisher-Yates: the first k entries are a uniform sample.
      for (std::size_t i = 0; i < cfg.nonzeros_per_column; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, joints - 1);
        std::swap(rows[i], rows[pick(rng)]);
        bases[(m * joints + rows[i]) * joints + col] = normal(rng);
      }
    }
  }
  return bases;
}

void CondConnectionBank::parameters(ParameterList& out) {
  out.push_back(&bases);
  routing.parameters(out);
}

CondConnectionBank make_bank(const std::string& name, std::size_t joints, std::size_t routing_in,
                             const SparseInitConfig& cfg, std::mt19937_64& rng) {
  CondConnectionBank bank;
  bank.bases = Parameter(name + ".bases", sparse_init(joints, cfg, rng));
  bank.routing = make_linear(name + ".routing", routing_in, cfg.bases, rng);
  return bank;
}

Routing routing(ForwardContext& ctx, const FeatureVars& in, CondConnectionBank& bank) {
  const std::size_t batch = in.nodes.dim(0), joints = bank.joints(), m = bank.count();
  if (in.nodes.dim(3) != joints) throw_shape_error("routing", in.nodes.shape(), bank.bases.value.shape());
  Var pooled = concat({mean_over(in.nodes, {2, 3}), mean_over(in.edges, {2, 3})}, 1);
  Var blend = sigmoid(apply_linear(ctx, pooled, bank.routing));
  Var flat_bases = reshape(ctx.tape.param(bank.bases), {m, joints * joints});
  Var conn = reshape(matmul(blend, flat_bases), {batch, joints, joints});
  return {blend, conn};
}

GraphOperators GraphOperators::from(const IncidenceMaps& maps) {
  GraphOperators g;
  g.joints = maps.in_edge.size();
  g.edges = maps.edge_source.size();
  g.in_edge_gather = Tensor({g.edges, g.joints});
  g.out_edge_mean = Tensor({g.edges, g.joints});
  g.source_gather = Tensor({g.joints, g.edges});
  g.target_gather = Tensor({g.joints, g.edges});
  for (std::size_t j = 0; j < g.joints; ++j) {
    if (maps.in_edge[j]) g.in_edge_gather.at({*maps.in_edge[j], j}) = 1.0;
    const auto& outs = maps.out_edges[j];
    for (std::size_t e : outs) g.out_edge_mean.at({e, j}) = 1.0 / double(outs.size());
  }
  for (std::size_t e = 0; e < g.edges; ++e) {
    g.source_gather.at({maps.edge_source[e], e}) = 1.0;
    g.target_gather.at({maps.edge_target[e], e}) = 1.0;
  }
  return g;
}

Var dgconv_step_nodes(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, GraphStep& step) {
  if (in.nodes.dim(3) != ops.joints || in.edges.dim(3) != ops.edges) {
    throw_shape_error("dgconv_step_nodes", in.nodes.shape(), in.edges.shape());
  }
  Var incoming = mix_last(in.edges, ops.in_edge_gather);
  Var outgoing = mix_last(in.edges, ops.out_edge_mean);
  return apply_step(ctx, {incoming, in.nodes, outgoing}, step);
}

Var cond_step_nodes(ForwardContext& ctx, Var nodes, Var connections, GraphStep& step) {
  Var parents = batched_mix_last(nodes, connections, false);
  Var children = batched_mix_last(nodes, connections, true);
  return apply_step(ctx, {parents, nodes, children}, step);
}

Var dgconv_step_edges(ForwardContext& ctx, Var nodes, Var edges, const GraphOperators& ops, GraphStep& step) {
  if (nodes.dim(3) != ops.joints || edges.dim(3) != ops.edges) {
    throw_shape_error("dgconv_step_edges", nodes.shape(), edges.shape());
  }
  Var source = mix_last(nodes, ops.source_gather);
  Var target = mix_last(nodes, ops.target_gather);
  return apply_step(ctx, {source, edges, target}, step);
}

void GraphConv::parameters(ParameterList& out) {
  node_step.parameters(out);
  if (cond_step) cond_step->parameters(out);
  edge_step.parameters(out);
  if (bank) bank->parameters(out);
}

void GraphConv::buffers(BufferList& out) {
  node_step.buffers(out);
  if (cond_step) cond_step->buffers(out);
  edge_step.buffers(out);
}

GraphConv make_graph_conv(const std::string& name, std::size_t node_in, std::size_t edge_in, std::size_t out,
                          std::size_t joints, const GraphConvOptions& opts, std::mt19937_64& rng) {
  GraphConv g;
  g.node_step = make_graph_step(name + ".node_step", node_in + 2 * edge_in, out, opts.normalize, rng);
  g.edge_step = make_graph_step(name + ".edge_step", 2 * out + edge_in, out, opts.normalize, rng);
  if (opts.conditional) add_conditional(g, name, node_in, edge_in, joints, opts, rng);
  return g;
}

void add_conditional(GraphConv& conv, const std::string& name, std::size_t node_in, std::size_t edge_in,
                     std::size_t joints, const GraphConvOptions& opts, std::mt19937_64& rng) {
  const std::size_t out = conv.node_step.linear.out_features();
  conv.cond_step = make_graph_step(name + ".cond_step", 3 * out, out, opts.normalize, rng);
  conv.bank = make_bank(name + ".bank", joints, node_in + edge_in, opts.bank, rng);
}

FeatureVars dgconv(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, GraphConv& conv) {
  Var nodes = dgconv_step_nodes(ctx, in, ops, conv.node_step);
  Var edges = dgconv_step_edges(ctx, nodes, in.edges, ops, conv.edge_step);
  return {nodes, edges};
}

FeatureVars cond_dgconv(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, GraphConv& conv,
                        CondStep mode, Routing* routing_out) {
  if (!conv.bank || !conv.cond_step) throw std::logic_error("cond_dgconv: layer has no connection bank");
  Routing r = routing(ctx, in, *conv.bank);
  if (routing_out) *routing_out = r;
  Var nodes = dgconv_step_nodes(ctx, in, ops, conv.node_step);
  if (mode == CondStep::apply) nodes = cond_step_nodes(ctx, nodes, r.connections, *conv.cond_step);
  Var edges = dgconv_step_edges(ctx, nodes, in.edges, ops, conv.edge_step);
  return {nodes, edges};
}

TemporalConv make_temporal_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                                std::size_t stride, std::mt19937_64& rng) {
  if (kernel % 2 == 0) throw std::invalid_argument("temporal kernel size must be odd");
  const double bound = 1.0 / std::sqrt(double(in * kernel));
  TemporalConv c;
  c.weight = Parameter(name + ".weight", uniform_tensor({out, in, kernel}, bound, rng));
  c.bias = Parameter(name + ".bias", uniform_tensor({out}, bound, rng));
  c.stride = stride;
  return c;
}

FeatureVars temporal_conv(ForwardContext& ctx, const FeatureVars& in, TemporalConv& node_conv,
                          TemporalConv& edge_conv) {
  Tape& t = ctx.tape;
  return {conv_time(in.nodes, t.param(node_conv.weight), t.param(node_conv.bias), node_conv.stride),
          conv_time(in.edges, t.param(edge_conv.weight), t.param(edge_conv.bias), edge_conv.stride)};
}

void STBlock::parameters(ParameterList& out) {
  graph.parameters(out);
  node_conv.parameters(out);
  edge_conv.parameters(out);
}

void STBlock::buffers(BufferList& out) { graph.buffers(out); }

STBlock make_st_block(const std::string& name, std::size_t node_in, std::size_t edge_in, std::size_t out,
                      std::size_t joints, const BlockOptions& opts, std::mt19937_64& rng) {
  // Conditional parts are drawn last so that a block and its non-conditional
  // twin built from the same generator share every common parameter value.
  GraphConvOptions plain = opts.graph;
  plain.conditional = false;
  STBlock b;
  b.graph = make_graph_conv(name + ".graph", node_in, edge_in, out, joints, plain, rng);
  b.node_conv = make_temporal_conv(name + ".node_tconv", out, out, opts.kernel, opts.stride, rng);
  b.edge_conv = make_temporal_conv(name + ".edge_tconv", out, out, opts.kernel, opts.stride, rng);
  b.dropout = opts.dropout;
  if (opts.graph.conditional) add_conditional(b.graph, name + ".graph", node_in, edge_in, joints, opts.graph, rng);
  return b;
}

FeatureVars st_block(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops, STBlock& block,
                     Routing* routing_out) {
  FeatureVars g = block.conditional() ? cond_dgconv(ctx, in, ops, block.graph, CondStep::apply, routing_out)
                                      : dgconv(ctx, in, ops, block.graph);
  FeatureVars out = temporal_conv(ctx, g, block.node_conv, block.edge_conv);
  if (ctx.training && block.dropout > 0.0) {
    if (!ctx.rng) throw std::logic_error("st_block: training forward needs a random generator for dropout");
    out.nodes = dropout(out.nodes, block.dropout, *ctx.rng);
    out.edges = dropout(out.edges, block.dropout, *ctx.rng);
  }
  return out;
}

FeatureVars temporal_downsample(ForwardContext& ctx, const FeatureVars& in, const GraphOperators& ops,
                                STBlock& block) {
  if (block.stride() != 2) throw std::logic_error("temporal_downsample: block stride must be 2");
  return st_block(ctx, in, ops, block);
}

FeatureVars temporal_upsample(ForwardContext&, const FeatureVars& in, std::size_t length) {
  return {interp_time(in.nodes, length), interp_time(in.edges, length)};
}

FCHead make_fc_head(const std::string& name, std::size_t channels, std::mt19937_64& rng) {
  return FCHead{make_linear(name, channels, 3, rng)};
}

Var fc_head(ForwardContext& ctx, Var nodes, FCHead& head) {
  if (nodes.shape().size() != 4) throw ShapeError("fc_head: expected (B,C,T,J), got " + shape_string(nodes.shape()));
  return permute(apply_linear(ctx, nodes, head.linear), {0, 2, 3, 1});
}

}  // namespace ucdg
