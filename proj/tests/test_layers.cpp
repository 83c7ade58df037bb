#include <doctest.h>

#include <cmath>
#include <random>

#include "layer_checks.hpp"
#include "test_util.hpp"
#include "ucdg/layers.hpp"

using namespace ucdg;

namespace {

GraphStep plain_step(std::vector<double> w, std::vector<double> b) {
  const std::size_t out = b.size(), in = w.size() / out;
  return GraphStep{Linear{Parameter("w", Tensor({out, in}, std::move(w))), Parameter("b", Tensor({out}, std::move(b)))},
                   std::nullopt};
}

GraphOperators operators(std::vector<int> parents) {
  return GraphOperators::from(incidence(build_skeleton(std::move(parents))));
}

}  // namespace

TEST_CASE("node step: hand-computed chain") {
  // Chain 0 -> 1 -> 2 with one channel per slot. Node values (1, 2, 3), edge
  // values e0 = 0.5 (into joint 1), e1 = -1 (into joint 2), weights
  // [in, self, out] = [2, 1, -3], bias 0.5:
  //   joint 0: 2*0    + 1*1 - 3*0.5 + 0.5 = 0    -> 0
  //   joint 1: 2*0.5  + 1*2 - 3*(-1) + 0.5 = 6.5 -> 6.5
  //   joint 2: 2*(-1) + 1*3 - 3*0    + 0.5 = 1.5 -> 1.5
  Tape tape;
  ForwardContext ctx{tape};
  GraphStep step = plain_step({2, 1, -3}, {0.5});
  FeatureVars f{tape.constant(Tensor({1, 1, 1, 3}, {1, 2, 3})), tape.constant(Tensor({1, 1, 1, 2}, {0.5, -1}))};
  CHECK(dgconv_step_nodes(ctx, f, operators({-1, 0, 1}), step).value().to_vector() == std::vector<double>{0, 6.5, 1.5});

  // Out-edge pooling is a mean: a root with two children sees (e0 + e1) / 2.
  GraphStep pool = plain_step({0, 0, 1}, {0});
  FeatureVars star{tape.constant(Tensor({1, 1, 1, 3})), tape.constant(Tensor({1, 1, 1, 2}, {3, 5}))};
  CHECK(dgconv_step_nodes(ctx, star, operators({-1, 0, 0}), pool).value().at({0, 0, 0, 0}) == 4.0);
}

TEST_CASE("node step: trivial weights") {
  std::mt19937_64 rng(1);
  Tape tape;
  ForwardContext ctx{tape};
  const Tensor nodes = testutil::random_tensor({2, 2, 3, 4}, rng);
  FeatureVars f{tape.constant(nodes), tape.constant(testutil::random_tensor({2, 2, 3, 3}, rng))};
  const GraphOperators ops = operators({-1, 0, 1, 0});

  GraphStep zero = plain_step(std::vector<double>(12, 0.0), {0, 0});
  for (double v : dgconv_step_nodes(ctx, f, ops, zero).value().data()) CHECK(v == 0.0);

  // Select the middle slot channel by channel.
  GraphStep middle = plain_step({0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0}, {0, 0});
  const Tensor out = dgconv_step_nodes(ctx, f, ops, middle).value();
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == std::max(nodes[i], 0.0));
}

TEST_CASE("conditional step: zero and identity connections") {
  std::mt19937_64 rng(2);
  Tape tape;
  ForwardContext ctx{tape};
  const std::size_t J = 3;
  const Tensor nodes = testutil::random_tensor({1, 2, 2, J}, rng);
  Var n = tape.constant(nodes);
  GraphStep step = plain_step({1, 2, 3, 4, 5, 6, -1, 0.5, 2, 1, -3, 0.25}, {0.1, -0.2});

  // A = 0: only the middle slot contributes.
  const Tensor zero_out = cond_step_nodes(ctx, n, tape.constant(Tensor({1, J, J})), step).value();
  GraphStep middle_only = step;
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i : {0, 1, 4, 5}) middle_only.linear.weight.value.at({o, i}) = 0.0;
  CHECK(zero_out == cond_step_nodes(ctx, n, tape.constant(Tensor({1, J, J})), middle_only).value());

  // A = I: the parent and child slots both equal the node itself.
  Tensor eye({1, J, J});
  for (std::size_t i = 0; i < J; ++i) eye.at({0, i, i}) = 1.0;
  GraphStep folded = step;
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t c = 0; c < 2; ++c) {
      double& w = folded.linear.weight.value.at({o, 2 + c});
      w += step.linear.weight.value.at({o, c}) + step.linear.weight.value.at({o, 4 + c});
      folded.linear.weight.value.at({o, c}) = 0.0;
      folded.linear.weight.value.at({o, 4 + c}) = 0.0;
    }
  const Tensor id_out = cond_step_nodes(ctx, n, tape.constant(eye), step).value();
  const Tensor want = cond_step_nodes(ctx, n, tape.constant(Tensor({1, J, J})), folded).value();
  CHECK(testutil::max_rel_diff(id_out, want) <= 1e-14);
}

TEST_CASE("conditional step: random small case matches the double loop") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    ForwardContext ctx{tape};
    const Tensor nodes = testutil::random_tensor({2, 2, 3, 3}, rng);
    const Tensor conn = testutil::random_tensor({2, 3, 3}, rng);
    GraphStep step = plain_step(testutil::random_tensor({3, 6}, rng).to_vector(), {0.1, 0.2, -0.3});
    const Tensor got = cond_step_nodes(ctx, tape.constant(nodes), tape.constant(conn), step).value();
    const Tensor want = oracle::cond_step(nodes, conn, oracle::params_of(step, false));
    CHECK(testutil::max_rel_diff(got, want) <= 1e-13);
  }
}

TEST_CASE("edge step: hand-computed single bone") {
  // Joints n0 = 2 (source), n1 = -1 (target); edge e0 = 3. Weights
  // [src, edge, dst] = [1, 0.5, 2], bias -1: 2 + 1.5 - 2 - 1 = 0.5.
  Tape tape;
  ForwardContext ctx{tape};
  GraphStep step = plain_step({1, 0.5, 2}, {-1});
  const GraphOperators ops = operators({-1, 0});
  Var nodes = tape.constant(Tensor({1, 1, 1, 2}, {2, -1}));
  Var edges = tape.constant(Tensor({1, 1, 1, 1}, {3}));
  CHECK(dgconv_step_edges(ctx, nodes, edges, ops, step).value().item() == 0.5);

  // Middle-slot selection gives ReLU of the edge input.
  GraphStep middle = plain_step({0, 1, 0}, {0});
  CHECK(dgconv_step_edges(ctx, nodes, tape.constant(Tensor({1, 1, 1, 1}, {-4})), ops, middle).value().item() == 0.0);
  CHECK(dgconv_step_edges(ctx, nodes, edges, ops, middle).value().item() == 3.0);

  // Zero node features: the update is ReLU of an affine map of the edge.
  GraphStep affine = plain_step({7, -2, 9}, {0.5});
  CHECK(dgconv_step_edges(ctx, tape.constant(Tensor({1, 1, 1, 2})), tape.constant(Tensor({1, 1, 1, 1}, {-1})), ops,
                          affine)
            .value()
            .item() == 2.5);
}

TEST_CASE("graph convolutions match the loop oracle") {
  CHECK(checks::brute_force_error(60, false, 1) <= 1e-12);
  CHECK(checks::brute_force_error(60, true, 1) <= 1e-12);
}

TEST_CASE("bypassing the conditional step gives the plain convolution bitwise") {
  CHECK(checks::definitional_mismatches(60, 2) == 0);
}

TEST_CASE("joint relabeling permutes the outputs") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    CHECK(checks::permutation_error(seed, false) <= 1e-12);
    CHECK(checks::permutation_error(seed, true) <= 1e-12);
  }
}

TEST_CASE("graph convolution preserves B, T and node/edge counts") {
  checks::Instance in = checks::random_instance(7, true);
  const checks::Outputs out = checks::library_outputs(in, true, false);
  const std::size_t C = in.conv.node_step.linear.out_features();
  CHECK(out.nodes.shape() == Shape{in.nodes.dim(0), C, in.nodes.dim(2), in.nodes.dim(3)});
  CHECK(out.edges.shape() == Shape{in.edges.dim(0), C, in.edges.dim(2), in.edges.dim(3)});
}

TEST_CASE("sparse initialization") {
  std::mt19937_64 rng(4);
  const Tensor bases = sparse_init(17, {16, 3, 0.01}, rng);
  CHECK(bases.shape() == Shape{16, 17, 17});
  for (std::size_t k = 0; k < 16; ++k) {
    std::size_t nonzero = 0;
    for (std::size_t col = 0; col < 17; ++col) {
      std::size_t in_col = 0;
      for (std::size_t row = 0; row < 17; ++row) in_col += bases.at({k, row, col}) != 0.0;
      CHECK(in_col == 3);
      nonzero += in_col;
    }
    CHECK(nonzero == 51);
  }
  const Tensor none = sparse_init(5, {4, 0, 0.01}, rng);
  for (double v : none.data()) CHECK(v == 0.0);
  std::mt19937_64 a(9), b(9);
  CHECK(sparse_init(6, {3, 2, 0.5}, a) == sparse_init(6, {3, 2, 0.5}, b));
  CHECK_THROWS_AS(sparse_init(4, {2, 5, 0.01}, rng), std::invalid_argument);

  // Values are Normal(0, sigma^2): the sample deviation of 16*17*3 draws is
  // within a few percent of sigma.
  double ss = 0.0;
  for (double v : bases.data()) ss += v * v;
  CHECK(std::sqrt(ss / 816.0) == doctest::Approx(0.01).epsilon(0.1));
}

TEST_CASE("routing") {
  std::mt19937_64 rng(5);
  const std::size_t J = 4, m = 3;
  CondConnectionBank bank = make_bank("bank", J, 4, {m, 2, 1.0}, rng);
  bank.routing.weight.value = testutil::random_tensor({m, 4}, rng);
  Tape tape;
  ForwardContext ctx{tape};
  Tensor nodes = testutil::random_tensor({3, 2, 5, J}, rng), edges = testutil::random_tensor({3, 2, 5, J - 1}, rng);
  // Samples 0 and 2 are identical.
  for (std::size_t i = 0; i < nodes.size() / 3; ++i) nodes[2 * nodes.size() / 3 + i] = nodes[i];
  for (std::size_t i = 0; i < edges.size() / 3; ++i) edges[2 * edges.size() / 3 + i] = edges[i];
  const FeatureVars f{tape.constant(nodes), tape.constant(edges)};

  const Routing r = routing(ctx, f, bank);
  const oracle::RoutingOut want = oracle::routing(nodes, edges, bank);
  CHECK(testutil::max_rel_diff(r.blend.value(), want.blend) <= 1e-14);
  CHECK(testutil::max_rel_diff(r.connections.value(), want.connections) <= 1e-14);
  for (double a : r.blend.value().data()) CHECK((a > 0.0 && a < 1.0));

  const Tensor& A = r.connections.value();
  bool differ = false;
  for (std::size_t i = 0; i < J * J; ++i) {
    CHECK(A[i] == A[2 * J * J + i]);
    differ = differ || A[i] != A[J * J + i];
  }
  CHECK(differ);

  // Saturated routing: every blend weight is 1 and A is the plain sum.
  CondConnectionBank saturated = bank;
  saturated.routing.bias.value.fill(1e3);
  saturated.routing.weight.value.fill(0.0);
  const Tensor sum = routing(ctx, f, saturated).connections.value();
  for (std::size_t i = 0; i < J; ++i)
    for (std::size_t j = 0; j < J; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += bank.bases.value.at({k, i, j});
      CHECK(sum.at({1, i, j}) == doctest::Approx(s).epsilon(1e-15));
    }

  // Zero bases: A = 0 whatever the input.
  CondConnectionBank empty = bank;
  empty.bases.value.fill(0.0);
  for (double v : routing(ctx, f, empty).connections.value().data()) CHECK(v == 0.0);
}

TEST_CASE("temporal convolution") {
  std::mt19937_64 rng(6);
  TemporalConv node = make_temporal_conv("n", 2, 2, 3, 1, rng), edge = make_temporal_conv("e", 2, 2, 3, 1, rng);
  for (TemporalConv* c : {&node, &edge}) {
    c->weight.value.fill(0.0);
    c->bias.value.fill(0.0);
    for (std::size_t o = 0; o < 2; ++o) c->weight.value.at({o, o, 1}) = 1.0;
  }
  Tape tape;
  ForwardContext ctx{tape};
  const Tensor nodes = testutil::random_tensor({2, 2, 7, 3}, rng), edges = testutil::random_tensor({2, 2, 7, 2}, rng);
  FeatureVars f{tape.constant(nodes), tape.constant(edges)};
  FeatureVars same = temporal_conv(ctx, f, node, edge);
  CHECK(same.nodes.value() == nodes);
  CHECK(same.edges.value() == edges);

  node.stride = edge.stride = 2;
  FeatureVars half = temporal_conv(ctx, f, node, edge);
  CHECK(half.nodes.value().dim(2) == 4);
  CHECK(half.edges.value().dim(2) == 4);
  CHECK(half.nodes.value().at({1, 1, 3, 2}) == nodes.at({1, 1, 6, 2}));
}

TEST_CASE("temporal upsampling") {
  Tape tape;
  ForwardContext ctx{tape};
  FeatureVars c{tape.constant(Tensor({1, 1, 3, 2}, 4.5)), tape.constant(Tensor({1, 1, 3, 1}, -2.0))};
  FeatureVars up = temporal_upsample(ctx, c, 7);
  for (double v : up.nodes.value().data()) CHECK(v == 4.5);
  for (double v : up.edges.value().data()) CHECK(v == -2.0);

  FeatureVars two{tape.constant(Tensor({1, 1, 2, 1}, {0, 2})), tape.constant(Tensor({1, 1, 2, 1}, {0, 2}))};
  CHECK(temporal_upsample(ctx, two, 3).nodes.value().to_vector() == std::vector<double>{0, 1, 2});

  // Ramp 0..7, stride-2 centre-tap downsampling keeps frames 0, 2, 4, 6;
  // upsampling to 8 frames gives 6t/7, at most one frame off at the end.
  std::mt19937_64 rng(7);
  TemporalConv node = make_temporal_conv("n", 1, 1, 3, 2, rng), edge = make_temporal_conv("e", 1, 1, 3, 2, rng);
  for (TemporalConv* k : {&node, &edge}) {
    k->weight.value = Tensor({1, 1, 3}, {0, 1, 0});
    k->bias.value.fill(0.0);
  }
  Tensor ramp({1, 1, 8, 1});
  for (std::size_t t = 0; t < 8; ++t) ramp[t] = double(t);
  FeatureVars r{tape.constant(ramp), tape.constant(ramp)};
  const Tensor back = temporal_upsample(ctx, temporal_conv(ctx, r, node, edge), 8).nodes.value();
  for (std::size_t t = 0; t < 8; ++t) CHECK(back[t] == doctest::Approx(6.0 * double(t) / 7.0).epsilon(1e-14));
}

TEST_CASE("fc head") {
  std::mt19937_64 rng(8);
  FCHead head = make_fc_head("head", 3, rng);
  Tape tape;
  ForwardContext ctx{tape};
  const Tensor x = testutil::random_tensor({2, 3, 4, 5}, rng);
  Var in = tape.constant(x);

  const Tensor y = fc_head(ctx, in, head).value();
  CHECK(y.shape() == Shape{2, 4, 5, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t o = 0; o < 3; ++o) {
          double s = head.linear.bias.value[o];
          for (std::size_t c = 0; c < 3; ++c) s += head.linear.weight.value.at({o, c}) * x.at({b, c, t, j});
          CHECK(y.at({b, t, j, o}) == doctest::Approx(s).epsilon(1e-14));
        }

  head.linear.weight.value.fill(0.0);
  head.linear.bias.value.fill(0.0);
  for (double v : fc_head(ctx, in, head).value().data()) CHECK(v == 0.0);
  for (std::size_t c = 0; c < 3; ++c) head.linear.weight.value.at({c, c}) = 1.0;
  const Tensor pass = fc_head(ctx, in, head).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t c = 0; c < 3; ++c) CHECK(pass.at({b, t, j, c}) == x.at({b, c, t, j}));
}

TEST_CASE("st block dropout only while training") {
  std::mt19937_64 rng(9);
  const GraphOperators ops = operators({-1, 0, 1});
  BlockOptions opts;
  opts.dropout = 0.5;
  STBlock block = make_st_block("b", 2, 2, 4, 3, opts, rng);
  const Tensor nodes = testutil::random_tensor({2, 2, 6, 3}, rng), edges = testutil::random_tensor({2, 2, 6, 2}, rng);
  auto run = [&](bool training, std::uint64_t seed) {
    Tape tape;
    std::mt19937_64 drop(seed);
    ForwardContext ctx{tape, training, &drop};
    return st_block(ctx, {tape.constant(nodes), tape.constant(edges)}, ops, block).nodes.value();
  };
  CHECK(run(false, 1) == run(false, 2));
  CHECK(run(true, 1) == run(true, 1));
  CHECK_FALSE(run(true, 1) == run(true, 2));

  Tape tape;
  ForwardContext ctx{tape};
  STBlock down = make_st_block("d", 2, 2, 4, 3, BlockOptions{3, 2, 0.0, {}}, rng);
  CHECK(temporal_downsample(ctx, {tape.constant(testutil::random_tensor({1, 2, 7, 3}, rng)),
                                  tape.constant(testutil::random_tensor({1, 2, 7, 2}, rng))},
                            ops, down)
            .nodes.value()
            .dim(2) == 4);
}
