#include "ucdg/network.hpp"

#include <sstream>

#include "ucdg/text.hpp"

namespace ucdg {

std::string to_string(CondPlacement p) {
  switch (p) {
    case CondPlacement::merge: return "merge";
    case CondPlacement::down: return "down";
    case CondPlacement::up: return "up";
    case CondPlacement::all: return "all";
    case CondPlacement::off: return "off";
  }
  return "merge";
}

CondPlacement parse_cond_placement(std::string_view s) {
  s = trim(s);
  if (s == "merge") return CondPlacement::merge;
  if (s == "down") return CondPlacement::down;
  if (s == "up") return CondPlacement::up;
  if (s == "all") return CondPlacement::all;
  if (s == "off") return CondPlacement::off;
  throw ParseError("unknown conditional placement '" + std::string(s) + "' (merge, down, up, all, off)");
}

void ModelConfig::validate() const {
  if (window == 0 || width == 0 || merge_width == 0 || kernel == 0 || bank.bases == 0) {
    throw std::invalid_argument("model config: window, widths, kernel and bases must be positive");
  }
  if (merge_blocks == 0) throw std::invalid_argument("model config: the merging stage needs at least one block");
  if (kernel % 2 == 0) throw std::invalid_argument("model config: temporal kernel size must be odd");
  if (depth >= 32 || window % (std::size_t{1} << depth) != 0) {
    throw std::invalid_argument("model config: window " + std::to_string(window) + " is not divisible by 2^" +
                                std::to_string(depth));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must be in [0, 1)");
  if (!(bank.sigma >= 0.0)) throw std::invalid_argument("model config: sigma_init must be non-negative");
  const std::size_t joints = skeleton().joint_count();
  if (bank.nonzeros_per_column > joints) {
    throw std::invalid_argument("model config: sparse_k exceeds the joint count");
  }
}

DirectedSkeleton ModelConfig::skeleton() const {
  if (is_builtin_layout(layout)) {
    if (!parents.empty()) throw SkeletonError("layout " + layout + " is built in; do not supply parents");
    return build_skeleton(layout);
  }
  if (parents.empty()) throw SkeletonError("unknown skeleton layout '" + layout + "' and no parent array given");
  return build_skeleton(parents, {}, layout);
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "layout = " << layout << '\n';
  if (!parents.empty()) {
    os << "parents = ";
    for (std::size_t i = 0; i < parents.size(); ++i) os << (i ? "," : "") << parents[i];
    os << '\n';
  }
  os << "window = " << window << '\n'
     << "width = " << width << '\n'
     << "merge_width = " << merge_width << '\n'
     << "depth = " << depth << '\n'
     << "kernel = " << kernel << '\n'
     << "merge_blocks = " << merge_blocks << '\n'
     << "bases = " << bank.bases << '\n'
     << "sparse_k = " << bank.nonzeros_per_column << '\n'
     << "sigma_init = " << format_double(bank.sigma) << '\n'
     << "dropout = " << format_double(dropout) << '\n'
     << "normalize = " << (normalize ? "true" : "false") << '\n'
     << "cond = " << to_string(cond) << '\n';
  return os.str();
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "layout") layout = value;
  else if (key == "parents") {
    parents.clear();
    for (auto tok : split(value, ',')) parents.push_back(int(parse_int(tok)));
  } else if (key == "window") window = parse_size(value);
  else if (key == "width") width = parse_size(value);
  else if (key == "merge_width") merge_width = parse_size(value);
  else if (key == "depth") depth = parse_size(value);
  else if (key == "kernel") kernel = parse_size(value);
  else if (key == "merge_blocks") merge_blocks = parse_size(value);
  else if (key == "bases") bank.bases = parse_size(value);
  else if (key == "sparse_k") bank.nonzeros_per_column = parse_size(value);
  else if (key == "sigma_init") bank.sigma = parse_double(value);
  else if (key == "dropout") dropout = parse_double(value);
  else if (key == "normalize") normalize = parse_bool(value);
  else if (key == "cond") cond = parse_cond_placement(value);
  else return false;
  return true;
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!cfg.set(k, v)) throw ParseError("unknown model config key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.serialize() == b.serialize(); }

namespace {

std::mt19937_64 block_rng(std::uint64_t seed, std::uint64_t block) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(block)};
  return std::mt19937_64(seq);
}

}  // namespace

Model Model::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.skeleton_ = cfg.skeleton();
  m.ops_ = GraphOperators::from(incidence(m.skeleton_));
  const std::size_t J = m.skeleton_.joint_count();
  const std::size_t C = cfg.width, D = cfg.depth;
  const bool cond_down = cfg.cond == CondPlacement::down || cfg.cond == CondPlacement::all;
  const bool cond_up = cfg.cond == CondPlacement::up || cfg.cond == CondPlacement::all;
  const bool cond_merge = cfg.cond == CondPlacement::merge || cfg.cond == CondPlacement::all;

  auto options = [&](std::size_t stride, bool conditional) {
    BlockOptions o;
    o.kernel = cfg.kernel;
    o.stride = stride;
    o.dropout = cfg.dropout;
    o.graph.conditional = conditional;
    o.graph.normalize = cfg.normalize;
    o.graph.bank = cfg.bank;
    return o;
  };

  std::uint64_t block = 0;
  {
    auto rng = block_rng(seed, block++);
    m.embed_ = make_st_block("embed", 2, 2, C, J, options(1, false), rng);
  }
  for (std::size_t i = 0; i < D; ++i) {
    auto rng = block_rng(seed, block++);
    m.down_.push_back(make_st_block("down" + std::to_string(i + 1), C, C, C, J, options(2, cond_down), rng));
  }
  for (std::size_t i = 0; i < D; ++i) {
    auto rng = block_rng(seed, block++);
    m.up_.push_back(make_st_block("up" + std::to_string(i + 1), 2 * C, 2 * C, C, J, options(1, cond_up), rng));
  }
  for (std::size_t i = 0; i < cfg.merge_blocks; ++i) {
    auto rng = block_rng(seed, block++);
    const std::size_t in = i == 0 ? (D + 1) * C : cfg.merge_width;
    m.merge_.push_back(
        make_st_block("merge" + std::to_string(i + 1), in, in, cfg.merge_width, J, options(1, cond_merge), rng));
  }
  {
    auto rng = block_rng(seed, block++);
    m.head_ = make_fc_head("head", cfg.merge_width, rng);
  }
  return m;
}

std::vector<std::size_t> Model::resolutions() const {
  std::vector<std::size_t> r{cfg_.window};
  for (std::size_t i = 0; i < cfg_.depth; ++i) r.push_back((r.back() + 1) / 2);
  return r;
}

Var Model::forward(Tape& tape, const Tensor& pose2d, const ForwardOptions& opts) {
  if (pose2d.rank() != 4 || pose2d.dim(3) != 2) {
    throw ShapeError("Model::forward: expected (B,T,J,2) input, got " + shape_string(pose2d.shape()));
  }
  if (pose2d.dim(1) != cfg_.window) {
    throw ShapeError("Model::forward: window length " + std::to_string(pose2d.dim(1)) + " but the model expects " +
                     std::to_string(cfg_.window));
  }
  GraphFeatures init = init_features(pose2d, skeleton_);
  ForwardContext ctx{tape, opts.training, opts.rng};
  const auto res = resolutions();
  auto run = [&](const FeatureVars& in, STBlock& b) {
    if (!b.conditional() || !opts.routings) return st_block(ctx, in, ops_, b);
    Routing r;
    FeatureVars out = st_block(ctx, in, ops_, b, &r);
    opts.routings->push_back(r);
    return out;
  };

  FeatureVars x{tape.constant(std::move(init.node_feats)), tape.constant(std::move(init.edge_feats))};
  std::vector<FeatureVars> skips{run(x, embed_)};
  for (auto& b : down_) skips.push_back(run(skips.back(), b));

  std::vector<FeatureVars> scales{skips.back()};
  FeatureVars cur = skips.back();
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const std::size_t level = cfg_.depth - 1 - i;
    FeatureVars up = temporal_upsample(ctx, cur, res[level]);
    const FeatureVars& skip = skips[level];
    FeatureVars joined{concat({up.nodes, skip.nodes}, 1), concat({up.edges, skip.edges}, 1)};
    cur = run(joined, up_[i]);
    scales.push_back(cur);
  }

  std::vector<Var> node_parts, edge_parts;
  for (const FeatureVars& s : scales) {
    FeatureVars full = s.nodes.dim(2) == cfg_.window ? s : temporal_upsample(ctx, s, cfg_.window);
    node_parts.push_back(full.nodes);
    edge_parts.push_back(full.edges);
  }
  FeatureVars merged{concat(node_parts, 1), concat(edge_parts, 1)};
  for (auto& b : merge_) merged = run(merged, b);
  return fc_head(ctx, merged.nodes, head_);
}

Tensor Model::predict(const Tensor& pose2d) const {
  Model copy = *this;
  Tape tape;
  return copy.forward(tape, pose2d).value();
}

Tensor Model::connections(const Tensor& pose2d) const {
  Model copy = *this;
  Tape tape;
  std::vector<Routing> routings;
  ForwardOptions opts;
  opts.routings = &routings;
  copy.forward(tape, pose2d, opts);
  if (routings.empty()) throw std::logic_error("Model::connections: the model has no conditional blocks");
  return routings.back().connections.value();
}

ParameterList Model::parameters() {
  ParameterList out;
  embed_.parameters(out);
  for (auto& b : down_) b.parameters(out);
  for (auto& b : up_) b.parameters(out);
  for (auto& b : merge_) b.parameters(out);
  head_.parameters(out);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto list = const_cast<Model*>(this)->parameters();
  return {list.begin(), list.end()};
}

BufferList Model::buffers() {
  BufferList out;
  embed_.buffers(out);
  for (auto& b : down_) b.buffers(out);
  for (auto& b : up_) b.buffers(out);
  for (auto& b : merge_) b.buffers(out);
  return out;
}

std::vector<const Tensor*> Model::buffers() const {
  auto list = const_cast<Model*>(this)->buffers();
  return {list.begin(), list.end()};
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

}  // namespace ucdg
