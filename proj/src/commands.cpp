#include "ucdg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ucdg/gradcheck.hpp"
#include "ucdg/metrics.hpp"
#include "ucdg/ops.hpp"
#include "ucdg/text.hpp"

namespace ucdg {
namespace fs = std::filesystem;

namespace {

fs::path prepare_out_dir(const CommandArgs& args) {
  const fs::path dir = args.effective_out();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

const fs::path& require(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw std::invalid_argument(std::string("missing required option ") + flag);
  return *p;
}

std::vector<PoseSequence> load_inputs(const fs::path& p) {
  if (fs::is_directory(p)) return load_pose_dir(p);
  return {load_poses(p)};
}

ModelConfig model_config(const CommandArgs& args) {
  ModelConfig cfg = args.config.model;
  if (args.cond) cfg.cond = *args.cond;
  cfg.validate();
  return cfg;
}

FitConfig fit_config(const TrainSettings& t, std::uint64_t seed) {
  FitConfig fc;
  fc.epochs = t.epochs;
  fc.batch_size = t.batch_size;
  fc.seed = seed;
  fc.loss = t.loss;
  fc.optimizer.lr = t.lr;
  fc.max_steps = t.max_steps;
  return fc;
}

// Sliding-window 3D prediction in millimeters for one sequence.
Tensor predict_sequence(const Model& model, const PoseSequence& seq, std::size_t step) {
  if (seq.skeleton().joint_count() != model.skeleton().joint_count() || seq.layout != model.config().layout) {
    throw std::invalid_argument("input layout '" + seq.layout + "' does not match the model layout '" +
                                model.config().layout + "'");
  }
  const WindowPredictor predictor = [&model](const Tensor& batch) { return model.predict(batch); };
  Tensor out = sliding_window_infer(predictor, normalize_2d(seq), model.config().window, step);
  for (double& v : out.data()) v *= 1000.0;
  return out;
}

// Diverging red/white/blue heatmap, one square per matrix entry.
std::string heatmap_ppm(const Tensor& m, std::size_t cell = 16) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  double peak = 0.0;
  for (double v : m.data()) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) peak = 1.0;
  std::ostringstream os;
  os << "P6\n" << cols * cell << ' ' << rows * cell << "\n255\n";
  for (std::size_t y = 0; y < rows * cell; ++y) {
    for (std::size_t x = 0; x < cols * cell; ++x) {
      const double v = m[(y / cell) * cols + x / cell] / peak;
      const auto fade = static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(v))));
      const unsigned char px[3] = {v >= 0 ? (unsigned char)255 : fade, fade, v <= 0 ? (unsigned char)255 : fade};
      os.write(reinterpret_cast<const char*>(px), 3);
    }
  }
  return os.str();
}

std::string pck_curve_svg(const std::vector<double>& thresholds, const std::vector<double>& pck) {
  const double w = 480, h = 320, pad = 40;
  const double t_max = thresholds.back();
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">threshold (mm)</text>\n"
     << "<text x=\"12\" y=\"" << h / 2 << "\" transform=\"rotate(-90 12 " << h / 2
     << ")\" text-anchor=\"middle\">PCK (%)</text>\n"
     << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const double x = pad + (w - 2 * pad) * thresholds[i] / t_max;
    const double y = h - pad - (h - 2 * pad) * pck[i] / 100.0;
    os << (i ? " " : "") << x << ',' << y;
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

// ---- gradient checks -------------------------------------------------------

const std::vector<int> kTinyParents{-1, 0, 1, 0, 3};

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Reduces an output to a scalar with fixed pseudo-random weights so that no
// gradient entry cancels by symmetry.
Var probe(Var y, std::uint64_t salt) {
  std::mt19937_64 rng(0x5eed + salt);
  return sum(mul(y, y.tape().constant(random_tensor(y.shape(), rng))));
}

struct LayerCheck {
  std::string name;
  std::vector<Tensor*> inputs;
  ParameterList params;
  // Builds the scalar output from the (possibly perturbed) inputs.
  std::function<Var(Tape&, const std::vector<Var>&)> run;
};

double check_layer(const LayerCheck& c, double eps) {
  double worst = 0.0;
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    const ScalarFn fn = [&](Tape& tape, Var x) {
      std::vector<Var> vars;
      for (std::size_t i = 0; i < c.inputs.size(); ++i) vars.push_back(i == k ? x : tape.constant(*c.inputs[i]));
      return c.run(tape, vars);
    };
    worst = std::max(worst, finite_diff_check(fn, *c.inputs[k], eps));
  }
  for (Parameter* p : c.params) {
    const LossFn loss = [&](Tape& tape) {
      std::vector<Var> vars;
      for (Tensor* t : c.inputs) vars.push_back(tape.constant(*t));
      return c.run(tape, vars);
    };
    std::vector<std::size_t> coords(p->size());
    std::iota(coords.begin(), coords.end(), 0);
    worst = std::max(worst, finite_diff_check(loss, *p, coords, eps));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> gradcheck_suite(std::uint64_t seed) {
  constexpr double kLayerTol = 1e-4, kModelTol = 1e-3, kEps = 1e-6;
  std::mt19937_64 rng(seed);
  const DirectedSkeleton skel = build_skeleton(kTinyParents, {}, "tiny5");
  const GraphOperators ops = GraphOperators::from(incidence(skel));
  const std::size_t B = 2, T = 4, J = skel.joint_count(), E = skel.edge_count();
  const std::size_t Cn = 3, Ce = 2, C = 4;

  Tensor nodes = random_tensor({B, Cn, T, J}, rng);
  Tensor edges = random_tensor({B, Ce, T, E}, rng);
  Tensor wide_nodes = random_tensor({B, C, T, J}, rng);
  Tensor conn = random_tensor({B, J, J}, rng, 0.5);
  SparseInitConfig bank_cfg{4, 2, 0.5};

  GraphStep node_step = make_graph_step("node", Cn + 2 * Ce, C, true, rng);
  GraphStep cond_step = make_graph_step("cond", 3 * C, C, true, rng);
  GraphStep edge_step = make_graph_step("edge", 2 * Cn + Ce, C, true, rng);
  CondConnectionBank bank = make_bank("bank", J, Cn + Ce, bank_cfg, rng);
  TemporalConv tc_nodes = make_temporal_conv("tn", Cn, C, 3, 1, rng);
  TemporalConv tc_edges = make_temporal_conv("te", Ce, C, 3, 1, rng);
  TemporalConv tc_nodes2 = make_temporal_conv("tn2", Cn, C, 3, 2, rng);
  TemporalConv tc_edges2 = make_temporal_conv("te2", Ce, C, 3, 2, rng);
  FCHead head = make_fc_head("head", Cn, rng);
  BlockOptions block_opts;
  block_opts.graph.conditional = true;
  block_opts.graph.bank = bank_cfg;
  STBlock block = make_st_block("block", Cn, Ce, C, J, block_opts, rng);

  auto params_of = [](auto& layer) {
    ParameterList out;
    layer.parameters(out);
    return out;
  };
  auto ctx_for = [](Tape& tape) { return ForwardContext{tape, true, nullptr}; };

  std::vector<LayerCheck> checks;
  checks.push_back({"node step", {&nodes, &edges}, params_of(node_step), [&](Tape& t, const std::vector<Var>& v) {
                      ForwardContext ctx = ctx_for(t);
                      return probe(dgconv_step_nodes(ctx, {v[0], v[1]}, ops, node_step), 1);
                    }});
  checks.push_back({"conditional node step", {&wide_nodes, &conn}, params_of(cond_step),
                    [&](Tape& t, const std::vector<Var>& v) {
                      ForwardContext ctx = ctx_for(t);
                      return probe(cond_step_nodes(ctx, v[0], v[1], cond_step), 2);
                    }});
  checks.push_back({"edge step", {&nodes, &edges}, params_of(edge_step), [&](Tape& t, const std::vector<Var>& v) {
                      ForwardContext ctx = ctx_for(t);
                      return probe(dgconv_step_edges(ctx, v[0], v[1], ops, edge_step), 3);
                    }});
  checks.push_back({"routing", {&nodes, &edges}, params_of(bank), [&](Tape& t, const std::vector<Var>& v) {
                      ForwardContext ctx = ctx_for(t);
                      Routing r = routing(ctx, {v[0], v[1]}, bank);
                      return add(probe(r.connections, 4), probe(r.blend, 5));
                    }});
  {
    ParameterList p = params_of(tc_nodes);
    tc_edges.parameters(p);
    checks.push_back({"temporal conv", {&nodes, &edges}, p, [&](Tape& t, const std::vector<Var>& v) {
                        ForwardContext ctx = ctx_for(t);
                        FeatureVars y = temporal_conv(ctx, {v[0], v[1]}, tc_nodes, tc_edges);
                        return add(probe(y.nodes, 6), probe(y.edges, 7));
                      }});
  }
  {
    ParameterList p = params_of(tc_nodes2);
    tc_edges2.parameters(p);
    checks.push_back({"temporal conv stride 2", {&nodes, &edges}, p, [&](Tape& t, const std::vector<Var>& v) {
                        ForwardContext ctx = ctx_for(t);
                        FeatureVars y = temporal_conv(ctx, {v[0], v[1]}, tc_nodes2, tc_edges2);
                        return add(probe(y.nodes, 8), probe(y.edges, 9));
                      }});
  }
  checks.push_back({"fc head", {&nodes}, params_of(head), [&](Tape& t, const std::vector<Var>& v) {
                      ForwardContext ctx = ctx_for(t);
                      return probe(fc_head(ctx, v[0], head), 10);
                    }});
  checks.push_back({"conditional ST block", {&nodes, &edges}, params_of(block),
                    [&](Tape& t, const std::vector<Var>& v) {
                      std::mt19937_64 mask(seed + 11);  // identical dropout mask on every evaluation
                      ForwardContext ctx{t, true, &mask};
                      FeatureVars y = st_block(ctx, {v[0], v[1]}, ops, block);
                      return add(probe(y.nodes, 12), probe(y.edges, 13));
                    }});

  std::vector<CheckResult> results;
  for (const LayerCheck& c : checks) results.push_back({c.name, check_layer(c, kEps), kLayerTol});

  // End to end: total loss of a tiny model, ten coordinates per group.
  ModelConfig cfg;
  cfg.layout = "tiny5";
  cfg.parents = kTinyParents;
  cfg.window = 8;
  cfg.width = 4;
  cfg.merge_width = 6;
  cfg.depth = 2;
  cfg.bank = {4, 2, 0.1};
  cfg.cond = CondPlacement::all;
  Model model = Model::build(cfg, seed);
  const Tensor x = random_tensor({B, cfg.window, J, 2}, rng, 0.5);
  const Tensor y = random_tensor({B, cfg.window, J, 3}, rng, 0.3);
  LossConfig loss_cfg;
  loss_cfg.deltas = {1, 2, 4};
  const LossFn loss = [&](Tape& tape) {
    std::mt19937_64 mask(seed + 17);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &mask;
    return total_loss(model.forward(tape, x, opts), tape.constant(y), loss_cfg);
  };
  double worst = 0.0;
  for (Parameter* p : model.parameters()) {
    std::vector<std::size_t> coords(p->size());
    std::iota(coords.begin(), coords.end(), 0);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min<std::size_t>(10, coords.size()));
    worst = std::max(worst, finite_diff_check(loss, *p, coords, kEps));
  }
  results.push_back({"end-to-end model (J=5, T=8)", worst, kModelTol});
  return results;
}

double AblationRow::mean() const {
  return std::accumulate(held_out_mpjpe.begin(), held_out_mpjpe.end(), 0.0) / double(held_out_mpjpe.size());
}

std::vector<AblationRow> run_ablation(const AblationSpec& spec, std::ostream* log) {
  if (spec.seeds.empty() || spec.placements.empty()) throw std::invalid_argument("ablation needs seeds and placements");
  std::vector<AblationRow> rows;
  for (CondPlacement p : spec.placements) rows.push_back({p, {}});
  for (std::uint64_t seed : spec.seeds) {
    SynthConfig synth = spec.synth;
    synth.seed = spec.synth.seed + seed;
    auto [train_seqs, test_seqs] = split_sequences(synth_generate(synth), seed, spec.val_fraction);
    if (train_seqs.empty() || test_seqs.empty()) throw std::invalid_argument("ablation corpus too small to split");
    const WindowSet train = make_windows(train_seqs, spec.model.window, spec.window_stride);
    const WindowSet test = make_windows(test_seqs, spec.model.window, spec.window_stride);
    for (AblationRow& row : rows) {
      ModelConfig cfg = spec.model;
      cfg.cond = row.placement;
      Model model = Model::build(cfg, seed);
      FitConfig fc = spec.fit;
      fc.seed = seed;
      fit(model, train, WindowSet{}, fc);
      row.held_out_mpjpe.push_back(window_mpjpe(model, test));
      if (log) {
        *log << "seed " << seed << " cond=" << to_string(row.placement) << " held-out MPJPE "
             << format_double(row.held_out_mpjpe.back()) << " mm" << std::endl;
      }
    }
  }
  return rows;
}

int cmd_synth(const CommandArgs& args, std::ostream& out) {
  SynthConfig cfg = args.config.synth;
  if (args.seed) cfg.seed = *args.seed;
  const fs::path dir = prepare_out_dir(args);
  const auto seqs = synth_generate(cfg);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04zu.dgp", i);
    save_poses(seqs[i], dir / name);
  }
  out << "wrote " << seqs.size() << " sequences of " << cfg.frames << " frames to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const CommandArgs& args, std::ostream& out) {
  const RunConfig& rc = args.config;
  const std::uint64_t seed = args.effective_seed();
  const ModelConfig mcfg = model_config(args);
  const fs::path dir = prepare_out_dir(args);

  std::vector<PoseSequence> seqs = args.input ? load_inputs(*args.input) : synth_generate(rc.synth);
  auto [train_seqs, val_seqs] = split_sequences(std::move(seqs), seed, rc.train.val_fraction);
  if (train_seqs.empty()) throw std::invalid_argument("no training sequences left after the validation split");
  const WindowSet train = make_windows(train_seqs, mcfg.window, rc.train.window_stride);
  const WindowSet val = val_seqs.empty() ? WindowSet{} : make_windows(val_seqs, mcfg.window, rc.train.window_stride);

  Model model = Model::build(mcfg, seed);
  out << "model: " << model.param_count() << " parameters, cond=" << to_string(mcfg.cond) << "; " << train.size()
      << " training and " << val.size() << " validation windows\n";
  const TrainingReport report = fit(model, train, val, fit_config(rc.train, seed), [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " step " << r.step << " lr " << format_double(r.lr) << " loss "
        << format_double(r.train_loss);
    if (r.val_mpjpe) out << " val_mpjpe " << format_double(*r.val_mpjpe);
    out << std::endl;
  });
  save_checkpoint(model, dir / "model.ucdg");
  write_text(dir / "report.csv", report.to_csv());
  out << "kept epoch " << report.best_epoch;
  if (report.best_val_mpjpe) out << " (validation MPJPE " << format_double(*report.best_val_mpjpe) << " mm)";
  out << "; wrote " << (dir / "model.ucdg").string() << " and " << (dir / "report.csv").string() << '\n';
  return 0;
}

int cmd_infer(const CommandArgs& args, std::ostream& out) {
  const Model model = load_checkpoint(require(args.checkpoint, "--checkpoint"));
  const fs::path dir = prepare_out_dir(args);
  const fs::path input = require(args.input, "--input");
  PoseSequence seq = load_poses(input);
  if (!seq.poses2d) throw std::invalid_argument(input.string() + " holds no 2D poses");
  seq.poses3d = predict_sequence(model, seq, args.window_step);
  seq.camera.reset();
  const fs::path target = dir / (input.stem().string() + ".pred.dgp");
  save_poses(seq, target);
  out << "wrote " << seq.frames << " predicted frames to " << target.string() << '\n';
  return 0;
}

int cmd_eval(const CommandArgs& args, std::ostream& out) {
  const fs::path pred_path = require(args.input, "--input");
  const fs::path gt_path = require(args.gt, "--gt");
  std::vector<std::pair<PoseSequence, PoseSequence>> pairs;
  if (fs::is_directory(pred_path) != fs::is_directory(gt_path)) {
    throw std::invalid_argument("--input and --gt must both be files or both be directories");
  }
  if (fs::is_directory(gt_path)) {
    for (PoseSequence& gt : load_pose_dir(gt_path)) pairs.push_back({PoseSequence{}, std::move(gt)});
    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(gt_path))
      if (e.path().extension() == ".dgp") names.push_back(e.path().filename());
    std::sort(names.begin(), names.end());
    for (std::size_t i = 0; i < names.size(); ++i) {
      fs::path p = pred_path / names[i];
      if (!fs::exists(p)) p = pred_path / (names[i].stem().string() + ".pred.dgp");
      pairs[i].first = load_poses(p);
    }
  } else {
    pairs.push_back({load_poses(pred_path), load_poses(gt_path)});
  }

  std::vector<EvalItem> items;
  std::size_t root = 0;
  for (const auto& [pred, gt] : pairs) {
    if (!pred.poses3d || !gt.poses3d) throw std::invalid_argument("evaluation needs 3D poses in both files");
    if (pred.layout != gt.layout || pred.frames != gt.frames) {
      throw std::invalid_argument("prediction and ground truth differ in layout or frame count");
    }
    root = gt.skeleton().root;
    items.push_back({&*pred.poses3d, &*gt.poses3d, gt.action});
  }
  const EvalReport report = evaluate(items, root);
  const fs::path dir = prepare_out_dir(args);
  out << report.to_text();
  write_text(dir / "eval.txt", report.to_key_values());
  if (args.plots) {
    Tensor all_pred, all_gt;
    std::vector<double> p, g;
    for (const EvalItem& it : items) {
      const Tensor rp = root_relative(*it.pred, root), rg = root_relative(*it.gt, root);
      p.insert(p.end(), rp.data().begin(), rp.data().end());
      g.insert(g.end(), rg.data().begin(), rg.data().end());
    }
    const std::size_t J = items.front().pred->dim(1), frames = p.size() / (J * 3);
    all_pred = Tensor({frames, J, 3}, std::move(p));
    all_gt = Tensor({frames, J, 3}, std::move(g));
    const AucGrid grid;
    write_text(dir / "pck_curve.svg", pck_curve_svg(grid.thresholds(), pck_curve(all_pred, all_gt, grid)));
  }
  return 0;
}

int cmd_gradcheck(const CommandArgs& args, std::ostream& out) {
  bool ok = true;
  for (const CheckResult& r : gradcheck_suite(args.effective_seed())) {
    out << (r.passed() ? "PASS " : "FAIL ") << r.name << ": max relative error " << r.max_error
        << " (tolerance " << r.tolerance << ")\n";
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const CommandArgs& args, std::ostream& out) {
  const RunConfig& rc = args.config;
  AblationSpec spec;
  spec.synth = rc.synth;
  spec.model = rc.model;
  spec.model.validate();
  spec.fit = fit_config(rc.train, 0);
  spec.window_stride = rc.train.window_stride;
  spec.val_fraction = rc.train.val_fraction;
  spec.seeds.clear();
  for (std::size_t i = 0; i < rc.ablate.seeds; ++i) spec.seeds.push_back(args.effective_seed() + i);
  spec.placements = rc.ablate.placements;
  if (args.cond) spec.placements = {CondPlacement::off, *args.cond};
  const fs::path dir = prepare_out_dir(args);

  const auto rows = run_ablation(spec, &out);
  const auto off = std::find_if(rows.begin(), rows.end(), [](const AblationRow& r) {
    return r.placement == CondPlacement::off;
  });
  std::ostringstream csv;
  csv << "cond,mean_mpjpe";
  for (std::uint64_t s : spec.seeds) csv << ",seed_" << s;
  csv << '\n';
  out << "cond     mean held-out MPJPE (mm)   ratio to off\n";
  for (const AblationRow& r : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%-8s %26.3f   %s\n", to_string(r.placement).c_str(), r.mean(),
                  off == rows.end() ? "-" : std::to_string(r.mean() / off->mean()).c_str());
    out << line;
    csv << to_string(r.placement) << ',' << format_double(r.mean());
    for (double v : r.held_out_mpjpe) csv << ',' << format_double(v);
    csv << '\n';
  }
  write_text(dir / "ablation.csv", csv.str());
  return 0;
}

int cmd_inspect(const CommandArgs& args, std::ostream& out) {
  const Model model = load_checkpoint(require(args.checkpoint, "--checkpoint"));
  const PoseSequence seq = load_poses(require(args.input, "--input"));
  if (seq.layout != model.config().layout) throw std::invalid_argument("input layout does not match the model");
  const fs::path dir = prepare_out_dir(args);
  const Tensor x = normalize_2d(seq);
  const std::size_t T = model.config().window, J = model.skeleton().joint_count();
  const auto starts = window_starts(seq.frames, T, args.window_step);

  std::ostringstream grids;
  for (std::size_t w = 0; w < starts.size(); ++w) {
    Tensor batch({1, T, J, 2});
    std::copy_n(x.data().begin() + starts[w] * J * 2, T * J * 2, batch.data().begin());
    const Tensor conn = model.connections(batch).reshaped({J, J});
    grids << "# sample " << w << " frames " << starts[w] << '-' << starts[w] + T - 1 << '\n';
    for (std::size_t i = 0; i < J; ++i) {
      for (std::size_t j = 0; j < J; ++j) grids << (j ? " " : "") << format_double(conn[i * J + j]);
      grids << '\n';
    }
    if (args.plots) {
      char name[40];
      std::snprintf(name, sizeof name, "connections_%04zu.ppm", w);
      std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
      f << heatmap_ppm(conn);
      if (!f) throw std::runtime_error("failed writing " + (dir / name).string());
    }
  }
  write_text(dir / "connections.txt", grids.str());
  out << "wrote " << starts.size() << " connection matrices (" << J << 'x' << J << ") to "
      << (dir / "connections.txt").string() << '\n';
  return 0;
}

}  // namespace ucdg
