#include <CLI11.hpp>
#include <iostream>

#include "ucdg/commands.hpp"

namespace {

using Command = int (*)(const ucdg::CommandArgs&, std::ostream&);

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, checkpoint, input, gt, cond;
  std::size_t window_step = 5;
  bool plots = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
  cmd->add_option("--out", o.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ucdg: 2D-to-3D pose lifting with conditional directed graph convolutions"};
  app.require_subcommand(1);
  Options o;

  struct Entry {
    const char* name;
    const char* help;
    Command run;
  };
  const Entry entries[] = {
      {"synth", "generate a synthetic pose corpus", ucdg::cmd_synth},
      {"train", "train a model and write a checkpoint and report", ucdg::cmd_train},
      {"infer", "lift a 2D pose file to 3D with a sliding window", ucdg::cmd_infer},
      {"eval", "score predicted 3D poses against ground truth", ucdg::cmd_eval},
      {"gradcheck", "finite-difference check of every layer and a tiny model", ucdg::cmd_gradcheck},
      {"ablate", "compare conditional placements on a synthetic corpus", ucdg::cmd_ablate},
      {"inspect", "write the predicted connection matrices as text grids", ucdg::cmd_inspect},
  };
  std::map<CLI::App*, Command> commands;
  for (const Entry& e : entries) {
    CLI::App* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, o);
    commands[cmd] = e.run;
    const std::string name = e.name;
    if (name == "train" || name == "ablate") {
      cmd->add_option("--cond", o.cond, "conditional placement")
          ->check(CLI::IsMember({"merge", "down", "up", "all", "off"}));
    }
    if (name == "train" || name == "infer" || name == "inspect") cmd->add_option("--input", o.input, "pose file or directory");
    if (name == "eval") {
      cmd->add_option("--input", o.input, "predicted pose file or directory")->required();
      cmd->add_option("--gt", o.gt, "ground-truth pose file or directory")->required();
    }
    if (name == "infer" || name == "inspect") {
      cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
      cmd->add_option("--window-step", o.window_step, "frames between sliding windows")
          ->check(CLI::PositiveNumber);
    }
    if (name == "eval" || name == "inspect") cmd->add_flag("--plots", o.plots, "also write SVG/PPM plots");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    ucdg::CommandArgs args;
    if (!o.config.empty()) args.config = ucdg::RunConfig::load(o.config);
    args.seed = o.seed;
    if (o.out) args.out_dir = *o.out;
    if (o.checkpoint) args.checkpoint = *o.checkpoint;
    if (o.input) args.input = *o.input;
    if (o.gt) args.gt = *o.gt;
    if (o.cond) args.cond = ucdg::parse_cond_placement(*o.cond);
    args.window_step = o.window_step;
    args.plots = o.plots;
    for (const auto& [cmd, run] : commands) {
      if (cmd->parsed()) return run(args, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
