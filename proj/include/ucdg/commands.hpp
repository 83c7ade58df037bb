#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ucdg/data.hpp"
#include "ucdg/network.hpp"
#include "ucdg/train.hpp"

namespace ucdg {

struct TrainSettings {
  std::size_t epochs = 110;
  std::size_t batch_size = 256;
  std::size_t window_stride = 8;  // frames between training windows
  double val_fraction = 0.2;
  double lr = 5e-3;
  std::size_t max_steps = 0;
  LossConfig loss;
};

struct AblationSettings {
  std::size_t seeds = 5;
  std::vector<CondPlacement> placements{CondPlacement::off, CondPlacement::merge};
};

// Everything a command reads from its config file. Keys are `seed`, `out`,
// and `model.*`, `synth.*`, `train.*`, `ablate.*`; anything else is rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  ModelConfig model;
  SynthConfig synth;
  TrainSettings train;
  AblationSettings ablate;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;
};

// Command-line inputs shared by all commands.
struct CommandArgs {
  RunConfig config;
  std::optional<std::uint64_t> seed;  // overrides config.seed
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> input;
  std::optional<std::filesystem::path> gt;
  std::optional<CondPlacement> cond;
  std::size_t window_step = 5;
  bool plots = false;

  std::uint64_t effective_seed() const { return seed.value_or(config.seed); }
  std::filesystem::path effective_out() const { return out_dir.value_or(config.out_dir); }
};

// Each command prints to `out` and returns the process exit code. Invalid
// input raises an exception, which the entry point turns into exit code 1.
int cmd_synth(const CommandArgs& args, std::ostream& out);
int cmd_train(const CommandArgs& args, std::ostream& out);
int cmd_infer(const CommandArgs& args, std::ostream& out);
int cmd_eval(const CommandArgs& args, std::ostream& out);
int cmd_gradcheck(const CommandArgs& args, std::ostream& out);
int cmd_ablate(const CommandArgs& args, std::ostream& out);
int cmd_inspect(const CommandArgs& args, std::ostream& out);

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error <= tolerance; }
};

// Finite-difference checks of every layer (tolerance 1e-4) and of the
// total loss of a tiny end-to-end model, J = 5 and T = 8 (tolerance 1e-3,
// ten random coordinates per parameter group).
std::vector<CheckResult> gradcheck_suite(std::uint64_t seed);

struct AblationSpec {
  SynthConfig synth;
  ModelConfig model;
  FitConfig fit;
  std::size_t window_stride = 8;
  double val_fraction = 0.2;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<CondPlacement> placements{CondPlacement::off, CondPlacement::merge};
};

struct AblationRow {
  CondPlacement placement;
  std::vector<double> held_out_mpjpe;  // mm, one per seed
  double mean() const;
};

// For every seed: one synthetic corpus split by sequence, then one model per
// placement trained from the same seed and scored on the held-out part.
std::vector<AblationRow> run_ablation(const AblationSpec& spec, std::ostream* log = nullptr);

}  // namespace ucdg
