#include <fstream>
#include <iterator>

#include "ucdg/commands.hpp"
#include "ucdg/text.hpp"

namespace ucdg {
namespace {

bool set_train(TrainSettings& t, const std::string& key, const std::string& value) {
  if (key == "epochs") t.epochs = parse_size(value);
  else if (key == "batch_size") t.batch_size = parse_size(value);
  else if (key == "window_stride") t.window_stride = parse_size(value);
  else if (key == "val_fraction") t.val_fraction = parse_double(value);
  else if (key == "lr") t.lr = parse_double(value);
  else if (key == "max_steps") t.max_steps = parse_size(value);
  else if (key == "lambda") t.loss.lambda = parse_double(value);
  else if (key == "deltas") {
    t.loss.deltas.clear();
    for (auto tok : split(value, ',')) t.loss.deltas.push_back(parse_size(tok));
  } else return false;
  return true;
}

bool set_ablate(AblationSettings& a, const std::string& key, const std::string& value) {
  if (key == "seeds") a.seeds = parse_size(value);
  else if (key == "placements") {
    a.placements.clear();
    for (auto tok : split(value, ',')) a.placements.push_back(parse_cond_placement(tok));
  } else return false;
  return true;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string rest = dot == std::string::npos ? key : key.substr(dot + 1);
    bool known = false;
    if (section.empty() && key == "seed") cfg.seed = std::uint64_t(parse_size(value)), known = true;
    else if (section.empty() && key == "out") cfg.out_dir = value, known = true;
    else if (section == "model") known = cfg.model.set(rest, value);
    else if (section == "synth") known = cfg.synth.set(rest, value);
    else if (section == "train") known = set_train(cfg.train, rest, value);
    else if (section == "ablate") known = set_ablate(cfg.ablate, rest, value);
    if (!known) throw ParseError("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path.string());
  const std::string text{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void RunConfig::validate() const {
  model.validate();
  synth.validate();
  if (train.batch_size == 0 || train.window_stride == 0) {
    throw std::invalid_argument("train.batch_size and train.window_stride must be positive");
  }
  if (!(train.val_fraction >= 0.0 && train.val_fraction < 1.0)) {
    throw std::invalid_argument("train.val_fraction must be in [0, 1)");
  }
  if (!(train.lr >= 0.0)) throw std::invalid_argument("train.lr must be non-negative");
  train.loss.validate(model.window);
  if (ablate.seeds == 0 || ablate.placements.empty()) {
    throw std::invalid_argument("ablate.seeds and ablate.placements must be non-empty");
  }
}

}  // namespace ucdg
