#include <doctest.h>

#include <sstream>

#include "pipeline.hpp"
#include "test_util.hpp"
#include "ucdg/commands.hpp"
#include "ucdg/data.hpp"
#include "ucdg/text.hpp"

using namespace ucdg;

TEST_CASE("run config parsing") {
  const RunConfig rc = RunConfig::parse(pipeline::kTinyConfig);
  CHECK(rc.seed == 4);
  CHECK(rc.model.window == 8);
  CHECK(rc.model.parents == std::vector<int>{-1, 0, 1, 0, 3});
  CHECK(rc.synth.count == 5);
  CHECK(rc.train.loss.deltas == std::vector<std::size_t>{1, 2, 4});
  CHECK_THROWS_AS(RunConfig::parse("model.colour = red\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::parse("speed = 3\n"), ParseError);
  CHECK_THROWS(RunConfig::parse("model.window = many\n"));
  CHECK_THROWS(RunConfig::parse("train.val_fraction = 1.5\n"));
}

TEST_CASE("pipeline artifacts") {
  const auto root = testutil::temp_dir("cli");
  const pipeline::Artifacts art = pipeline::run(root);
  CHECK(art.report.rfind("epoch,step,lr,train_loss,val_mpjpe\n", 0) == 0);
  const PoseSequence pred = parse_poses(art.prediction);
  CHECK(pred.frames == 20);
  CHECK(pred.poses3d.has_value());
  CHECK(art.metrics.find("mpjpe_mm = ") != std::string::npos);

  // Evaluating ground truth against itself.
  std::ostringstream log;
  CommandArgs e;
  e.config = RunConfig::parse(pipeline::kTinyConfig);
  e.out_dir = root / "self";
  e.input = root / "data";
  e.gt = root / "data";
  e.plots = true;
  CHECK(cmd_eval(e, log) == 0);
  const auto kv = parse_key_values(pipeline::read_bytes(root / "self" / "eval.txt"));
  CHECK(parse_double(kv.at("mpjpe_mm")) == 0.0);
  CHECK(parse_double(kv.at("pck_percent")) == 100.0);
  CHECK(parse_double(kv.at("auc_percent")) == 100.0);
  CHECK(std::filesystem::exists(root / "self" / "pck_curve.svg"));

  // Connection grids: one J x J block per window.
  CommandArgs i;
  i.config = e.config;
  i.out_dir = root / "inspect";
  i.checkpoint = root / "train" / "model.ucdg";
  i.input = root / "data" / "seq_0001.dgp";
  i.window_step = 6;
  CHECK(cmd_inspect(i, log) == 0);
  const std::string grids = pipeline::read_bytes(root / "inspect" / "connections.txt");
  std::size_t headers = 0, rows = 0;
  std::istringstream in(grids);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("# sample", 0) == 0) {
      ++headers;
    } else {
      ++rows;
      CHECK(split(line, ' ').size() == 5);
    }
  }
  CHECK(headers == window_starts(20, 8, 6).size());
  CHECK(rows == 5 * headers);

  // Missing required inputs are reported, not guessed.
  CommandArgs missing;
  missing.config = e.config;
  missing.out_dir = root / "x";
  CHECK_THROWS(cmd_infer(missing, log));
  CHECK_THROWS(cmd_eval(missing, log));
}

TEST_CASE("gradcheck suite passes") {
  for (const CheckResult& r : gradcheck_suite(0)) {
    INFO(r.name);
    CHECK(r.passed());
  }
}
