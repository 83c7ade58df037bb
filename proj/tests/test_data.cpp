#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "ucdg/data.hpp"

using namespace ucdg;

namespace {

SynthConfig small_synth() {
  SynthConfig s;
  s.frames = 20;
  s.count = 4;
  s.noise_sigma = 0.0;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("DGP text round trip is exact") {
  SynthConfig s = small_synth();
  s.noise_sigma = 1.5;
  const PoseSequence seq = synth_generate(s)[1];
  const PoseSequence back = parse_poses(format_poses(seq));
  CHECK(back.layout == seq.layout);
  CHECK(back.frames == seq.frames);
  CHECK(back.fps == seq.fps);
  CHECK(back.width == seq.width);
  CHECK(back.action == seq.action);
  CHECK(back.noise_sigma == seq.noise_sigma);
  CHECK(*back.poses2d == *seq.poses2d);
  CHECK(*back.poses3d == *seq.poses3d);
  REQUIRE(back.camera.has_value());
  CHECK(back.camera->rotation == seq.camera->rotation);
  CHECK(format_poses(back) == format_poses(seq));

  // Custom layouts carry their parent array.
  PoseSequence custom;
  custom.layout = "pair";
  custom.parents = {-1, 0};
  custom.frames = 1;
  custom.poses3d = Tensor({1, 2, 3}, {0, 0, 0, 1, 2, 3});
  const PoseSequence c = parse_poses(format_poses(custom));
  CHECK(c.parents == custom.parents);
  CHECK_FALSE(c.poses2d.has_value());
  CHECK(c.skeleton().joint_count() == 2);

  const auto dir = testutil::temp_dir("dgp");
  save_poses(seq, dir / "b.dgp");
  save_poses(custom, dir / "a.dgp");
  std::ofstream(dir / "ignored.txt") << "x";
  const auto all = load_pose_dir(dir);
  REQUIRE(all.size() == 2);
  CHECK(all[0].layout == "pair");
  CHECK(*all[1].poses3d == *seq.poses3d);
}

TEST_CASE("DGP errors carry line numbers") {
  PoseSequence seq;
  seq.layout = "pair";
  seq.parents = {-1, 0};
  seq.frames = 2;
  seq.poses3d = Tensor({2, 2, 3}, 1.0);
  const std::string text = format_poses(seq);
  const std::string header = text.substr(0, text.find('\n') + 1);
  auto line_of = [](const std::string& t) -> std::size_t {
    try {
      parse_poses(t);
    } catch (const FormatError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of(header + "1 1 1 1 1 1\n") == 3);               // one row of two
  CHECK(line_of(header + "1 1 1 1 1 1\n1 1 x 1 1 1\n") == 3);  // non-numeric
  CHECK(line_of(header + "1 1 1 1 1\n1 1 1 1 1 1\n") == 2);    // short row
  CHECK(line_of(text + "1 1 1 1 1 1\n") == 4);                 // extra row
  CHECK(line_of("not json\n") == 1);
  CHECK(line_of("{\"format\":\"XYZ\"}\n") == 1);
  CHECK(line_of("") == 1);
  CHECK_THROWS_AS(load_poses("/nonexistent/file.dgp"), std::exception);
}

TEST_CASE("normalization and root-relative coordinates") {
  const Tensor px({1, 3, 2}, {0, 0, 500, 250, 1000, 500});
  const Tensor n = normalize_2d(px, 1000, 500);
  CHECK(n.to_vector() == std::vector<double>{-1, -1, 0, 0, 1, 1});
  CHECK_THROWS(normalize_2d(px, 0, 500));

  const Tensor poses({2, 2, 3}, {1, 2, 3, 4, 6, 8, 0, 0, 1, 5, 5, 5});
  CHECK(root_relative(poses, 0).to_vector() == std::vector<double>{0, 0, 0, 3, 4, 5, 0, 0, 0, 5, 5, 4});
  CHECK_THROWS(root_relative(poses, 2));
}

TEST_CASE("synthetic corpus") {
  const SynthConfig cfg = small_synth();
  const auto seqs = synth_generate(cfg);
  REQUIRE(seqs.size() == 4);
  const DirectedSkeleton skel = build_skeleton(cfg.layout);
  const auto lengths = default_bone_lengths(skel);
  CHECK(seqs[0].action == class_name(0));
  CHECK(seqs[1].action == class_name(1));
  CHECK(seqs[2].action == "gait");
  CHECK(seqs[3].action == "reach");

  for (const PoseSequence& s : seqs) {
    CHECK_NOTHROW(s.validate());
    const Tensor& p3 = *s.poses3d;
    const Tensor& p2 = *s.poses2d;
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t e = 0; e < skel.edge_count(); ++e) {
        const std::size_t c = skel.joint_of_edge(e), p = std::size_t(skel.parent[c]);
        double sq = 0.0;
        for (std::size_t k = 0; k < 3; ++k) sq += std::pow(p3.at({t, c, k}) - p3.at({t, p, k}), 2);
        CHECK(std::sqrt(sq) == doctest::Approx(lengths[e]).epsilon(1e-12));
      }
      for (std::size_t j = 0; j < 17; ++j) {
        // Pinhole reprojection of the camera-space joint.
        const double x = p3.at({t, j, 0}), y = p3.at({t, j, 1}), z = p3.at({t, j, 2});
        CHECK(z > 100.0);
        CHECK(p2.at({t, j, 0}) == doctest::Approx(1000.0 * x / z + 500.0).epsilon(1e-12));
        CHECK(p2.at({t, j, 1}) == doctest::Approx(1000.0 * y / z + 500.0).epsilon(1e-12));
      }
    }
  }

  // Seeded: identical corpus twice, a different one for another seed.
  CHECK(*synth_generate(cfg)[2].poses2d == *seqs[2].poses2d);
  SynthConfig other = cfg;
  other.seed = 4;
  CHECK_FALSE(*synth_generate(other)[2].poses2d == *seqs[2].poses2d);

  SynthConfig bad = cfg;
  bad.min_frequency = 2.0;
  bad.max_frequency = 1.0;
  CHECK_THROWS(bad.validate());
  CHECK_FALSE(bad.set("colour", "red"));
}

TEST_CASE("sliding window coverage") {
  // 200 frames, window 96, step 5: starts 0, 5, ..., 100 and the
  // right-aligned tail at 104.
  const auto starts = window_starts(200, 96, 5);
  REQUIRE(starts.size() == 22);
  CHECK(starts.front() == 0);
  CHECK(starts[20] == 100);
  CHECK(starts.back() == 104);
  CHECK(window_starts(96, 96, 5) == std::vector<std::size_t>{0});
  CHECK_THROWS_WITH_AS(window_starts(50, 96, 5), doctest::Contains("pad"), std::invalid_argument);

  std::mt19937_64 rng(6);
  const Tensor pose = testutil::random_tensor({200, 3, 2}, rng);
  std::vector<std::size_t> coverage;
  auto constant = [](const Tensor& x) { return Tensor({x.dim(0), x.dim(1), x.dim(2), 3}, 0.3); };
  const Tensor out = sliding_window_infer(constant, pose, 96, 5, &coverage);
  CHECK(out.shape() == Shape{200, 3, 3});
  for (double v : out.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  for (std::size_t t = 0; t < 200; ++t) {
    std::size_t want = 0;
    for (std::size_t s : starts) want += s <= t && t < s + 96;
    CHECK(coverage[t] == want);
    CHECK(coverage[t] >= 1);
  }
  CHECK(testutil::max_abs_diff(sliding_window_infer(constant, pose, 96, 1), sliding_window_infer(constant, pose, 96, 17)) <=
        1e-15);

  // A frame-wise predictor is reproduced exactly whatever the overlap.
  auto framewise = [](const Tensor& x) {
    Tensor y({x.dim(0), x.dim(1), x.dim(2), 3});
    for (std::size_t i = 0; i < x.size() / 2; ++i) y[i * 3] = x[i * 2], y[i * 3 + 1] = x[i * 2 + 1];
    return y;
  };
  const Tensor f = sliding_window_infer(framewise, pose, 96, 5);
  for (std::size_t i = 0; i < 600; ++i) CHECK(f[i * 3] == doctest::Approx(pose[i * 2]).epsilon(1e-14));
}

TEST_CASE("training windows and splits") {
  SynthConfig cfg = small_synth();
  cfg.frames = 56;
  cfg.count = 3;
  const auto seqs = synth_generate(cfg);
  const WindowSet w = make_windows(seqs, 32, 8);
  CHECK(w.size() == 12);  // starts 0, 8, 16, 24 per sequence
  CHECK(w.inputs.shape() == Shape{12, 32, 17, 2});
  CHECK(w.targets.shape() == Shape{12, 32, 17, 3});
  // Targets are root-relative meters: the first window starts at frame 0.
  const Tensor& p3 = *seqs[0].poses3d;
  CHECK(w.targets.at({0, 5, 4, 1}) == doctest::Approx((p3.at({5, 4, 1}) - p3.at({5, 0, 1})) / 1000.0).epsilon(1e-14));
  CHECK(w.targets.at({0, 5, 0, 2}) == 0.0);
  CHECK(w.inputs.at({0, 5, 4, 0}) == 2.0 * seqs[0].poses2d->at({5, 4, 0}) / 1000.0 - 1.0);

  SynthConfig ten = small_synth();
  ten.count = 10;
  const auto [train, val] = split_sequences(synth_generate(ten), 1);
  CHECK(train.size() == 8);
  CHECK(val.size() == 2);
  const auto [train2, val2] = split_sequences(synth_generate(ten), 1);
  CHECK(*val2[0].poses2d == *val[0].poses2d);
}
