#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ucdg/skeleton.hpp"
#include "ucdg/tensor.hpp"

namespace ucdg {

// Pinhole camera. World points map to camera coordinates as R * p + t
// (millimeters, z forward, y down) and to pixels as f * (x/z, y/z) + c.
struct Camera {
  double focal = 1000.0;
  double cx = 500.0;
  double cy = 500.0;
  std::array<double, 9> rotation{1, 0, 0, 0, -1, 0, 0, 0, -1};  // row-major
  std::array<double, 3> translation{0, 0, 5000};

  std::array<double, 3> to_camera(const std::array<double, 3>& world) const;
  // Pixel coordinates of a camera-space point; z must be positive.
  std::array<double, 2> project(const std::array<double, 3>& cam) const;
};

struct PoseSequence {
  std::string layout = "h36m17";
  std::vector<int> parents;  // only for layouts that are not built in
  double fps = 50.0;
  std::size_t frames = 0;
  std::size_t width = 0;  // image size in pixels, required with poses2d
  std::size_t height = 0;
  std::optional<Tensor> poses2d;  // (frames, J, 2) pixels
  std::optional<Tensor> poses3d;  // (frames, J, 3) millimeters, camera space
  std::optional<Camera> camera;
  std::string action;
  double noise_sigma = 0.0;  // pixel noise added to poses2d

  DirectedSkeleton skeleton() const;
  // Throws std::invalid_argument when the fields disagree with each other.
  void validate() const;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// DGP text: one JSON header line, then one line per frame holding the 2D
// coordinates (x, y per joint) followed by the 3D ones (x, y, z per joint).
// Values are written in shortest round-trip form, so a reload is exact.
std::string format_poses(const PoseSequence& seq);
PoseSequence parse_poses(std::string_view text);
void save_poses(const PoseSequence& seq, const std::filesystem::path& path);
PoseSequence load_poses(const std::filesystem::path& path);
// Every *.dgp file of a directory in name order.
std::vector<PoseSequence> load_pose_dir(const std::filesystem::path& dir);

// Pixels to [-1, 1]: x -> 2x/width - 1, y -> 2y/height - 1.
Tensor normalize_2d(const Tensor& pixels, std::size_t width, std::size_t height);
Tensor normalize_2d(const PoseSequence& seq);

// Translates every frame so the root joint sits at the origin.
Tensor root_relative(const Tensor& poses, std::size_t root);

struct SynthConfig {
  std::string layout = "h36m17";
  std::vector<int> parents;
  // Per edge, in edge order; empty selects the layout's default lengths.
  std::vector<double> bone_lengths;
  std::size_t sinusoids = 3;  // per joint angle, at most 3
  double min_frequency = 0.3;  // Hz
  double max_frequency = 1.5;
  double min_amplitude = 0.0;  // radians
  double max_amplitude = 0.5;
  std::size_t classes = 2;  // 0 = gait, 1 = reach; sequence i has class i % classes
  Camera camera;
  std::size_t width = 1000;
  std::size_t height = 1000;
  double noise_sigma = 0.0;  // pixels
  double fps = 50.0;
  std::size_t frames = 128;
  std::size_t count = 8;
  std::uint64_t seed = 0;

  void validate() const;
  bool set(const std::string& key, const std::string& value);
};

// Per-edge default bone lengths for the layout (mm).
std::vector<double> default_bone_lengths(const DirectedSkeleton& skel);

std::string class_name(std::size_t cls);

// Forward-kinematics corpus: smooth per-joint rotation trajectories, fixed
// bone lengths, pinhole projection, Gaussian pixel noise.
std::vector<PoseSequence> synth_generate(const SynthConfig& cfg);

// Training windows: normalized 2D inputs (N, T, J, 2) and root-relative 3D
// targets (N, T, J, 3) in meters.
struct WindowSet {
  Tensor inputs;
  Tensor targets;
  std::vector<std::string> actions;

  std::size_t size() const { return actions.size(); }
  bool empty() const { return actions.empty(); }
};

// Windows of length `window` every `stride` frames plus a right-aligned tail
// window per sequence. Sequences need both 2D and 3D poses.
WindowSet make_windows(const std::vector<PoseSequence>& seqs, std::size_t window, std::size_t stride);

// Seeded 80/20 split by sequence: first holds the training part.
std::pair<std::vector<PoseSequence>, std::vector<PoseSequence>> split_sequences(std::vector<PoseSequence> seqs,
                                                                               std::uint64_t seed,
                                                                               double val_fraction = 0.2);

// Start frames 0, step, 2*step, ... plus a right-aligned last window.
std::vector<std::size_t> window_starts(std::size_t total, std::size_t window, std::size_t step);

// Maps a batch of windows (B, T, J, 2) to (B, T, J, 3).
using WindowPredictor = std::function<Tensor(const Tensor&)>;

// pose2d: (frames, J, 2) normalized. Every frame's output is the mean of
// the windows covering it. `coverage`, when given, receives the per-frame
// window counts.
Tensor sliding_window_infer(const WindowPredictor& predict, const Tensor& pose2d, std::size_t window,
                            std::size_t step = 5, std::vector<std::size_t>* coverage = nullptr);

}  // namespace ucdg
