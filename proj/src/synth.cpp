#include <cmath>
#include <numbers>
#include <queue>

#include "ucdg/data.hpp"
#include "ucdg/text.hpp"

namespace ucdg {
namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

constexpr double kPi = std::numbers::pi;
constexpr double kMinDepth = 100.0;  // mm in front of the camera
constexpr int kMaxRetries = 16;

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return c;
}

Vec3 apply3(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

// Rz(c) * Ry(b) * Rx(a)
Mat3 euler(const Vec3& angles) {
  const double ca = std::cos(angles[0]), sa = std::sin(angles[0]);
  const double cb = std::cos(angles[1]), sb = std::sin(angles[1]);
  const double cc = std::cos(angles[2]), sc = std::sin(angles[2]);
  const Mat3 rx{1, 0, 0, 0, ca, -sa, 0, sa, ca};
  const Mat3 ry{cb, 0, sb, 0, 1, 0, -sb, 0, cb};
  const Mat3 rz{cc, -sc, 0, sc, cc, 0, 0, 0, 1};
  return matmul3(rz, matmul3(ry, rx));
}

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

struct Sinusoid {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;
};

// One joint angle: offset + sum of sinusoids.
struct Trajectory {
  double offset = 0.0;
  std::vector<Sinusoid> terms;

  double at(double time) const {
    double v = offset;
    for (const Sinusoid& s : terms) v += s.amplitude * std::sin(2.0 * kPi * s.frequency * time + s.phase);
    return v;
  }
};

// Rest direction of the bone ending at each joint; x left, y up, z facing
// the default camera.
std::vector<Vec3> rest_directions(const DirectedSkeleton& skel) {
  const std::size_t J = skel.joint_count();
  if (skel.layout == "h36m17") {
    return {{0, 0, 0},  {-1, 0, 0}, {0, -1, 0}, {0, -1, 0}, {1, 0, 0},  {0, -1, 0},
            {0, -1, 0}, {0, 1, 0},  {0, 1, 0},  normalized({0, 1, 0.3}), {0, 1, 0},
            {1, 0, 0},  {0, -1, 0}, {0, -1, 0}, {-1, 0, 0}, {0, -1, 0}, {0, -1, 0}};
  }
  // Generic layouts: siblings fan out below their parent.
  std::vector<Vec3> dirs(J, Vec3{0, 0, 0});
  std::vector<std::vector<std::size_t>> children(J);
  for (std::size_t j = 0; j < J; ++j)
    if (skel.parent[j] != kNoParent) children[std::size_t(skel.parent[j])].push_back(j);
  for (const auto& kids : children) {
    for (std::size_t i = 0; i < kids.size(); ++i) {
      const double spread = double(i) - 0.5 * double(kids.size() - 1);
      dirs[kids[i]] = normalized({0.5 * spread, -1.0, 0.0});
    }
  }
  return dirs;
}

// Parents before children.
std::vector<std::size_t> topological_order(const DirectedSkeleton& skel) {
  const std::size_t J = skel.joint_count();
  std::vector<std::vector<std::size_t>> children(J);
  for (std::size_t j = 0; j < J; ++j)
    if (skel.parent[j] != kNoParent) children[std::size_t(skel.parent[j])].push_back(j);
  std::vector<std::size_t> order;
  std::queue<std::size_t> q;
  q.push(skel.root);
  while (!q.empty()) {
    const std::size_t j = q.front();
    q.pop();
    order.push_back(j);
    for (std::size_t c : children[j]) q.push(c);
  }
  return order;
}

class SequenceSampler {
 public:
  SequenceSampler(const SynthConfig& cfg, const DirectedSkeleton& skel, std::mt19937_64& rng)
      : cfg_(cfg), skel_(skel), rng_(rng) {}

  // Angle trajectories per joint and axis, plus the root yaw.
  std::vector<std::array<Trajectory, 3>> sample(std::size_t cls, double& yaw) {
    const std::size_t J = skel_.joint_count();
    std::vector<std::array<Trajectory, 3>> traj(J);
    std::uniform_real_distribution<double> yaw_dist(-kPi / 4, kPi / 4);
    yaw = yaw_dist(rng_);

    std::size_t template_terms = 0;
    if (skel_.layout == "h36m17" && cls < 2) {
      template_terms = 1;
      const double A = amplitude(), f = frequency();
      auto swing = [&](std::size_t joint, double amp, double phase) {
        traj[joint][0].terms.push_back({amp, f, phase});
      };
      if (cls == 0) {
        // Gait: legs in antiphase, each arm in antiphase with its own leg.
        swing(1, A, 0.0);
        swing(4, A, kPi);
        swing(2, 0.6 * A, kPi / 2);
        swing(5, 0.6 * A, 3 * kPi / 2);
        swing(14, A, kPi);
        swing(11, A, 0.0);
        swing(15, 0.4 * A, kPi / 2);
        swing(12, 0.4 * A, 3 * kPi / 2);
      } else {
        // Reach: one hand travels up toward the head and back.
        const bool left = std::bernoulli_distribution(0.5)(rng_);
        const std::size_t shoulder = left ? 11 : 14, elbow = left ? 12 : 15;
        traj[shoulder][0].offset = -1.5 * A;
        swing(shoulder, 1.5 * A, 0.0);
        traj[elbow][0].offset = -2.0 * A;
        swing(elbow, 2.0 * A, 0.0);
      }
    }
    // Background motion on every joint and axis.
    for (std::size_t j = 0; j < J; ++j) {
      for (auto& axis : traj[j]) {
        const std::size_t own = axis.terms.empty() ? 0 : template_terms;
        for (std::size_t s = own; s < cfg_.sinusoids; ++s) {
          axis.terms.push_back({0.2 * amplitude(), frequency(), phase()});
        }
      }
    }
    return traj;
  }

 private:
  double amplitude() { return std::uniform_real_distribution<double>(cfg_.min_amplitude, cfg_.max_amplitude)(rng_); }
  double frequency() { return std::uniform_real_distribution<double>(cfg_.min_frequency, cfg_.max_frequency)(rng_); }
  double phase() { return std::uniform_real_distribution<double>(0.0, 2.0 * kPi)(rng_); }

  const SynthConfig& cfg_;
  const DirectedSkeleton& skel_;
  std::mt19937_64& rng_;
};

}  // namespace

std::vector<double> default_bone_lengths(const DirectedSkeleton& skel) {
  if (skel.layout == "h36m17") {
    return {130, 450, 440, 130, 450, 440, 230, 250, 120, 110, 150, 280, 250, 150, 280, 250};
  }
  return std::vector<double>(skel.edge_count(), 200.0);
}

std::string class_name(std::size_t cls) {
  switch (cls) {
    case 0: return "gait";
    case 1: return "reach";
  }
  return "class" + std::to_string(cls);
}

void SynthConfig::validate() const {
  DirectedSkeleton skel = is_builtin_layout(layout) ? build_skeleton(layout) : build_skeleton(parents, {}, layout);
  if (!bone_lengths.empty()) {
    if (bone_lengths.size() != skel.edge_count()) {
      throw std::invalid_argument("synth: " + std::to_string(bone_lengths.size()) + " bone lengths for " +
                                  std::to_string(skel.edge_count()) + " edges");
    }
    for (double l : bone_lengths)
      if (!(l > 0.0)) throw std::invalid_argument("synth: bone lengths must be positive");
  }
  if (sinusoids == 0 || sinusoids > 3) throw std::invalid_argument("synth: sinusoids per angle must be 1, 2 or 3");
  if (!(min_frequency > 0.0 && max_frequency >= min_frequency)) {
    throw std::invalid_argument("synth: frequencies must be positive with min <= max");
  }
  if (!(min_amplitude >= 0.0 && max_amplitude >= min_amplitude)) {
    throw std::invalid_argument("synth: amplitudes must be non-negative with min <= max");
  }
  if (classes == 0 || classes > 2) throw std::invalid_argument("synth: classes must be 1 or 2");
  if (!(camera.focal > 0.0) || width == 0 || height == 0) {
    throw std::invalid_argument("synth: focal length and image size must be positive");
  }
  if (!(noise_sigma >= 0.0) || !(fps > 0.0)) throw std::invalid_argument("synth: noise must be >= 0 and fps > 0");
  if (frames == 0 || count == 0) throw std::invalid_argument("synth: frames and count must be positive");
}

bool SynthConfig::set(const std::string& key, const std::string& value) {
  auto list = [&] {
    std::vector<double> out;
    for (auto tok : split(value, ',')) out.push_back(parse_double(tok));
    return out;
  };
  if (key == "layout") layout = value;
  else if (key == "parents") {
    parents.clear();
    for (auto tok : split(value, ',')) parents.push_back(int(parse_int(tok)));
  } else if (key == "bone_lengths") bone_lengths = list();
  else if (key == "sinusoids") sinusoids = parse_size(value);
  else if (key == "min_frequency") min_frequency = parse_double(value);
  else if (key == "max_frequency") max_frequency = parse_double(value);
  else if (key == "min_amplitude") min_amplitude = parse_double(value);
  else if (key == "max_amplitude") max_amplitude = parse_double(value);
  else if (key == "classes") classes = parse_size(value);
  else if (key == "focal") camera.focal = parse_double(value);
  else if (key == "cx") camera.cx = parse_double(value);
  else if (key == "cy") camera.cy = parse_double(value);
  else if (key == "camera_distance") camera.translation[2] = parse_double(value);
  else if (key == "width") width = parse_size(value);
  else if (key == "height") height = parse_size(value);
  else if (key == "noise_sigma") noise_sigma = parse_double(value);
  else if (key == "fps") fps = parse_double(value);
  else if (key == "frames") frames = parse_size(value);
  else if (key == "count") count = parse_size(value);
  else if (key == "seed") seed = std::uint64_t(parse_size(value));
  else return false;
  return true;
}

std::vector<PoseSequence> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const DirectedSkeleton skel =
      is_builtin_layout(cfg.layout) ? build_skeleton(cfg.layout) : build_skeleton(cfg.parents, {}, cfg.layout);
  const std::size_t J = skel.joint_count();
  const std::vector<double> lengths = cfg.bone_lengths.empty() ? default_bone_lengths(skel) : cfg.bone_lengths;
  const std::vector<Vec3> dirs = rest_directions(skel);
  const std::vector<std::size_t> order = topological_order(skel);

  std::vector<PoseSequence> out;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    std::seed_seq seq_seed{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), std::uint32_t(i)};
    std::mt19937_64 rng(seq_seed);
    const std::size_t cls = i % cfg.classes;

    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRetries) {
        throw std::runtime_error("synth: sequence " + std::to_string(i) + " keeps leaving the camera view after " +
                                 std::to_string(kMaxRetries) + " attempts");
      }
      double yaw = 0.0;
      const auto traj = SequenceSampler(cfg, skel, rng).sample(cls, yaw);
      const Mat3 root_rot = euler({0.0, yaw, 0.0});

      Tensor p3({cfg.frames, J, 3});
      Tensor p2({cfg.frames, J, 2});
      bool visible = true;
      std::vector<Vec3> pos(J);
      std::vector<Mat3> global(J);
      for (std::size_t t = 0; t < cfg.frames && visible; ++t) {
        const double time = double(t) / cfg.fps;
        for (std::size_t j : order) {
          const Mat3 local = euler({traj[j][0].at(time), traj[j][1].at(time), traj[j][2].at(time)});
          if (skel.parent[j] == kNoParent) {
            pos[j] = {0, 0, 0};
            global[j] = matmul3(root_rot, local);
            continue;
          }
          const auto parent = std::size_t(skel.parent[j]);
          const double len = lengths[*skel.edge_of_joint(j)];
          const Vec3 bone = apply3(global[parent], {len * dirs[j][0], len * dirs[j][1], len * dirs[j][2]});
          pos[j] = {pos[parent][0] + bone[0], pos[parent][1] + bone[1], pos[parent][2] + bone[2]};
          global[j] = matmul3(global[parent], local);
        }
        for (std::size_t j = 0; j < J; ++j) {
          const Vec3 c = cfg.camera.to_camera(pos[j]);
          if (c[2] < kMinDepth) {
            visible = false;
            break;
          }
          const auto uv = cfg.camera.project(c);
          for (int k = 0; k < 3; ++k) p3.at({t, j, std::size_t(k)}) = c[std::size_t(k)];
          p2.at({t, j, 0}) = uv[0];
          p2.at({t, j, 1}) = uv[1];
        }
      }
      if (!visible) continue;
      if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (double& v : p2.data()) v += noise(rng);
      }

      PoseSequence s;
      s.layout = skel.layout;
      if (!is_builtin_layout(cfg.layout)) s.parents = cfg.parents;
      s.fps = cfg.fps;
      s.frames = cfg.frames;
      s.width = cfg.width;
      s.height = cfg.height;
      s.poses2d = std::move(p2);
      s.poses3d = std::move(p3);
      s.camera = cfg.camera;
      s.action = class_name(cls);
      s.noise_sigma = cfg.noise_sigma;
      out.push_back(std::move(s));
      break;
    }
  }
  return out;
}

}  // namespace ucdg
