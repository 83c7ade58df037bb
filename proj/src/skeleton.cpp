#include "ucdg/skeleton.hpp"

#include <algorithm>

namespace ucdg {
namespace {

const std::vector<int> kH36mParents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
const std::vector<std::string> kH36mNames = {
    "hip",        "r_hip",   "r_knee",   "r_ankle",    "l_hip",   "l_knee",  "l_ankle", "spine",  "thorax",
    "neck_nose",  "head",    "l_shoulder", "l_elbow",  "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};

}  // namespace

std::optional<std::size_t> DirectedSkeleton::edge_of_joint(std::size_t joint) const {
  if (joint == root) return std::nullopt;
  return joint < root ? joint : joint - 1;
}

std::size_t DirectedSkeleton::joint_of_edge(std::size_t edge) const { return edge < root ? edge : edge + 1; }

std::size_t DirectedSkeleton::joint_index(std::string_view name) const {
  auto it = std::find(joint_names.begin(), joint_names.end(), name);
  if (it == joint_names.end()) throw SkeletonError("unknown joint '" + std::string(name) + "' in layout " + layout);
  return std::size_t(it - joint_names.begin());
}

bool is_builtin_layout(std::string_view layout) { return layout == "h36m17"; }

DirectedSkeleton build_skeleton(std::string_view layout) {
  if (layout == "h36m17") return build_skeleton(kH36mParents, kH36mNames, "h36m17");
  throw SkeletonError("unknown skeleton layout '" + std::string(layout) + "'");
}

DirectedSkeleton build_skeleton(std::vector<int> parent, std::vector<std::string> joint_names, std::string layout) {
  const std::size_t n = parent.size();
  if (n < 2) throw SkeletonError("skeleton needs at least two joints");
  if (joint_names.empty()) {
    for (std::size_t j = 0; j < n; ++j) joint_names.push_back("joint" + std::to_string(j));
  }
  if (joint_names.size() != n) throw SkeletonError("joint name count does not match parent array");

  auto name = [&](std::size_t j) { return "joint " + std::to_string(j) + " (" + joint_names[j] + ")"; };
  std::optional<std::size_t> root;
  for (std::size_t j = 0; j < n; ++j) {
    const int p = parent[j];
    if (p == kNoParent) {
      if (root) throw SkeletonError("multiple roots: " + name(*root) + " and " + name(j));
      root = j;
    } else if (p < 0 || std::size_t(p) >= n) {
      throw SkeletonError(name(j) + " has out-of-range parent " + std::to_string(p));
    } else if (std::size_t(p) == j) {
      throw SkeletonError(name(j) + " is its own parent");
    }
  }
  // Every joint must reach the root within n steps; otherwise it sits on (or
  // hangs off) a cycle and is disconnected from the root.
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t cur = j, steps = 0;
    while (parent[cur] != kNoParent) {
      cur = std::size_t(parent[cur]);
      if (++steps > n) throw SkeletonError("cycle through " + name(j) + ": not connected to a root");
    }
  }
  if (!root) throw SkeletonError("no root joint");
  DirectedSkeleton s;
  s.layout = std::move(layout);
  s.parent = std::move(parent);
  s.joint_names = std::move(joint_names);
  s.root = *root;
  return s;
}

IncidenceMaps incidence(const DirectedSkeleton& skel) {
  const std::size_t j_count = skel.joint_count(), e_count = skel.edge_count();
  IncidenceMaps m;
  m.in_edge.assign(j_count, std::nullopt);
  m.out_edges.assign(j_count, {});
  m.edge_source.resize(e_count);
  m.edge_target.resize(e_count);
  for (std::size_t e = 0; e < e_count; ++e) {
    const std::size_t child = skel.joint_of_edge(e);
    const std::size_t par = std::size_t(skel.parent[child]);
    m.edge_source[e] = par;
    m.edge_target[e] = child;
    m.in_edge[child] = e;
    m.out_edges[par].push_back(e);
  }
  return m;
}

GraphFeatures init_features(const Tensor& pose2d, const DirectedSkeleton& skel) {
  Tensor pose = pose2d;
  if (pose.rank() == 3) pose = pose.reshaped({1, pose.dim(0), pose.dim(1), pose.dim(2)});
  if (pose.rank() != 4 || pose.dim(3) != 2) {
    throw ShapeError("init_features: expected (B,T,J,2) poses, got " + shape_string(pose2d.shape()));
  }
  const std::size_t B = pose.dim(0), T = pose.dim(1), J = pose.dim(2), E = skel.edge_count();
  if (J != skel.joint_count()) {
    throw ShapeError("init_features: pose has " + std::to_string(J) + " joints, layout " + skel.layout + " has " +
                     std::to_string(skel.joint_count()));
  }
  GraphFeatures f{Tensor({B, 2, T, J}), Tensor({B, 2, T, E})};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t base = (b * T + t) * J * 2;
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < J; ++j) f.node_feats[((b * 2 + c) * T + t) * J + j] = pose[base + j * 2 + c];
        for (std::size_t e = 0; e < E; ++e) {
          const std::size_t child = skel.joint_of_edge(e);
          const std::size_t par = std::size_t(skel.parent[child]);
          f.edge_feats[((b * 2 + c) * T + t) * E + e] = pose[base + child * 2 + c] - pose[base + par * 2 + c];
        }
      }
    }
  return f;
}

}  // namespace ucdg
