#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ucdg/tensor.hpp"

namespace ucdg {

inline constexpr int kNoParent = -1;

class SkeletonError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Joints are nodes, bones are edges directed parent -> child. Bone e belongs
// to the child joint whose dense index among non-root joints is e.
struct DirectedSkeleton {
  std::string layout;
  std::vector<int> parent;  // kNoParent at the root
  std::vector<std::string> joint_names;
  std::size_t root = 0;

  std::size_t joint_count() const { return parent.size(); }
  std::size_t edge_count() const { return parent.size() - 1; }

  // Bone ending at `joint`; nullopt for the root.
  std::optional<std::size_t> edge_of_joint(std::size_t joint) const;
  std::size_t joint_of_edge(std::size_t edge) const;
  std::size_t joint_index(std::string_view name) const;
};

struct IncidenceMaps {
  std::vector<std::optional<std::size_t>> in_edge;
  std::vector<std::vector<std::size_t>> out_edges;
  std::vector<std::size_t> edge_source;
  std::vector<std::size_t> edge_target;
};

// Built-in layouts: "h36m17".
DirectedSkeleton build_skeleton(std::string_view layout);
DirectedSkeleton build_skeleton(std::vector<int> parent, std::vector<std::string> joint_names = {},
                                std::string layout = "custom");
bool is_builtin_layout(std::string_view layout);

IncidenceMaps incidence(const DirectedSkeleton& skel);

// node_feats (B, C_n, T, J) and edge_feats (B, C_e, T, E).
struct GraphFeatures {
  Tensor node_feats;
  Tensor edge_feats;
};

// pose2d: (B, T, J, 2) or (T, J, 2) normalized coordinates. Node channels are
// (x, y); edge channels are child minus parent.
GraphFeatures init_features(const Tensor& pose2d, const DirectedSkeleton& skel);

}  // namespace ucdg
