#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ucdg/layers.hpp"
#include "ucdg/skeleton.hpp"

namespace ucdg {

// Which stages use conditional (ST-CondDGConv) blocks.
enum class CondPlacement { merge, down, up, all, off };

std::string to_string(CondPlacement p);
CondPlacement parse_cond_placement(std::string_view s);

struct ModelConfig {
  std::string layout = "h36m17";
  std::vector<int> parents;  // only for layouts that are not built in
  std::size_t window = 96;   // input frames T
  std::size_t width = 64;    // node and edge channels in the down/up stages
  std::size_t merge_width = 128;
  std::size_t depth = 2;  // number of temporal downsampling stages
  std::size_t kernel = 3;
  std::size_t merge_blocks = 2;
  SparseInitConfig bank;
  double dropout = 0.3;
  bool normalize = true;
  CondPlacement cond = CondPlacement::merge;

  void validate() const;
  DirectedSkeleton skeleton() const;

  // `key = value` lines; parse() accepts exactly what serialize() writes.
  std::string serialize() const;
  static ModelConfig parse(std::string_view text);
  // Applies one `model.*`-style key without the prefix; false if unknown.
  bool set(const std::string& key, const std::string& value);

  friend bool operator==(const ModelConfig&, const ModelConfig&);
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  // When set, receives the routing output of every conditional block in
  // execution order.
  std::vector<Routing>* routings = nullptr;
};

// U-shaped network: input embedding, `depth` temporal downsampling blocks,
// `depth` upsampling stages with skip connections, a merging stage over all
// scales, and the fully connected head.
class Model {
 public:
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  // pose2d: (B, T, J, 2) normalized coordinates -> (B, T, J, 3).
  Var forward(Tape& tape, const Tensor& pose2d, const ForwardOptions& opts = {});

  // Inference forward without gradients; safe to call concurrently.
  Tensor predict(const Tensor& pose2d) const;

  // Connection matrices (B, J, J) of the last conditional block at inference.
  Tensor connections(const Tensor& pose2d) const;

  ParameterList parameters();
  std::vector<const Parameter*> parameters() const;
  BufferList buffers();
  std::vector<const Tensor*> buffers() const;
  std::size_t param_count() const;
  void zero_grad();

  const ModelConfig& config() const { return cfg_; }
  const DirectedSkeleton& skeleton() const { return skeleton_; }
  const GraphOperators& graph_operators() const { return ops_; }
  // Temporal length at each scale, finest first: T, T/2, ...
  std::vector<std::size_t> resolutions() const;

  STBlock& embed() { return embed_; }
  std::vector<STBlock>& down_blocks() { return down_; }
  std::vector<STBlock>& up_blocks() { return up_; }
  std::vector<STBlock>& merge_blocks() { return merge_; }
  FCHead& head() { return head_; }
  const std::vector<STBlock>& down_blocks() const { return down_; }
  const std::vector<STBlock>& up_blocks() const { return up_; }
  const std::vector<STBlock>& merge_blocks() const { return merge_; }

 private:
  ModelConfig cfg_;
  DirectedSkeleton skeleton_;
  GraphOperators ops_;
  STBlock embed_;
  std::vector<STBlock> down_;
  std::vector<STBlock> up_;  // finest-last order of execution: up_[0] runs first
  std::vector<STBlock> merge_;
  FCHead head_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
// Throws CheckpointError on bad magic, version, checksum, truncation, or when
// the stored layout differs from `expected_layout`.
Model load_checkpoint(const std::filesystem::path& path,
                      const std::optional<std::string>& expected_layout = std::nullopt);

}  // namespace ucdg
