#include <stdexcept>
#include <string>

#include "ucdg/ops.hpp"
#include "ucdg/train.hpp"

namespace ucdg {

void LossConfig::validate(std::size_t frames) const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss: lambda must be non-negative");
  for (std::size_t d : deltas) {
    if (d == 0 || d >= frames) {
      throw std::invalid_argument("loss: motion delta " + std::to_string(d) + " must be in [1, " +
                                  std::to_string(frames) + ")");
    }
  }
}

namespace {

void check_pose_pair(const char* op, Var pred, Var gt) {
  if (pred.shape() != gt.shape()) throw_shape_error(op, pred.shape(), gt.shape());
  if (pred.shape().size() != 4 || pred.shape().back() != 3) {
    throw ShapeError(std::string(op) + ": expected (B,T,J,3), got " + shape_string(pred.shape()));
  }
}

}  // namespace

Var position_loss(Var pred, Var gt) {
  check_pose_pair("position_loss", pred, gt);
  return mean(l2_norm_last(sub(pred, gt)));
}

Var motion_loss(Var pred, Var gt, const std::vector<std::size_t>& deltas) {
  check_pose_pair("motion_loss", pred, gt);
  if (deltas.empty()) throw std::invalid_argument("motion_loss: empty delta set");
  const std::size_t frames = pred.dim(1);
  std::vector<Var> terms;
  for (std::size_t d : deltas) {
    if (d == 0 || d >= frames) {
      throw std::invalid_argument("motion_loss: delta " + std::to_string(d) + " out of range for " +
                                  std::to_string(frames) + " frames");
    }
    terms.push_back(mean(absolute(sub(time_diff(pred, 1, d), time_diff(gt, 1, d)))));
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / double(terms.size()));
}

Var total_loss(Var pred, Var gt, const LossConfig& cfg) {
  Var loss = position_loss(pred, gt);
  if (cfg.lambda == 0.0) return loss;
  return add(loss, scale(motion_loss(pred, gt, cfg.deltas), cfg.lambda));
}

}  // namespace ucdg
