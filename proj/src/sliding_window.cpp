#include <algorithm>
#include <cmath>
#include <numeric>

#include "ucdg/data.hpp"

namespace ucdg {

std::vector<std::size_t> window_starts(std::size_t total, std::size_t window, std::size_t step) {
  if (window == 0 || step == 0) throw std::invalid_argument("window_starts: window and step must be positive");
  if (total < window) {
    throw std::invalid_argument("sequence of " + std::to_string(total) + " frames is shorter than the " +
                                std::to_string(window) + "-frame window; pad it to at least the window length");
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= total; s += step) starts.push_back(s);
  if (starts.back() + window < total) starts.push_back(total - window);
  return starts;
}

Tensor sliding_window_infer(const WindowPredictor& predict, const Tensor& pose2d, std::size_t window,
                            std::size_t step, std::vector<std::size_t>* coverage) {
  if (pose2d.rank() != 3 || pose2d.dim(2) != 2) {
    throw ShapeError("sliding_window_infer: expected (frames, J, 2), got " + shape_string(pose2d.shape()));
  }
  const std::size_t total = pose2d.dim(0), J = pose2d.dim(1);
  const auto starts = window_starts(total, window, step);
  const std::size_t in_frame = J * 2, out_frame = J * 3;
  constexpr std::size_t kBatch = 16;

  Tensor sum({total, J, 3});
  std::vector<std::size_t> count(total, 0);
  for (std::size_t b = 0; b < starts.size(); b += kBatch) {
    const std::size_t n = std::min(kBatch, starts.size() - b);
    Tensor batch({n, window, J, 2});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(pose2d.data().begin() + starts[b + i] * in_frame, window * in_frame,
                  batch.data().begin() + i * window * in_frame);
    }
    const Tensor pred = predict(batch);
    if (pred.shape() != Shape{n, window, J, 3}) {
      throw ShapeError("sliding_window_infer: predictor returned " + shape_string(pred.shape()) + ", expected " +
                       shape_string({n, window, J, 3}));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = starts[b + i];
      for (std::size_t t = 0; t < window; ++t) {
        ++count[s + t];
        for (std::size_t k = 0; k < out_frame; ++k) {
          sum[(s + t) * out_frame + k] += pred[(i * window + t) * out_frame + k];
        }
      }
    }
  }
  for (std::size_t f = 0; f < total; ++f) {
    for (std::size_t k = 0; k < out_frame; ++k) sum[f * out_frame + k] /= double(count[f]);
  }
  if (coverage) *coverage = std::move(count);
  return sum;
}

WindowSet make_windows(const std::vector<PoseSequence>& seqs, std::size_t window, std::size_t stride) {
  WindowSet set;
  std::vector<double> in, tgt;
  std::size_t J = 0;
  for (const PoseSequence& s : seqs) {
    if (!s.poses2d || !s.poses3d) throw std::invalid_argument("make_windows: sequences need both 2D and 3D poses");
    const DirectedSkeleton skel = s.skeleton();
    if (J != 0 && skel.joint_count() != J) throw std::invalid_argument("make_windows: mixed joint counts");
    J = skel.joint_count();
    const Tensor x = normalize_2d(s);
    Tensor y = root_relative(*s.poses3d, skel.root);
    for (double& v : y.data()) v /= 1000.0;
    for (std::size_t start : window_starts(s.frames, window, stride)) {
      in.insert(in.end(), x.data().begin() + start * J * 2, x.data().begin() + (start + window) * J * 2);
      tgt.insert(tgt.end(), y.data().begin() + start * J * 3, y.data().begin() + (start + window) * J * 3);
      set.actions.push_back(s.action);
    }
  }
  if (set.actions.empty()) throw std::invalid_argument("make_windows: no sequences");
  const std::size_t n = set.actions.size();
  set.inputs = Tensor({n, window, J, 2}, std::move(in));
  set.targets = Tensor({n, window, J, 3}, std::move(tgt));
  return set;
}

std::pair<std::vector<PoseSequence>, std::vector<PoseSequence>> split_sequences(std::vector<PoseSequence> seqs,
                                                                               std::uint64_t seed,
                                                                               double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("validation fraction must be in [0, 1)");
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::size_t(std::floor(val_fraction * double(seqs.size()) + 0.5));
  std::pair<std::vector<PoseSequence>, std::vector<PoseSequence>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? out.second : out.first).push_back(std::move(seqs[order[i]]));
  }
  return out;
}

}  // namespace ucdg
