#pragma once

#include <map>
#include <string>
#include <vector>

#include "ucdg/tensor.hpp"

// Pose metrics. Poses are (..., J, 3) tensors in millimeters; every leading
// axis counts as a frame.
namespace ucdg {

// Mean per-joint Euclidean distance; no alignment.
double mpjpe(const Tensor& pred, const Tensor& gt);

struct Alignment {
  Tensor aligned;  // (J, 3)
  double scale = 1.0;
  bool degenerate = false;  // pred joints coincide: translation only
};

// Least-squares similarity transform of one pred frame (J, 3) onto gt.
Alignment procrustes_align(const Tensor& pred, const Tensor& gt);

// mpjpe after per-frame Procrustes alignment of pred onto gt.
double p_mpjpe(const Tensor& pred, const Tensor& gt);

// Percentage of (frame, joint) errors strictly below `threshold` mm.
double pck(const Tensor& pred, const Tensor& gt, double threshold = 150.0);

struct AucGrid {
  double first = 5.0;
  double last = 150.0;
  double step = 5.0;
  std::vector<double> thresholds() const;
};

// Mean PCK over the thresholds of the grid.
double auc(const Tensor& pred, const Tensor& gt, const AucGrid& grid = {});

struct MetricSet {
  double mpjpe_mm = 0.0;
  double pmpjpe_mm = 0.0;
  double pck_percent = 0.0;
  double auc_percent = 0.0;
  std::size_t frames = 0;
};

struct EvalReport {
  MetricSet overall;
  std::map<std::string, MetricSet> per_action;

  std::string to_text() const;
  // `key = value` lines, e.g. `mpjpe_mm = 12.5`, `action.gait.pck_percent = 99`.
  std::string to_key_values() const;
};

// Both inputs are made root-relative before any metric is computed.
MetricSet evaluate(const Tensor& pred, const Tensor& gt, std::size_t root);

struct EvalItem {
  const Tensor* pred;
  const Tensor* gt;
  std::string action;
};

// Frame-weighted overall metrics plus a breakdown by action name.
EvalReport evaluate(const std::vector<EvalItem>& items, std::size_t root);

// PCK at every threshold of the grid, for plotting.
std::vector<double> pck_curve(const Tensor& pred, const Tensor& gt, const AucGrid& grid = {});

}  // namespace ucdg
