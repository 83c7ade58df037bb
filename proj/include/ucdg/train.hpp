#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ucdg/data.hpp"
#include "ucdg/network.hpp"

namespace ucdg {

struct LossConfig {
  double lambda = 0.1;
  std::vector<std::size_t> deltas{1, 2, 4, 8, 16};

  // Throws when lambda < 0, a delta is zero, or a delta is not below frames.
  void validate(std::size_t frames) const;
};

// pred, gt: (B, T, J, 3). Mean over (B, T, J) of the per-joint Euclidean error.
Var position_loss(Var pred, Var gt);
// Mean over deltas of the mean absolute difference between the motion
// encodings X[t + d] - X[t] of pred and gt.
Var motion_loss(Var pred, Var gt, const std::vector<std::size_t>& deltas);
Var total_loss(Var pred, Var gt, const LossConfig& cfg);

struct AdaModConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double beta3 = 0.9999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2, added to the gradient
};

// Adam with a per-coordinate step size bounded from above by its own
// exponential moving average.
class AdaMod {
 public:
  AdaMod(ParameterList params, AdaModConfig cfg = {});

  // Applies one update from the gradients currently held by the parameters.
  // Throws std::domain_error naming the parameter on a non-finite gradient;
  // no parameter is modified in that case.
  void step();

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::size_t steps() const { return step_; }
  const AdaModConfig& config() const { return cfg_; }

  struct Slot {
    Tensor exp_avg;
    Tensor exp_avg_sq;
    Tensor exp_avg_lr;
  };
  const std::vector<Slot>& state() const { return slots_; }

 private:
  ParameterList params_;
  AdaModConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t step_ = 0;
};

// 5e-3 for epochs 1-80, then divided by 10 after epochs 80, 90 and 100.
double lr_schedule(std::size_t epoch, double base_lr = 5e-3);

struct FitConfig {
  std::size_t epochs = 110;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  LossConfig loss;
  AdaModConfig optimizer;
  std::size_t max_steps = 0;  // 0 = unlimited
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double lr = 0.0;
  double train_loss = 0.0;   // mean over the epoch's batches
  double train_mpjpe = 0.0;  // mm, training mode forward
  std::optional<double> val_mpjpe;  // mm, root-relative
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::optional<double> best_val_mpjpe;
  std::size_t best_epoch = 0;

  // `epoch, step, lr, train_loss, val_mpjpe` lines with a header row.
  std::string to_csv() const;
};

// Trains on `train`, evaluates `val` after every epoch and leaves `model`
// at the best validation epoch (the last one when `val` is empty).
// `on_epoch` sees each record as soon as it is complete.
TrainingReport fit(Model& model, const WindowSet& train, const WindowSet& val, const FitConfig& cfg,
                   const std::function<void(const EpochRecord&)>& on_epoch = {});

// Root-relative MPJPE in mm of the model over a window set, batched.
double window_mpjpe(const Model& model, const WindowSet& set, std::size_t batch_size = 64);

}  // namespace ucdg
