#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ucdg/ops.hpp"
#include "ucdg/text.hpp"
#include "ucdg/train.hpp"

namespace ucdg {
namespace {

// Rows `idx[begin..end)` of a tensor along axis 0.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  const std::size_t row = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  auto dst = out.data();
  const auto src = t.data();
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(src.begin() + idx[i] * row, row, dst.begin() + (i - begin) * row);
  }
  return out;
}

}  // namespace

std::string TrainingReport::to_csv() const {
  std::ostringstream os;
  os << "epoch,step,lr,train_loss,val_mpjpe\n";
  for (const EpochRecord& r : epochs) {
    os << r.epoch << ',' << r.step << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
       << (r.val_mpjpe ? format_double(*r.val_mpjpe) : "nan") << '\n';
  }
  return os.str();
}

double window_mpjpe(const Model& model, const WindowSet& set, std::size_t batch_size) {
  if (set.empty()) throw std::invalid_argument("window_mpjpe: empty window set");
  const std::size_t n = set.size();
  const std::size_t root = model.skeleton().root;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < n; b += batch_size) {
    const std::size_t e = std::min(n, b + batch_size);
    const Tensor pred = model.predict(gather_rows(set.inputs, order, b, e));
    const Tensor gt = gather_rows(set.targets, order, b, e);
    const std::size_t J = pred.dim(2), frames = pred.size() / (J * 3);
    const auto p = pred.data();
    const auto g = gt.data();
    for (std::size_t f = 0; f < frames; ++f) {
      const double* pf = &p[f * J * 3];
      const double* gf = &g[f * J * 3];
      for (std::size_t j = 0; j < J; ++j) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = (pf[j * 3 + c] - pf[root * 3 + c]) - (gf[j * 3 + c] - gf[root * 3 + c]);
          sq += d * d;
        }
        total += std::sqrt(sq);
        ++count;
      }
    }
  }
  return 1000.0 * total / double(count);
}

TrainingReport fit(Model& model, const WindowSet& train, const WindowSet& val, const FitConfig& cfg,
                   const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("fit: empty training set");
  if (cfg.batch_size == 0) throw std::invalid_argument("fit: batch size must be positive");
  cfg.loss.validate(model.config().window);

  TrainingReport report;
  AdaMod optimizer(model.parameters(), cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::optional<Model> best;
  std::size_t steps = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.max_steps && steps >= cfg.max_steps) break;
    const double lr = lr_schedule(epoch, cfg.optimizer.lr);
    optimizer.set_lr(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, mpjpe_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      if (cfg.max_steps && steps >= cfg.max_steps) break;
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      Tape tape;
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &rng;
      Var pred = model.forward(tape, gather_rows(train.inputs, order, b, e), opts);
      Var gt = tape.constant(gather_rows(train.targets, order, b, e));
      Var pos = position_loss(pred, gt);
      Var loss = cfg.loss.lambda == 0.0 ? pos : add(pos, scale(motion_loss(pred, gt, cfg.loss.deltas), cfg.loss.lambda));
      model.zero_grad();
      tape.backward(loss);
      optimizer.step();
      ++steps;
      report.step_losses.push_back(loss.value().item());
      loss_sum += loss.value().item();
      mpjpe_sum += 1000.0 * pos.value().item();
      ++batches;
    }
    if (batches == 0) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = steps;
    rec.lr = lr;
    rec.train_loss = loss_sum / double(batches);
    rec.train_mpjpe = mpjpe_sum / double(batches);
    if (!val.empty()) {
      rec.val_mpjpe = window_mpjpe(model, val);
      if (!report.best_val_mpjpe || *rec.val_mpjpe < *report.best_val_mpjpe) {
        report.best_val_mpjpe = rec.val_mpjpe;
        report.best_epoch = epoch;
        best = model;
      }
    } else {
      report.best_epoch = epoch;
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (best) model = std::move(*best);
  return report;
}

}  // namespace ucdg
