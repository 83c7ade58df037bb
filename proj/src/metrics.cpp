#include "ucdg/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <sstream>

#include "ucdg/data.hpp"
#include "ucdg/text.hpp"

namespace ucdg {
namespace {

using Points = Eigen::Matrix<double, 3, Eigen::Dynamic>;

void check_pair(const char* op, const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) throw_shape_error(op, pred.shape(), gt.shape());
  if (pred.rank() < 2 || pred.shape().back() != 3) {
    throw ShapeError(std::string(op) + ": expected (..., J, 3), got " + shape_string(pred.shape()));
  }
}

std::vector<double> joint_errors(const Tensor& pred, const Tensor& gt) {
  const auto p = pred.data();
  const auto g = gt.data();
  std::vector<double> out(p.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double dx = p[3 * i] - g[3 * i], dy = p[3 * i + 1] - g[3 * i + 1], dz = p[3 * i + 2] - g[3 * i + 2];
    out[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double percent_below(const std::vector<double>& errors, double threshold) {
  std::size_t n = 0;
  for (double e : errors) n += e < threshold;
  return 100.0 * double(n) / double(errors.size());
}

Points to_points(const double* data, std::size_t joints) {
  return Eigen::Map<const Eigen::Matrix<double, 3, Eigen::Dynamic>>(data, 3, Eigen::Index(joints));
}

}  // namespace

double mpjpe(const Tensor& pred, const Tensor& gt) {
  check_pair("mpjpe", pred, gt);
  return mean_of(joint_errors(pred, gt));
}

Alignment procrustes_align(const Tensor& pred, const Tensor& gt) {
  check_pair("procrustes_align", pred, gt);
  if (pred.rank() != 2) throw ShapeError("procrustes_align: expects one frame (J, 3), got " + shape_string(pred.shape()));
  const std::size_t J = pred.dim(0);
  const Points src = to_points(pred.data().data(), J);
  const Points dst = to_points(gt.data().data(), J);

  Alignment out;
  out.aligned = Tensor(pred.shape());
  Eigen::Map<Points> aligned(out.aligned.data().data(), 3, Eigen::Index(J));
  const Eigen::Vector3d src_mean = src.rowwise().mean();
  if ((src.colwise() - src_mean).squaredNorm() == 0.0) {
    out.degenerate = true;
    aligned = src.colwise() + (dst.rowwise().mean() - src_mean);
    return out;
  }
  // Umeyama: rotation from the SVD of the cross-covariance with the
  // reflection fixed, scale from the singular values.
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
  aligned = (T.topLeftCorner<3, 3>() * src).colwise() + T.topRightCorner<3, 1>();
  out.scale = std::cbrt(T.topLeftCorner<3, 3>().determinant());
  return out;
}

double p_mpjpe(const Tensor& pred, const Tensor& gt) {
  check_pair("p_mpjpe", pred, gt);
  const std::size_t J = pred.dim(pred.rank() - 2), frames = pred.size() / (J * 3);
  double total = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    Tensor p({J, 3}, std::vector<double>(pred.data().begin() + f * J * 3, pred.data().begin() + (f + 1) * J * 3));
    Tensor g({J, 3}, std::vector<double>(gt.data().begin() + f * J * 3, gt.data().begin() + (f + 1) * J * 3));
    for (double e : joint_errors(procrustes_align(p, g).aligned, g)) total += e;
  }
  return total / double(frames * J);
}

double pck(const Tensor& pred, const Tensor& gt, double threshold) {
  check_pair("pck", pred, gt);
  return percent_below(joint_errors(pred, gt), threshold);
}

std::vector<double> AucGrid::thresholds() const {
  if (!(step > 0.0) || !(last >= first)) throw std::invalid_argument("AUC grid must have step > 0 and last >= first");
  std::vector<double> out;
  const auto n = std::size_t(std::floor((last - first) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < n; ++i) out.push_back(first + double(i) * step);
  return out;
}

std::vector<double> pck_curve(const Tensor& pred, const Tensor& gt, const AucGrid& grid) {
  check_pair("pck_curve", pred, gt);
  const auto errors = joint_errors(pred, gt);
  std::vector<double> out;
  for (double t : grid.thresholds()) out.push_back(percent_below(errors, t));
  return out;
}

double auc(const Tensor& pred, const Tensor& gt, const AucGrid& grid) {
  return mean_of(pck_curve(pred, gt, grid));
}

MetricSet evaluate(const Tensor& pred, const Tensor& gt, std::size_t root) {
  check_pair("evaluate", pred, gt);
  const Tensor p = root_relative(pred, root);
  const Tensor g = root_relative(gt, root);
  MetricSet m;
  m.mpjpe_mm = mpjpe(p, g);
  m.pmpjpe_mm = p_mpjpe(p, g);
  m.pck_percent = pck(p, g);
  m.auc_percent = auc(p, g);
  m.frames = p.size() / (p.dim(p.rank() - 2) * 3);
  return m;
}

EvalReport evaluate(const std::vector<EvalItem>& items, std::size_t root) {
  if (items.empty()) throw std::invalid_argument("evaluate: nothing to evaluate");
  EvalReport report;
  std::map<std::string, std::vector<MetricSet>> groups;
  std::vector<MetricSet> all;
  for (const EvalItem& it : items) {
    MetricSet m = evaluate(*it.pred, *it.gt, root);
    all.push_back(m);
    if (!it.action.empty()) groups[it.action].push_back(m);
  }
  auto combine = [](const std::vector<MetricSet>& sets) {
    MetricSet out;
    for (const MetricSet& m : sets) {
      const double w = double(m.frames);
      out.mpjpe_mm += w * m.mpjpe_mm;
      out.pmpjpe_mm += w * m.pmpjpe_mm;
      out.pck_percent += w * m.pck_percent;
      out.auc_percent += w * m.auc_percent;
      out.frames += m.frames;
    }
    const double n = double(out.frames);
    out.mpjpe_mm /= n, out.pmpjpe_mm /= n, out.pck_percent /= n, out.auc_percent /= n;
    return out;
  };
  report.overall = combine(all);
  for (const auto& [action, sets] : groups) report.per_action[action] = combine(sets);
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  auto row = [&](const std::string& name, const MetricSet& m) {
    os << name << ": MPJPE " << m.mpjpe_mm << " mm, P-MPJPE " << m.pmpjpe_mm << " mm, PCK " << m.pck_percent
       << "%, AUC " << m.auc_percent << "% (" << m.frames << " frames)\n";
  };
  row("overall", overall);
  for (const auto& [action, m] : per_action) row("  " + action, m);
  return os.str();
}

std::string EvalReport::to_key_values() const {
  std::ostringstream os;
  auto emit = [&](const std::string& prefix, const MetricSet& m) {
    os << prefix << "mpjpe_mm = " << format_double(m.mpjpe_mm) << '\n'
       << prefix << "pmpjpe_mm = " << format_double(m.pmpjpe_mm) << '\n'
       << prefix << "pck_percent = " << format_double(m.pck_percent) << '\n'
       << prefix << "auc_percent = " << format_double(m.auc_percent) << '\n'
       << prefix << "frames = " << m.frames << '\n';
  };
  emit("", overall);
  for (const auto& [action, m] : per_action) emit("action." + action + ".", m);
  return os.str();
}

}  // namespace ucdg
