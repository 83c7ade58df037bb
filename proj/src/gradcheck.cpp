#include "ucdg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ucdg {
namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("finite_diff_check: epsilon must be positive");
  }
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("finite_diff_check: non-finite ") + what);
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double finite_diff_check(const ScalarFn& fn, const Tensor& point, double epsilon) {
  check_epsilon(epsilon);
  Tensor analytic;
  {
    Tape tape;
    Tensor x = point;
    x.set_requires_grad(true);
    Var xv = tape.leaf(std::move(x));
    Var loss = fn(tape, xv);
    finite_or_throw(loss.value().item(), "loss");
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return finite_or_throw(fn(tape, tape.constant(at)).value().item(), "loss");
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + epsilon;
    const double up = eval(probe);
    probe[i] = orig - epsilon;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, relative_error(finite_or_throw(analytic[i], "gradient"), numeric));
  }
  return worst;
}

double finite_diff_check(const LossFn& loss, Parameter& param, std::span<const std::size_t> coords, double epsilon) {
  check_epsilon(epsilon);
  param.zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    finite_or_throw(l.value().item(), "loss");
    tape.backward(l);
  }
  const Tensor analytic = param.grad;
  auto eval = [&]() {
    Tape tape;
    return finite_or_throw(loss(tape).value().item(), "loss");
  };
  double worst = 0.0;
  for (std::size_t i : coords) {
    if (i >= param.value.size()) throw std::out_of_range("finite_diff_check: coordinate out of range for " + param.name);
    const double orig = param.value[i];
    param.value[i] = orig + epsilon;
    const double up = eval();
    param.value[i] = orig - epsilon;
    const double down = eval();
    param.value[i] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, relative_error(finite_or_throw(analytic[i], "gradient"), numeric));
  }
  param.zero_grad();
  return worst;
}

}  // namespace ucdg
