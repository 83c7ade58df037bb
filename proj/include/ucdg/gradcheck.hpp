#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "ucdg/tape.hpp"

namespace ucdg {

using ScalarFn = std::function<Var(Tape&, Var)>;
using LossFn = std::function<Var(Tape&)>;

// Largest |analytic - central difference| / max(1, |analytic|) over every
// coordinate of `point`. fn must return a scalar.
double finite_diff_check(const ScalarFn& fn, const Tensor& point, double epsilon = 1e-4);

// Same measure restricted to the listed coordinates of a parameter. `loss`
// builds the whole computation on the given tape, binding `param` itself.
// The parameter value is restored on return.
double finite_diff_check(const LossFn& loss, Parameter& param, std::span<const std::size_t> coords,
                         double epsilon = 1e-4);

}  // namespace ucdg
