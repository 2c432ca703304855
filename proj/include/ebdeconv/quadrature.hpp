#pragma once

#include <functional>

namespace ebd {

// Adaptive Gauss-Kronrod (7, 15) integration on [a, b]. Subdivides until the
// local error estimate is below the interval's share of abs_tol; throws
// NumericError if the subdivision budget runs out. Handles integrable jump
// discontinuities by localizing them in ever smaller subintervals.
double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tol = 1e-9);

}  // namespace ebd
