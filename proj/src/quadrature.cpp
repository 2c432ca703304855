#include "ebdeconv/quadrature.hpp"

#include <cmath>
#include <vector>

#include "ebdeconv/errors.hpp"

namespace ebd {

namespace {

// 15-point Kronrod abscissae on [-1, 1] and weights; the embedded 7-point
// Gauss rule uses the odd-indexed abscissae.
constexpr double kXgk[8] = {
    0.991455371120813, 0.949107912342759, 0.864864423359769, 0.741531185599394,
    0.586087235467691, 0.405845151377397, 0.207784955007898, 0.0};
constexpr double kWgk[8] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
    0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728};
constexpr double kWg[4] = {
    0.129484966168870, 0.279705391489277, 0.381830050505119, 0.417959183673469};

struct Panel {
  double a, b;
};

void eval_panel(const std::function<double(double)>& f, double a, double b,
                double& kronrod, double& err) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double fc = f(c);
  double resg = fc * kWg[3];
  double resk = fc * kWgk[7];
  for (int j = 0; j < 7; ++j) {
    double x = h * kXgk[j];
    double sum = f(c - x) + f(c + x);
    resk += kWgk[j] * sum;
    if (j % 2 == 1) resg += kWg[j / 2] * sum;
  }
  kronrod = resk * h;
  err = std::abs((resk - resg) * h);
}

}  // namespace

double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tol) {
  if (!(abs_tol > 0.0)) throw ValidationError("integrate: tolerance must be positive");
  if (a == b) return 0.0;
  const double width = std::abs(b - a);
  std::vector<Panel> stack{{a, b}};
  double total = 0.0;
  int budget = 20000;
  while (!stack.empty()) {
    if (--budget < 0) throw NumericError("integrate: subdivision budget exhausted");
    Panel p = stack.back();
    stack.pop_back();
    double val, err;
    eval_panel(f, p.a, p.b, val, err);
    double share = abs_tol * std::abs(p.b - p.a) / width;
    if (err <= std::max(share, 1e-16 * std::abs(val)) ||
        std::abs(p.b - p.a) < 1e-14 * width) {
      total += val;
      continue;
    }
    double mid = 0.5 * (p.a + p.b);
    stack.push_back({p.a, mid});
    stack.push_back({mid, p.b});
  }
  return total;
}

}  // namespace ebd
