#pragma once

// Bounded scalar maximization and numeric curvature.

#include <gsar/error.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace gsar {

struct ScalarMaximum {
  double argmax = 0.0;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

struct MaximizeOptions {
  /// Final bracket width.
  double width_tol = 1e-8;
  /// Points in the coarse scan that picks the bracket (0 or 1 disables it).
  int scan_points = 41;
  int max_iter = 200;
};

/// Maximizes f over [lo, hi]: a coarse scan selects the best cell pair, then
/// Brent's golden-section search with parabolic steps refines it until the
/// bracket is narrower than `width_tol`. Nonfinite evaluations are treated
/// as -inf. `hint`, when given, is evaluated and kept if nothing beats it.
inline ScalarMaximum maximize_bounded(const std::function<double(double)>& f, double lo,
                                      double hi, const MaximizeOptions& opt = {},
                                      std::optional<double> hint = std::nullopt) {
  if (!(lo < hi)) throw ValidationError("maximize_bounded needs lo < hi");
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  ScalarMaximum best;
  auto eval = [&](double x) {
    double v = f(x);
    ++best.evaluations;
    if (!std::isfinite(v)) v = neg_inf;
    if (v > best.value) {
      best.value = v;
      best.argmax = x;
    }
    return v;
  };

  double a = lo;
  double b = hi;
  if (opt.scan_points > 1) {
    const int m = opt.scan_points;
    std::vector<double> xs(static_cast<std::size_t>(m));
    std::vector<double> vs(static_cast<std::size_t>(m));
    int arg = 0;
    for (int k = 0; k < m; ++k) {
      xs[k] = lo + (hi - lo) * k / (m - 1);
      vs[k] = eval(xs[k]);
      if (vs[k] > vs[arg]) arg = k;
    }
    a = xs[arg > 0 ? arg - 1 : 0];
    b = xs[arg + 1 < m ? arg + 1 : m - 1];
  }
  if (hint && *hint >= lo && *hint <= hi) eval(*hint);

  // Brent (1973) minimization of -f on [a, b].
  constexpr double golden = 0.3819660112501051;
  double x = a + golden * (b - a);
  double w = x;
  double v = x;
  double fx = -eval(x);
  double fw = fx;
  double fv = fx;
  double d = 0.0;
  double e = 0.0;
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    const double mid = 0.5 * (a + b);
    const double tol1 = 1e-14 * std::abs(x) + opt.width_tol / 4.0;
    const double tol2 = 2.0 * tol1;
    if (b - a <= opt.width_tol || std::abs(x - mid) <= tol2 - 0.5 * (b - a)) break;
    bool parabolic = false;
    if (std::abs(e) > tol1 && std::isfinite(fx) && std::isfinite(fw) && std::isfinite(fv)) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double e_prev = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_prev) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = x < mid ? tol1 : -tol1;
        parabolic = true;
      }
    }
    if (!parabolic) {
      e = (x < mid ? b : a) - x;
      d = golden * e;
    }
    const double u = std::abs(d) >= tol1 ? x + d : x + (d > 0.0 ? tol1 : -tol1);
    const double fu = -eval(u);
    if (fu <= fx) {
      if (u < x) b = x; else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  if (!std::isfinite(best.value))
    throw NumericalError("objective is nonfinite everywhere on the search interval");
  return best;
}

/// -1 / f''(x) from a central second difference with step h.
inline double curvature_variance(const std::function<double(double)>& f, double x, double h) {
  const double fp = f(x + h);
  const double f0 = f(x);
  const double fm = f(x - h);
  const double curvature = (fp - 2.0 * f0 + fm) / (h * h);
  if (!std::isfinite(curvature)) throw NumericalError("nonfinite curvature");
  if (!(curvature < 0.0))
    throw NumericalError("nonpositive information (curvature " + std::to_string(curvature) +
                         ") at " + std::to_string(x));
  return -1.0 / curvature;
}

}  // namespace gsar
