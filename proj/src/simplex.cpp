#include "colliderlab/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace colliderlab {

namespace {

using Point = std::vector<double>;

struct Vertex {
  Point x;
  double f;
};

class Simplex {
public:
  Simplex(const Objective &f, const SimplexOptions &opt) : f_(f), opt_(opt) {}

  void build(const Point &center) {
    const std::size_t n = center.size();
    v_.clear();
    v_.push_back({center, eval(center)});
    for (std::size_t i = 0; i < n; ++i) {
      Point x = center;
      const double up = x[i] + opt_.initial_step;
      x[i] = up <= opt_.upper ? up : x[i] - opt_.initial_step;
      x[i] = std::clamp(x[i], opt_.lower, opt_.upper);
      v_.push_back({x, eval(x)});
    }
    order();
  }

  /// Runs until convergence or the iteration budget is spent.
  bool run(int &iterations) {
    const std::size_t n = v_.size() - 1;
    while (iterations < opt_.max_iterations) {
      if (converged()) return true;
      ++iterations;

      Point c(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) c[k] += v_[i].x[k];
      }
      for (double &ck : c) ck /= static_cast<double>(n);

      const Vertex &worst = v_[n];
      auto along = [&](double t) {
        Point x(n);
        for (std::size_t k = 0; k < n; ++k) {
          x[k] = std::clamp(c[k] + t * (c[k] - worst.x[k]), opt_.lower, opt_.upper);
        }
        return x;
      };

      Point xr = along(1.0);
      const double fr = eval(xr);
      if (fr < v_[0].f) {
        Point xe = along(2.0);
        const double fe = eval(xe);
        if (fe < fr) replace_worst({std::move(xe), fe});
        else replace_worst({std::move(xr), fr});
      } else if (fr < v_[n - 1].f) {
        replace_worst({std::move(xr), fr});
      } else {
        const bool outside = fr < worst.f;
        Point xc = along(outside ? 0.5 : -0.5);
        const double fc = eval(xc);
        if (fc < (outside ? fr : worst.f)) {
          replace_worst({std::move(xc), fc});
        } else {
          shrink();
        }
      }
    }
    return converged();
  }

  const Vertex &best() const { return v_.front(); }

private:
  double eval(const Point &x) const {
    const double y = f_(x);
    return std::isnan(y) ? std::numeric_limits<double>::infinity() : y;
  }

  void order() {
    std::stable_sort(v_.begin(), v_.end(),
                     [](const Vertex &a, const Vertex &b) { return a.f < b.f; });
  }

  void replace_worst(Vertex v) {
    v_.back() = std::move(v);
    order();
  }

  void shrink() {
    const Point &b = v_[0].x;
    for (std::size_t i = 1; i < v_.size(); ++i) {
      for (std::size_t k = 0; k < b.size(); ++k) {
        v_[i].x[k] = b[k] + 0.5 * (v_[i].x[k] - b[k]);
      }
      v_[i].f = eval(v_[i].x);
    }
    order();
  }

  bool converged() const {
    if (!std::isfinite(v_.back().f)) return false;
    if (v_.back().f - v_.front().f > opt_.ftol) return false;
    double spread = 0.0;
    for (std::size_t i = 1; i < v_.size(); ++i) {
      for (std::size_t k = 0; k < v_[0].x.size(); ++k) {
        spread = std::max(spread, std::abs(v_[i].x[k] - v_[0].x[k]));
      }
    }
    return spread <= opt_.xtol;
  }

  const Objective &f_;
  SimplexOptions opt_;
  std::vector<Vertex> v_;
};

}  // namespace

SimplexResult minimize_simplex(const Objective &f, std::vector<double> start,
                               const SimplexOptions &options) {
  for (double &x : start) x = std::clamp(x, options.lower, options.upper);

  SimplexResult result;
  Simplex simplex(f, options);
  simplex.build(start);
  bool ok = simplex.run(result.iterations);

  // Rebuild around the incumbent until a fresh simplex stops improving it.
  for (int r = 0; ok && r < options.max_restarts; ++r) {
    const Vertex before = simplex.best();
    simplex.build(before.x);
    ok = simplex.run(result.iterations);
    if (before.f - simplex.best().f <= options.ftol) break;
  }

  result.x = simplex.best().x;
  result.value = simplex.best().f;
  result.converged = ok;
  return result;
}

}  // namespace colliderlab
