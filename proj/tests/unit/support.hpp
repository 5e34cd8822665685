#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mft/rng.hpp"
#include "mft/tensor.hpp"

namespace mft::testing {

struct GradCheck {
  double worst = 0.0;
  std::string where;
};

// Central finite differences of the scalar returned by `loss` with respect to
// every entry of every leaf, compared per tensor as
// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
inline GradCheck check_gradients(const std::vector<Var>& leaves, const std::function<Var()>& loss,
                                 double h = 1e-6, double floor = 1e-7) {
  for (const auto& l : leaves) {
    l->ensure_grad();
    l->grad.fill(0.0);
  }
  backward(loss());
  std::vector<Tensor> analytic;
  for (const auto& l : leaves) analytic.push_back(l->grad);
  GradCheck result;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    Tensor& v = leaves[t]->value;
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      double fp, fm;
      {
        NoGradGuard g;
        v[i] = saved + h;
        fp = loss()->value.item();
        v[i] = saved - h;
        fm = loss()->value.item();
      }
      v[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    if (rel > result.worst) {
      result.worst = rel;
      result.where = "leaf " + std::to_string(t) + " " + shape_str(v.shape());
    }
  }
  return result;
}

inline Var random_leaf(Shape shape, Rng& rng, double sigma = 1.0) {
  return leaf(Tensor::normal(std::move(shape), sigma, rng));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace mft::testing
