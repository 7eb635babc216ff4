#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sparnet::testing {

GradCheckReport grad_check(const std::function<Var()>& loss, const nn::ParameterList& vars,
                           double h, std::size_t max_per_var, double floor) {
  for (const auto& nv : vars) nv.var.node()->grad = Tensor();
  loss().backward();
  std::vector<Tensor> analytic;
  for (const auto& nv : vars) {
    analytic.push_back(nv.var.has_grad() ? nv.var.grad()
                                         : Tensor(nv.var.shape(), 0.0));
  }

  GradCheckReport rep;
  NoGradGuard guard;
  const double base = loss().item();
  // Rounding noise of one loss evaluation, measured at about 1e-15 for the
  // deepest networks in the tests.
  const double loss_noise = 2e-15 * std::max(1.0, std::abs(base));
  for (std::size_t v = 0; v < vars.size(); ++v) {
    Tensor& value = vars[v].var.node()->value;
    const std::size_t n = value.numel();
    const std::size_t step =
        max_per_var == 0 || n <= max_per_var ? 1 : (n + max_per_var - 1) / max_per_var;
    for (std::size_t i = 0; i < n; i += step) {
      const real saved = value[i];
      auto at = [&](double offset) {
        value[i] = saved + offset;
        const double l = loss().item();
        value[i] = saved;
        return l;
      };
      // A ReLU-type kink within reach of the step shows up as disagreement,
      // beyond loss rounding, between estimates at h, h/2 and h/4. Then a
      // one-sided estimate from a kink-free side is used, or h is shrunk.
      double hk = h, numeric = 0;
      for (int level = 0; level < 3; ++level, hk /= 10) {
        const double p1 = at(hk / 4), p2 = at(hk / 2), p4 = at(hk);
        const double m1 = at(-hk / 4), m2 = at(-hk / 2), m4 = at(-hk);
        const double c1 = (p4 - m4) / (2 * hk), c2 = (p2 - m2) / hk, c4 = (p1 - m1) / (hk / 2);
        const double r1 = (-3 * base + 4 * p2 - p4) / hk, r2 = (-3 * base + 4 * p1 - p2) / (hk / 2);
        const double l1 = (3 * base - 4 * m2 + m4) / hk, l2 = (3 * base - 4 * m1 + m2) / (hk / 2);
        const double tol = 1e-5 * std::max({std::abs(c1), std::abs(r1), std::abs(l1)}) +
                           8 * loss_noise / hk;
        auto agree = [&](double x, double y) { return std::abs(x - y) <= tol; };
        numeric = level == 0 ? c1 : c2;
        if (agree(c1, c2) && agree(c2, c4)) break;
        const bool right = agree(r1, r2), left = agree(l1, l2);
        if (right != left) {
          numeric = right ? r1 : l1;
          break;
        }
        if (level == 0) ++rep.refined;
      }
      const double a = analytic[v][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = vars[v].name + "[" + std::to_string(i) + "] analytic " +
                    std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return rep;
}

}  // namespace sparnet::testing
