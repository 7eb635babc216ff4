#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sparnet/autograd.hpp"
#include "sparnet/nn.hpp"

namespace sparnet::testing {

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst;  // "name[index]" of the worst entry
  std::size_t checked = 0;
  std::size_t refined = 0;  // entries that needed a smaller step
};

// Compares backward() of `loss` against central differences for the listed
// variables. Entries are visited with a stride so at most `max_per_var` of
// each variable are perturbed (0 = all). Relative error uses
// |a - n| / max(|a|, |n|, floor). Where the central differences at h, h/2
// and h/4 disagree (a kink within reach of the step) a second-order
// one-sided difference from the kink-free side is used if exactly one side
// is consistent; otherwise the step is shrunk tenfold, at most twice.
GradCheckReport grad_check(const std::function<Var()>& loss, const nn::ParameterList& vars,
                           double h = 1e-5, std::size_t max_per_var = 0,
                           double floor = 1e-6);

}  // namespace sparnet::testing
