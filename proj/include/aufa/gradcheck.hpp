#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aufa/diff.hpp"

namespace aufa::diff {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Scalar objective built on a fresh tape from the current parameter values.
using Objective = std::function<Value(Tape&)>;

// Compares the analytic gradient of `f` with a central difference of step
// `step` for every entry of every parameter. The relative error of an entry
// is |a - n| / max(|a|, |n|, 1e-8). Parameter gradients are overwritten.
GradCheckReport finite_diff_check(const Objective& f, const std::vector<Parameter*>& params,
                                  double step = 1e-5);

}  // namespace aufa::diff
