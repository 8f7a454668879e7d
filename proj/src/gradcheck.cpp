#include "aufa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "aufa/error.hpp"

namespace aufa::diff {

GradCheckReport finite_diff_check(const Objective& f, const std::vector<Parameter*>& params,
                                  double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw Error(ErrorKind::InvalidArgument, "finite_diff_check: step must lie in [1e-7, 1e-3]");
  }
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Value loss = f(tape);
    tape.backward(loss);
  }
  auto evaluate = [&f] {
    Tape tape;
    return f(tape).item();
  };

  GradCheckReport report;
  for (Parameter* p : params) {
    const Matrix analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double up = evaluate();
      p->value[i] = orig - step;
      const double down = evaluate();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p->name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace aufa::diff
