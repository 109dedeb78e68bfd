#include "zpressor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "zpressor/error.hpp"

namespace zp {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " entries=" << entries_checked
     << " max_rel=" << max_rel_error << " max_abs=" << max_abs_error
     << " tol=" << tolerance << " worst=(param " << worst.param << ", index "
     << worst.index << ", analytic " << worst.analytic << ", numeric "
     << worst.numeric << ")";
  return os.str();
}

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor64>& params) {
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, false));
  const double v = f(tape, leaves).value().item();
  if (!std::isfinite(v)) throw CheckFailed("grad_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor64>& params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0)) throw InvalidInput("grad_check: step must be positive");
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
  ad::Var<double> out = f(tape, leaves);
  if (!std::isfinite(out.value().item())) {
    throw CheckFailed("grad_check: objective is not finite");
  }
  tape.backward(out);

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::vector<Tensor64> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor64& analytic = leaves[p].grad();
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      const double x0 = params[p][i];
      work[p][i] = x0 + options.step;
      const double fp = evaluate(f, work);
      work[p][i] = x0 - options.step;
      const double fm = evaluate(f, work);
      work[p][i] = x0;
      const double numeric = (fp - fm) / (2 * options.step);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double rel = abs_err / denom;
      ++report.entries_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.entries_checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.worst.rel_error) report.worst = {p, i, a, numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace zp
