#pragma once

#include <functional>
#include <string>
#include <vector>

#include "zpressor/autograd.hpp"

namespace zp {

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t entries_checked = 0;
  GradCheckEntry worst;
  double tolerance = 0;
  bool passed = true;

  std::string summary() const;
};

// Builds a scalar from the given parameter leaves on the supplied tape.
using ScalarFn = std::function<ad::Var<double>(ad::Tape<double>&,
                                               const std::vector<ad::Var<double>>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-3;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged by absolute error against this scale.
  double scale_floor = 1e-6;
};

// Compares the tape gradient of every parameter entry with the central
// difference (f(x+h) - f(x-h)) / 2h. Throws CheckFailed if f is non-finite.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor64>& params,
                           const GradCheckOptions& options = {});

}  // namespace zp
