#pragma once

#include <functional>
#include <string>

#include "crfd/param_store.hpp"
#include "crfd/tape.hpp"

namespace crfd {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  bool passed = false;
  std::int64_t coords_checked = 0;
};

/// Compares the tape gradient of a scalar-valued function against central
/// differences, coordinate by coordinate over every parameter. The function
/// must be pure in the parameters (same inputs, same value).
GradCheckReport grad_check(
    const std::function<Tensor(Tape&, const ParamStore&)>& f,
    const ParamStore& params, double eps, double tol);

}  // namespace crfd
