#include "crfd/grad_check.hpp"

#include <cmath>

namespace crfd {

namespace {
ParamStore with_perturbed(const ParamStore& params, const std::string& name, std::int64_t idx,
                          double delta) {
  ParamStore out;
  for (const auto& [k, t] : params) {
    if (k == name) {
      std::vector<double> v = t.values();
      v[static_cast<size_t>(idx)] += delta;
      out.add(k, Tensor::from(t.shape(), std::move(v), true));
    } else {
      out.add(k, t);
    }
  }
  return out;
}
}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape&, const ParamStore&)>& f,
                           const ParamStore& params, double eps, double tol) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check requires eps > 0");
  GradCheckReport report;

  Tape tape;
  Tensor y = f(tape, params);
  if (y.size() != 1) throw std::invalid_argument("grad_check target must be scalar");
  tape.backward(y);

  for (const auto& [name, t] : params) {
    Tensor g = tape.grad(t);
    for (std::int64_t i = 0; i < t.size(); ++i) {
      Tape fwd_p, fwd_m;
      double fp = f(fwd_p, with_perturbed(params, name, i, eps)).item();
      double fm = f(fwd_m, with_perturbed(params, name, i, -eps)).item();
      double fd = (fp - fm) / (2.0 * eps);
      double an = g.at(i);
      double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
      double rel = std::fabs(fd - an) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_err < tol;
  return report;
}

}  // namespace crfd
