#include "corl/numerics.hpp"

#include <cmath>

namespace corl {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor<double>>& params) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  const Var<double> out = f(tape, vars);
  if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  const double value = out.value()[0];
  if (!std::isfinite(value)) throw NumericalError("grad_check: function value is not finite");
  return value;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> params, double step, double tol) {
  if (!(step > 0.0)) throw InputError("grad_check: step must be positive");

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& p : params) vars.push_back(tape.variable(p));
    const Var<double> out = f(tape, vars);
    if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
    if (!std::isfinite(out.value()[0])) throw NumericalError("grad_check: function value is not finite");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradReport report;
  report.tolerance = tol;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double worst = 0.0;
    for (Index i = 0; i < params[k].size(); ++i) {
      const double original = params[k][i];
      params[k][i] = original + step;
      const double up = evaluate(f, params);
      params[k][i] = original - step;
      const double down = evaluate(f, params);
      params[k][i] = original;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[k][i], numeric));
    }
    report.max_relative_error.push_back(worst);
  }
  report.pass = std::all_of(report.max_relative_error.begin(), report.max_relative_error.end(),
                            [tol](double e) { return e <= tol; });
  return report;
}

}  // namespace corl
