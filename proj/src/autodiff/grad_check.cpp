#include "spacy/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace spacy::ad {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& theta) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : theta) vars.push_back(tape.constant(t));
  const double v = f(tape, vars).value().item();
  if (!std::isfinite(v)) throw DomainError("function is non-finite at a probe point");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& theta, double step, double tol,
                           double floor) {
  GradCheckReport report;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : theta) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    if (!std::isfinite(out.value().item())) throw DomainError("function is non-finite at theta");
    tape.backward(out);
    for (const auto& v : vars) {
      const Tensor g = tape.grad(v);
      report.analytic.insert(report.analytic.end(), g.data().begin(), g.data().end());
    }
  }
  std::vector<Tensor> probe = theta;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const double orig = probe[p][i];
      probe[p][i] = orig + step;
      const double up = evaluate(f, probe);
      probe[p][i] = orig - step;
      const double down = evaluate(f, probe);
      probe[p][i] = orig;
      report.numeric.push_back((up - down) / (2.0 * step));
    }
  }
  for (std::size_t i = 0; i < report.analytic.size(); ++i) {
    const double a = report.analytic[i], n = report.numeric[i];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    report.rel_error.push_back(err);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace spacy::ad
