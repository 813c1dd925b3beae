#include "sakit/gradcheck.hpp"

#include <cmath>

namespace sakit {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(Graph<double>& graph, const Feed<double>& feed,
                          const std::string& loss_node, const GradcheckOptions& options) {
  GradcheckReport report;
  auto loss_at = [&](const Feed<double>& f) {
    graph.forward(f, options.mode);
    return graph.value(loss_node)[0];
  };

  graph.forward(feed, options.mode);
  graph.backward(loss_node);
  ParamMap<double> analytic = graph.grads();
  std::map<std::string, TensorD> input_grads;
  if (options.check_inputs)
    for (const auto& [name, t] : feed.tensors) input_grads.emplace(name, graph.node_grad(name));
  if (options.grad_hook) options.grad_hook(analytic);

  const double h = options.step;
  for (auto& [name, p] : graph.params()) {
    GradcheckEntry e{name, 0, 0, true, {}};
    const TensorD& a = analytic.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = loss_at(feed);
      p[i] = orig - h;
      const double down = loss_at(feed);
      p[i] = orig;
      const double numeric = (up - down) / (2 * h);
      ++e.checked;
      if (!std::isfinite(a[i]) || !std::isfinite(numeric)) {
        e.passed = false;
        e.max_rel_error = INFINITY;
        e.note = "non-finite gradient at element " + std::to_string(i);
        break;
      }
      e.max_rel_error = std::max(e.max_rel_error, relative_error(a[i], numeric, options.floor));
    }
    if (e.passed) e.passed = e.max_rel_error < options.tolerance;
    report.entries.push_back(std::move(e));
  }

  if (options.check_inputs) {
    Feed<double> f = feed;
    for (auto& [name, x] : f.tensors) {
      GradcheckEntry e{"input:" + name, 0, 0, true, {}};
      const TensorD& a = input_grads.at(name);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = loss_at(f);
        x[i] = orig - h;
        const double down = loss_at(f);
        x[i] = orig;
        const double numeric = (up - down) / (2 * h);
        ++e.checked;
        if (!std::isfinite(a[i]) || !std::isfinite(numeric)) {
          e.passed = false;
          e.max_rel_error = INFINITY;
          e.note = "non-finite gradient at element " + std::to_string(i);
          break;
        }
        e.max_rel_error = std::max(e.max_rel_error, relative_error(a[i], numeric, options.floor));
      }
      if (e.passed) e.passed = e.max_rel_error < options.tolerance;
      report.entries.push_back(std::move(e));
    }
  }
  // Leave cached state consistent with the unperturbed point.
  graph.forward(feed, options.mode);
  return report;
}

}  // namespace sakit
