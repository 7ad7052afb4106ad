#include "mil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mil/rng.hpp"
#include "mil/training.hpp"

namespace mil {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace {

double bag_loss(const Model& model, const Bag& bag) {
  const Prediction p = predict(model, bag.instances);
  return cross_entropy(p.prob, static_cast<std::size_t>(bag.label));
}

}  // namespace

GradCheckReport gradient_check(Model& model, const Bag& bag, const GradCheckOptions& opts) {
  GradCheckReport report;
  report.kind = model.kind();

  model.zero_grad();
  ad::Graph g;
  g.set_fault_injection(opts.fault_injection);
  ForwardPass fp = forward(g, bag.instances, model, TrainingMode{});
  g.backward(ad::cross_entropy(fp.prob, static_cast<std::size_t>(bag.label)));

  for (ad::Parameter* p : model.parameters()) {
    TensorCheck tc;
    tc.name = p->name;
    tc.entries = p->value.size();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + opts.step;
      const double up = bag_loss(model, bag);
      p->value.data[i] = saved - opts.step;
      const double down = bag_loss(model, bag);
      p->value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      tc.max_rel_error = std::max(tc.max_rel_error, relative_error(p->grad.data[i], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
    report.tensors.push_back(std::move(tc));
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

std::vector<GradCheckReport> gradient_check_suite(std::uint64_t seed, const GradCheckOptions& opts) {
  constexpr std::size_t D = 8, H = 6, L = 5, K = 4;
  const Rng run(seed);
  Rng data_rng = run.substream("gradcheck-bag");
  Bag bag;
  bag.id = "gradcheck";
  bag.label = 1;
  bag.instances = Matrix(K, D);
  for (double& v : bag.instances.data) v = data_rng.uniform(-2.0, 2.0);

  const std::uint64_t init_seed = run.substream("gradcheck-init").next();
  std::vector<Model> models;
  models.emplace_back(init_multi_attention({D, H, L}, init_seed));
  models.emplace_back(init_minet({D, {6, 5, 4}}, ad::Reduction::max, init_seed));
  models.emplace_back(init_minet({D, {6, 5, 4}}, ad::Reduction::mean, init_seed));

  std::vector<GradCheckReport> out;
  for (auto& m : models) out.push_back(gradient_check(m, bag, opts));
  return out;
}

}  // namespace mil
