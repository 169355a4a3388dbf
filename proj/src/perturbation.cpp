#include "cifm/perturbation.hpp"

#include <cmath>

#include "cifm/common.hpp"

namespace cifm {

FgmResult fgm_delta(const ParamStore& store,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                    double epsilon, double floor) {
  if (epsilon <= 0.0) throw ConfigError("fgm: epsilon must be positive");
  if (groups.empty()) throw ConfigError("fgm: no target groups");
  FgmResult out;
  for (const auto& [group, members] : groups) {
    double sq = 0.0;
    for (const std::string& name : members) {
      const Matrix& g = store.grads.at(name);
      for (double v : g.a) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm <= floor) out.degenerate_groups.push_back(group);
    const double scale = norm <= floor ? 0.0 : -epsilon / norm;
    for (const std::string& name : members) {
      const Matrix& g = store.grads.at(name);
      Matrix d = zeros_like(g);
      for (size_t i = 0; i < g.a.size(); ++i) d.a[i] = scale * g.a[i];
      out.delta.emplace(name, std::move(d));
    }
  }
  return out;
}

CimOutcome cim_step(const std::vector<ParamStore*>& stores, ParamStore& target_store,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                    const std::function<double()>& loss_with_grad, Adamax& opt,
                    const PerturbationSpec& spec, Rng& draw_rng) {
  if (spec.norm_order != 2) throw ConfigError("cim: only the L2 norm is supported");
  if (spec.rate < 0.0 || spec.rate > 1.0) throw ConfigError("cim: rate must lie in [0,1]");
  if (spec.weight < 0.0 || spec.weight > 1.0)
    throw ConfigError("cim: weight must lie in [0,1]");

  CimOutcome out;
  for (ParamStore* ps : stores) ps->zero_grads();
  out.clean_loss = loss_with_grad();
  out.trained_loss = out.clean_loss;

  const bool apply = spec.rate > 0.0 && draw_rng.bernoulli(spec.rate);
  if (!apply) {
    opt.step(stores);
    return out;
  }
  out.applied = true;

  // Negate the loss gradients so the descending delta of fgm_delta climbs
  // the loss (the perturbation is adversarial).
  std::vector<std::string> target_names;
  for (const auto& [group, members] : groups)
    for (const std::string& name : members) target_names.push_back(name);
  for (const std::string& name : target_names) {
    Matrix& g = target_store.grad(name);
    for (double& v : g.a) v = -v;
  }
  const FgmResult fgm = fgm_delta(target_store, groups, spec.epsilon);
  if (fgm.degenerate_groups.size() == groups.size()) {
    // Nothing to perturb; fall back to a clean update.  The clean gradients
    // were negated above, so restore them first.
    out.applied = false;
    out.degenerate = true;
    for (const std::string& name : target_names) {
      Matrix& g = target_store.grad(name);
      for (double& v : g.a) v = -v;
    }
    opt.step(stores);
    return out;
  }

  std::unordered_map<std::string, Matrix> clean_grads;
  if (spec.weight < 1.0)
    for (ParamStore* ps : stores)
      for (const std::string& name : ps->names) {
        Matrix g = ps->grad(name);
        // Undo the temporary negation on targeted tensors.
        if (ps == &target_store && fgm.delta.count(name) > 0)
          for (double& v : g.a) v = -v;
        clean_grads.emplace(name, std::move(g));
      }

  const uint64_t before = checksum_params(target_store, target_names);
  std::unordered_map<std::string, Matrix> snapshot;
  for (const std::string& name : target_names)
    snapshot.emplace(name, target_store.weight(name));
  for (const std::string& name : target_names) {
    Matrix& w = target_store.weight(name);
    const Matrix& d = fgm.delta.at(name);
    for (size_t i = 0; i < w.a.size(); ++i) w.a[i] += d.a[i];
  }

  for (ParamStore* ps : stores) ps->zero_grads();
  out.trained_loss = loss_with_grad();

  for (const std::string& name : target_names)
    target_store.weight(name) = snapshot.at(name);
  if (checksum_params(target_store, target_names) != before)
    throw ConsistencyError("cim: weight restoration checksum mismatch");

  if (spec.weight < 1.0)
    for (ParamStore* ps : stores)
      for (const std::string& name : ps->names) {
        Matrix& g = ps->grad(name);
        const Matrix& c = clean_grads.at(name);
        for (size_t i = 0; i < g.a.size(); ++i)
          g.a[i] = spec.weight * g.a[i] + (1.0 - spec.weight) * c.a[i];
      }

  opt.step(stores);
  return out;
}

Matrix test_time_perturb(const Matrix& rows, const std::string& kind, double strength,
                         const Matrix* grad, Rng* rng) {
  if (strength < 0.0) throw UsageError("test_time_perturb: strength must be non-negative");
  Matrix out = rows;
  if (strength == 0.0) return out;
  if (kind == "random") {
    if (rng == nullptr) throw UsageError("test_time_perturb: random kind needs an rng");
    for (int i = 0; i < out.rows; ++i) {
      std::vector<double> noise(out.cols);
      double sq = 0.0;
      for (double& v : noise) {
        v = rng->normal();
        sq += v * v;
      }
      const double scale = strength / std::max(std::sqrt(sq), 1e-12);
      double* r = out.row(i);
      for (int j = 0; j < out.cols; ++j) r[j] += scale * noise[j];
    }
    return out;
  }
  if (kind == "adversarial") {
    if (grad == nullptr) throw UsageError("test_time_perturb: adversarial kind needs a gradient");
    if (!grad->same_shape(rows))
      throw UsageError("test_time_perturb: gradient shape mismatch");
    for (int i = 0; i < out.rows; ++i) {
      const double* g = grad->row(i);
      double sq = 0.0;
      for (int j = 0; j < out.cols; ++j) sq += g[j] * g[j];
      const double norm = std::sqrt(sq);
      if (norm <= 1e-12) continue;
      const double scale = strength / norm;
      double* r = out.row(i);
      for (int j = 0; j < out.cols; ++j) r[j] += scale * g[j];
    }
    return out;
  }
  throw UsageError("test_time_perturb: unknown kind '" + kind + "'");
}

}  // namespace cifm
