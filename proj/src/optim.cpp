#include "cifm/optim.hpp"

#include <algorithm>
#include <cmath>

#include "cifm/common.hpp"

namespace cifm {

void Adamax::step(const std::vector<ParamStore*>& stores) {
  ++t_;
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (ParamStore* ps : stores)
      for (const std::string& name : ps->names)
        for (double g : ps->grad(name).a) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const double bias = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double lr_t = cfg_.lr / bias;
  for (size_t s = 0; s < stores.size(); ++s) {
    ParamStore* ps = stores[s];
    for (const std::string& name : ps->names) {
      Matrix& w = ps->weight(name);
      const Matrix& g = ps->grad(name);
      // State is keyed per store slot so that stores with overlapping
      // parameter names never share moment buffers; callers pass stores in a
      // fixed order across steps.
      const std::string key = std::to_string(s) + ":" + name;
      auto mit = m_.find(key);
      if (mit == m_.end()) {
        Matrix zm = zeros_like(w);
        mit = m_.emplace(key, std::move(zm)).first;
        u_.emplace(key, zeros_like(w));
      }
      Matrix& m = mit->second;
      Matrix& u = u_.at(key);
      if (!w.same_shape(m)) throw ConsistencyError("optimizer state shape drift: " + name);
      for (size_t i = 0; i < w.a.size(); ++i) {
        const double grad = g.a[i] * scale + cfg_.weight_decay * w.a[i];
        m.a[i] = cfg_.beta1 * m.a[i] + (1.0 - cfg_.beta1) * grad;
        u.a[i] = std::max(cfg_.beta2 * u.a[i], std::fabs(grad));
        w.a[i] -= lr_t * m.a[i] / (u.a[i] + cfg_.eps);
      }
    }
  }
}

}  // namespace cifm
