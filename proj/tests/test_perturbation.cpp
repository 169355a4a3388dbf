#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cifm/common.hpp"
#include "cifm/graph.hpp"
#include "cifm/optim.hpp"
#include "cifm/params.hpp"
#include "cifm/perturbation.hpp"
#include "cifm/rng.hpp"

using namespace cifm;
namespace G = graph;

namespace {

using Groups = std::vector<std::pair<std::string, std::vector<std::string>>>;

double l2_of(const std::vector<const Matrix*>& ms) {
  double sq = 0.0;
  for (const Matrix* m : ms)
    for (double v : m->a) sq += v * v;
  return std::sqrt(sq);
}

// Simple convex objective: loss = 0.5 * ||w - c||^2 per target tensor, with
// analytic gradients accumulated into the store.
struct Quadratic {
  ParamStore* store;
  std::vector<std::string> names;
  std::unordered_map<std::string, Matrix> centers;

  double operator()() const {
    double loss = 0.0;
    for (const std::string& name : names) {
      Matrix& w = store->weight(name);
      Matrix& g = store->grad(name);
      const Matrix& c = centers.at(name);
      for (size_t i = 0; i < w.a.size(); ++i) {
        const double d = w.a[i] - c.a[i];
        loss += 0.5 * d * d;
        g.a[i] += d;
      }
    }
    return loss;
  }
};

// Two-layer net fixture shared by the continuity and ascent checks.
struct TinyNet {
  ParamStore store;
  Matrix x, y;
  Groups groups;

  explicit TinyNet(uint64_t seed) {
    Rng rng(seed);
    auto init = [&](Matrix& m, double s) {
      for (double& v : m.a) v = rng.normal() * s;
    };
    init(store.add("layer.0.w", 4, 8), 0.6);
    store.add("layer.0.b", 1, 8).zero();
    init(store.add("layer.1.w", 8, 1), 0.6);
    store.add("layer.1.b", 1, 1).zero();
    x = Matrix(16, 4);
    init(x, 1.0);
    y = Matrix(16, 1);
    init(y, 1.0);
    groups = {{"layer.0", {"layer.0.w", "layer.0.b"}},
              {"layer.1", {"layer.1.w", "layer.1.b"}}};
  }

  double loss_with_grad() {
    Tape t;
    auto p = [&](const char* n) { return t.param(store.weight(n), &store.grad(n)); };
    const int h = G::relu(t, G::affine(t, t.input(x), p("layer.0.w"), p("layer.0.b")));
    const int out = G::affine(t, h, p("layer.1.w"), p("layer.1.b"));
    const int loss = G::mse_mean(t, out, y);
    t.backward(loss);
    return t.scalar(loss);
  }
};

}  // namespace

TEST_CASE("gradient step direction on worked examples") {
  ParamStore ps;
  ps.add("g.w", 1, 2).zero();
  ps.grad("g.w").at(0, 0) = 3;
  ps.grad("g.w").at(0, 1) = 4;
  FgmResult r = fgm_delta(ps, {{"g", {"g.w"}}}, 1.0);
  CHECK(r.degenerate_groups.empty());
  CHECK(r.delta.at("g.w").at(0, 0) == doctest::Approx(-0.6).epsilon(1e-12));
  CHECK(r.delta.at("g.w").at(0, 1) == doctest::Approx(-0.8).epsilon(1e-12));

  ParamStore axis;
  axis.add("g.w", 1, 3).zero();
  axis.grad("g.w").at(0, 0) = 1;
  FgmResult r2 = fgm_delta(axis, {{"g", {"g.w"}}}, 5.0);
  CHECK(r2.delta.at("g.w").at(0, 0) == doctest::Approx(-5.0).epsilon(1e-12));
  CHECK(r2.delta.at("g.w").at(0, 1) == 0.0);
  CHECK(r2.delta.at("g.w").at(0, 2) == 0.0);
}

TEST_CASE("zero gradients flag the group and produce zero deltas") {
  ParamStore ps;
  ps.add("g.w", 2, 2).zero();
  FgmResult r = fgm_delta(ps, {{"g", {"g.w"}}}, 1.0);
  REQUIRE(r.degenerate_groups.size() == 1);
  CHECK(r.degenerate_groups[0] == "g");
  for (double v : r.delta.at("g.w").a) CHECK(v == 0.0);
}

TEST_CASE("delta norms are pooled per group, not globally") {
  ParamStore ps;
  Rng rng(4);
  for (const char* n : {"layer.0.w", "layer.0.b", "layer.1.w"}) {
    ps.add(n, 3, 4).zero();
    for (double& v : ps.grad(n).a) v = rng.normal() * (n[6] == '0' ? 1.0 : 50.0);
  }
  const double eps = 0.25;
  Groups groups = {{"layer.0", {"layer.0.w", "layer.0.b"}}, {"layer.1", {"layer.1.w"}}};
  FgmResult r = fgm_delta(ps, groups, eps);
  CHECK(r.degenerate_groups.empty());
  // Each group independently gets a delta of length exactly epsilon.
  CHECK(l2_of({&r.delta.at("layer.0.w"), &r.delta.at("layer.0.b")}) ==
        doctest::Approx(eps).epsilon(1e-9));
  CHECK(l2_of({&r.delta.at("layer.1.w")}) == doctest::Approx(eps).epsilon(1e-9));
  // Mixed case: one live group, one degenerate group.
  ps.grad("layer.1.w").zero();
  FgmResult mixed = fgm_delta(ps, groups, eps);
  REQUIRE(mixed.degenerate_groups.size() == 1);
  CHECK(mixed.degenerate_groups[0] == "layer.1");
  CHECK(l2_of({&mixed.delta.at("layer.0.w"), &mixed.delta.at("layer.0.b")}) ==
        doctest::Approx(eps).epsilon(1e-9));
}

TEST_CASE("fgm validates its configuration") {
  ParamStore ps;
  ps.add("g.w", 1, 1);
  CHECK_THROWS_AS(fgm_delta(ps, {{"g", {"g.w"}}}, 0.0), ConfigError);
  CHECK_THROWS_AS(fgm_delta(ps, {}, 1.0), ConfigError);
}

TEST_CASE("rate zero reduces to the plain optimizer step bit-for-bit") {
  TinyNet a(5), b(5);
  REQUIRE(checksum_all(a.store) == checksum_all(b.store));
  PerturbationSpec spec;
  spec.rate = 0.0;
  Adamax opt_a(OptimConfig{});
  Adamax opt_b(OptimConfig{});
  Rng draw(1);
  CimOutcome out = cim_step({&a.store}, a.store, a.groups,
                            [&]() { return a.loss_with_grad(); }, opt_a, spec, draw);
  CHECK_FALSE(out.applied);
  CHECK(out.trained_loss == out.clean_loss);
  // Manual clean step on the twin.
  b.store.zero_grads();
  const double manual_loss = b.loss_with_grad();
  opt_b.step(b.store);
  CHECK(out.clean_loss == manual_loss);
  CHECK(checksum_all(a.store) == checksum_all(b.store));
}

TEST_CASE("perturbed loss dominates the clean loss on a seeded net") {
  TinyNet net(7);
  PerturbationSpec spec;
  spec.epsilon = 0.1;
  spec.rate = 1.0;
  Adamax opt(OptimConfig{});
  Rng draw(2);
  CimOutcome out = cim_step({&net.store}, net.store, net.groups,
                            [&]() { return net.loss_with_grad(); }, opt, spec, draw);
  CHECK(out.applied);
  CHECK_FALSE(out.degenerate);
  CHECK(out.trained_loss >= out.clean_loss);
}

TEST_CASE("vanishing epsilon recovers the clean loss continuously") {
  TinyNet net(9);
  PerturbationSpec spec;
  spec.epsilon = 1e-12;
  spec.rate = 1.0;
  Adamax opt(OptimConfig{});
  Rng draw(3);
  CimOutcome out = cim_step({&net.store}, net.store, net.groups,
                            [&]() { return net.loss_with_grad(); }, opt, spec, draw);
  CHECK(out.applied);
  CHECK(std::abs(out.trained_loss - out.clean_loss) < 1e-6);
}

TEST_CASE("weights are restored before the update is taken") {
  // With a zero learning rate the update is zero, so the parameters must
  // come back bit-identical even though a perturbed pass ran.
  TinyNet net(11);
  const uint64_t before = checksum_all(net.store);
  PerturbationSpec spec;
  spec.epsilon = 0.5;
  spec.rate = 1.0;
  OptimConfig oc;
  oc.lr = 0.0;
  Adamax opt(oc);
  Rng draw(4);
  CimOutcome out = cim_step({&net.store}, net.store, net.groups,
                            [&]() { return net.loss_with_grad(); }, opt, spec, draw);
  CHECK(out.applied);
  CHECK(checksum_all(net.store) == before);
}

TEST_CASE("final parameters equal pre-step values plus the perturbed-gradient update") {
  // Reference path: compute the perturbed gradients by hand on a twin store,
  // restore, then take one fresh optimizer step with exactly those gradients.
  auto make_quad = [](ParamStore& ps) {
    ps.add("layer.0.w", 1, 3);
    ps.weight("layer.0.w").at(0, 0) = 1.0;
    ps.weight("layer.0.w").at(0, 1) = -2.0;
    ps.weight("layer.0.w").at(0, 2) = 0.5;
    Quadratic q;
    q.store = &ps;
    q.names = {"layer.0.w"};
    Matrix c(1, 3);
    c.at(0, 0) = -0.3;
    c.at(0, 1) = 0.7;
    c.at(0, 2) = 2.0;
    q.centers.emplace("layer.0.w", c);
    return q;
  };
  Groups groups = {{"layer.0", {"layer.0.w"}}};
  PerturbationSpec spec;
  spec.epsilon = 0.2;
  spec.rate = 1.0;

  ParamStore a;
  Quadratic qa = make_quad(a);
  Adamax opt_a([] {
    OptimConfig c;
    c.lr = 0.05;
    return c;
  }());
  Rng draw(5);
  CimOutcome out = cim_step({&a}, a, groups, qa, opt_a, spec, draw);
  REQUIRE(out.applied);

  ParamStore b;
  Quadratic qb = make_quad(b);
  // Clean gradients.
  b.zero_grads();
  const double clean = qb();
  CHECK(clean == out.clean_loss);
  // Ascent delta: +epsilon * g/||g||.
  Matrix g = b.grad("layer.0.w");
  double norm = 0.0;
  for (double v : g.a) norm += v * v;
  norm = std::sqrt(norm);
  Matrix saved = b.weight("layer.0.w");
  for (size_t i = 0; i < g.a.size(); ++i)
    b.weight("layer.0.w").a[i] += spec.epsilon * g.a[i] / norm;
  b.zero_grads();
  const double perturbed = qb();
  CHECK(perturbed == out.trained_loss);
  CHECK(perturbed > clean);
  b.weight("layer.0.w") = saved;
  Adamax opt_b([] {
    OptimConfig c;
    c.lr = 0.05;
    return c;
  }());
  opt_b.step(b);
  CHECK(a.weight("layer.0.w").a == b.weight("layer.0.w").a);
}

TEST_CASE("zero blend weight reproduces the clean update") {
  TinyNet a(13), b(13);
  PerturbationSpec spec;
  spec.epsilon = 0.3;
  spec.rate = 1.0;
  spec.weight = 0.0;
  Adamax opt_a(OptimConfig{}), opt_b(OptimConfig{});
  Rng draw(6);
  cim_step({&a.store}, a.store, a.groups, [&]() { return a.loss_with_grad(); }, opt_a, spec,
           draw);
  b.store.zero_grads();
  b.loss_with_grad();
  opt_b.step(b.store);
  CHECK(checksum_all(a.store) == checksum_all(b.store));
}

TEST_CASE("blended gradients interpolate between clean and perturbed updates") {
  TinyNet full(15), half(15), clean(15);
  PerturbationSpec spec;
  spec.epsilon = 0.3;
  spec.rate = 1.0;
  OptimConfig oc;
  oc.lr = 0.01;
  Rng d1(7), d2(7), d3(7);
  Adamax o1(oc), o2(oc), o3(oc);
  spec.weight = 1.0;
  cim_step({&full.store}, full.store, full.groups,
           [&]() { return full.loss_with_grad(); }, o1, spec, d1);
  spec.weight = 0.5;
  cim_step({&half.store}, half.store, half.groups,
           [&]() { return half.loss_with_grad(); }, o2, spec, d2);
  spec.weight = 0.0;
  cim_step({&clean.store}, clean.store, clean.groups,
           [&]() { return clean.loss_with_grad(); }, o3, spec, d3);
  const uint64_t cf = checksum_all(full.store);
  const uint64_t ch = checksum_all(half.store);
  const uint64_t cc = checksum_all(clean.store);
  CHECK(cf != ch);
  CHECK(ch != cc);
  CHECK(cf != cc);
}

TEST_CASE("degenerate gradients fall back to a clean update") {
  ParamStore ps;
  ps.add("layer.0.w", 1, 2);
  ps.weight("layer.0.w").at(0, 0) = 0.4;
  ps.weight("layer.0.w").at(0, 1) = -0.9;
  Quadratic q;
  q.store = &ps;
  q.names = {"layer.0.w"};
  q.centers.emplace("layer.0.w", ps.weight("layer.0.w"));  // already at the optimum
  PerturbationSpec spec;
  spec.rate = 1.0;
  Adamax opt(OptimConfig{});
  Rng draw(8);
  CimOutcome out =
      cim_step({&ps}, ps, {{"layer.0", {"layer.0.w"}}}, q, opt, spec, draw);
  CHECK_FALSE(out.applied);
  CHECK(out.degenerate);
  CHECK(out.clean_loss == 0.0);
  CHECK(out.trained_loss == 0.0);
}

TEST_CASE("application frequency follows the configured rate") {
  TinyNet net(17);
  PerturbationSpec spec;
  spec.epsilon = 0.05;
  spec.rate = 0.5;
  OptimConfig oc;
  oc.lr = 1e-4;
  Adamax opt(oc);
  Rng draw(9);
  int applied = 0;
  const int steps = 200;
  for (int s = 0; s < steps; ++s) {
    CimOutcome out = cim_step({&net.store}, net.store, net.groups,
                              [&]() { return net.loss_with_grad(); }, opt, spec, draw);
    applied += out.applied ? 1 : 0;
  }
  CHECK(applied > steps * 0.35);
  CHECK(applied < steps * 0.65);
}

TEST_CASE("cim_step validates its specification") {
  TinyNet net(19);
  Adamax opt(OptimConfig{});
  Rng draw(10);
  PerturbationSpec bad;
  bad.norm_order = 1;
  CHECK_THROWS_AS(cim_step({&net.store}, net.store, net.groups,
                           [&]() { return net.loss_with_grad(); }, opt, bad, draw),
                  ConfigError);
  PerturbationSpec rate;
  rate.rate = 1.5;
  CHECK_THROWS_AS(cim_step({&net.store}, net.store, net.groups,
                           [&]() { return net.loss_with_grad(); }, opt, rate, draw),
                  ConfigError);
  PerturbationSpec w;
  w.weight = -0.1;
  CHECK_THROWS_AS(cim_step({&net.store}, net.store, net.groups,
                           [&]() { return net.loss_with_grad(); }, opt, w, draw),
                  ConfigError);
}

TEST_CASE("evaluation-time input shifts honour the strength contract") {
  Rng rng(23);
  Matrix rows(4, 16);
  for (double& v : rows.a) v = rng.normal();

  // Zero strength copies the input exactly.
  Matrix same = test_time_perturb(rows, "random", 0.0, nullptr, &rng);
  CHECK(same.a == rows.a);

  // Random noise lands on the strength sphere row by row.
  Rng noise_rng(31);
  Matrix noisy = test_time_perturb(rows, "random", 2.0, nullptr, &noise_rng);
  for (int i = 0; i < rows.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < rows.cols; ++j) {
      const double d = noisy.at(i, j) - rows.at(i, j);
      sq += d * d;
    }
    CHECK(std::sqrt(sq) == doctest::Approx(2.0).epsilon(1e-9));
  }

  // Adversarial follows the per-row gradient direction exactly.
  Matrix flat(1, 2);
  Matrix grad(1, 2);
  grad.at(0, 0) = 0.6;
  grad.at(0, 1) = 0.8;
  Matrix shifted = test_time_perturb(flat, "adversarial", 1.0, &grad);
  CHECK(shifted.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(shifted.at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));

  // Zero-gradient rows stay put.
  Matrix zgrad(1, 2);
  Matrix still = test_time_perturb(flat, "adversarial", 1.0, &zgrad);
  CHECK(still.a == flat.a);

  CHECK_THROWS_AS(test_time_perturb(rows, "random", -1.0, nullptr, &rng), UsageError);
  CHECK_THROWS_AS(test_time_perturb(rows, "random", 1.0, nullptr, nullptr), UsageError);
  CHECK_THROWS_AS(test_time_perturb(rows, "adversarial", 1.0, nullptr, nullptr), UsageError);
  CHECK_THROWS_AS(test_time_perturb(rows, "sideways", 1.0, &grad, &rng), UsageError);
  Matrix wrong(2, 3);
  CHECK_THROWS_AS(test_time_perturb(rows, "adversarial", 1.0, &wrong, nullptr), UsageError);
}
