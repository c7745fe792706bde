#include <doctest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace longattack;
using namespace longattack::attacks;
using namespace testsupport;

namespace {

// z = sum_i w_i x_i + q_i x_i^2, logits [0, z]. Curved enough that gradient
// signs flip along a trajectory, which exercises the momentum accumulator.
class QuadraticModel final : public AttackModel {
 public:
  QuadraticModel(std::vector<double> w, std::vector<double> q) : w_(std::move(w)), q_(std::move(q)) {}
  SurrogateOutput forward(const Tensor& image) const override {
    const Tensor flat = reshape(image, {image.numel()});
    const Tensor z = sum(add(mul(flat, Tensor::vector(w_)), mul(mul(flat, flat), Tensor::vector(q_))));
    const Tensor parts[] = {scale(z, 0.0), z};
    return {flat, concat(parts)};
  }
  // dCE/dx in closed form.
  std::vector<double> grad(const std::vector<double>& x, std::size_t label) const {
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z += w_[i] * x[i] + q_[i] * x[i] * x[i];
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double coef = label == 1 ? p - 1.0 : p;
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = coef * (w_[i] + 2.0 * q_[i] * x[i]);
    return g;
  }

 private:
  std::vector<double> w_, q_;
};

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

AttackConfig linf(AttackKind kind, double eps, std::size_t iters) {
  AttackConfig c;
  c.attack = kind;
  c.epsilon = eps;
  c.iterations = iters;
  return c;
}

}  // namespace

TEST_CASE("fgsm on a logistic toy steps against the gradient sign") {
  const LogisticModel m({1.0}, 0.0);
  // label 1, z = 0: dCE/dx = (sigmoid(0) - 1) * 1 < 0, so x' = 0 - eps.
  const auto ex = fgsm(m, Tensor({1, 1, 1}, {0.0}), 1, 0.1);
  CHECK(ex.image[0] == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(ex.image.shape() == Shape{1, 1, 1});
  // label 0 moves the other way.
  CHECK(fgsm(m, Tensor({1, 1, 1}, {0.0}), 0, 0.1).image[0] == doctest::Approx(0.1));
}

TEST_CASE("fgsm clips to the valid range") {
  const LogisticModel m({1.0, -1.0}, 0.0);
  const auto ex = fgsm(m, Tensor({1, 1, 2}, {-0.98, 0.99}), 1, 0.05);
  CHECK(ex.image[0] == -1.0);
  CHECK(ex.image[1] == 1.0);
}

TEST_CASE("mifgsm matches a closed-form momentum oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5;
    std::vector<double> w(n), q(n), x0(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = rng.uniform(-1, 1);
      q[i] = rng.uniform(-20, 20);
      x0[i] = rng.uniform(-0.5, 0.5);
    }
    const QuadraticModel m(w, q);
    const std::size_t label = rng.index(2);
    auto cfg = linf(AttackKind::mifgsm, 0.08, 4);
    cfg.momentum = 0.7;
    const auto traj = mifgsm_trajectory(m, Tensor({1, 1, n}, x0), label, cfg);

    std::vector<double> x = x0, accum(n, 0.0);
    const double alpha = cfg.resolved_step_size();
    REQUIRE(traj.iterates.size() == 5);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto g = m.grad(x, label);
      double l1 = 0.0;
      for (double v : g) l1 += std::abs(v);
      for (std::size_t i = 0; i < n; ++i) {
        accum[i] = 0.7 * accum[i] + g[i] / l1;
        x[i] = std::clamp(x[i] + alpha * sgn(accum[i]), x0[i] - 0.08, x0[i] + 0.08);
        x[i] = std::clamp(x[i], -1.0, 1.0);
      }
      for (std::size_t i = 0; i < n; ++i) CHECK(traj.iterates[k + 1].image[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("ifgsm trajectory holds T + 1 iterates with the default step") {
  const LogisticModel m({1.0, 2.0}, 0.0);
  const auto cfg = linf(AttackKind::ifgsm, 0.01, 15);
  CHECK(cfg.resolved_step_size() == doctest::Approx(0.001));
  const auto traj = ifgsm_trajectory(m, Tensor({1, 1, 2}, {0.1, 0.2}), 1, cfg);
  CHECK(traj.iterates.size() == 16);
  CHECK(bitwise_equal(traj.iterates[0].image, Tensor({1, 1, 2}, {0.1, 0.2})));
  // Few iterations: step is eps / T.
  CHECK(linf(AttackKind::ifgsm, 0.01, 4).resolved_step_size() == doctest::Approx(0.0025));
}

TEST_CASE("cw finds a near-minimal L2 perturbation on a linear boundary") {
  // Grid of starting points; the closest boundary point is |w.x + b| / ||w||
  // away, so the result must be at least that far and not much farther.
  const LogisticModel m({1.0, 1.0}, -0.1);
  AttackConfig cfg;
  cfg.attack = AttackKind::cw;
  cfg.cw.steps = 300;
  cfg.cw.binary_steps = 8;
  for (double a : {0.15, 0.3, 0.45})
    for (double b : {0.05, 0.2}) {
      const Tensor x({1, 1, 2}, {a, b});
      const double z = a + b - 0.1;
      const double dmin = std::abs(z) / std::sqrt(2.0);
      const auto ex = cw_l2(m, x, 1, cfg);
      INFO("start " << a << "," << b);
      CHECK(ex.success);
      const double d = feature_distance(ex.image, x);
      CHECK(d >= dmin - 1e-9);
      CHECK(d <= 1.25 * dmin + 0.01);
    }
}

TEST_CASE("cw leaves an already misclassified input almost untouched") {
  const LogisticModel m({1.0}, 0.0);
  AttackConfig cfg;
  cfg.attack = AttackKind::cw;
  const Tensor x({1, 1, 1}, {-0.5});  // predicted 0, label 1
  const auto ex = cw_l2(m, x, 1, cfg);
  CHECK(ex.success);
  CHECK(feature_distance(ex.image, x) < 1e-6);
}

TEST_CASE("distance loss sign convention") {
  const Tensor a = Tensor::vector({3.0, 0.0}), b = Tensor::vector({0.0, 4.0});
  CHECK(distance_loss(a, b, 1).item() == doctest::Approx(-5.0));
  CHECK(distance_loss(a, b, 0).item() == doctest::Approx(5.0));
}

TEST_CASE("distance-guided ifgsm moves features toward the prior for cancer") {
  // Features are the pixels themselves, so the distance is Euclidean in
  // image space and the effect is easy to read.
  const LogisticModel m({1.0, 1.0}, 0.0);
  const Tensor x({1, 1, 2}, {0.0, 0.0}), prior({1, 1, 2}, {0.5, -0.5});
  const auto cfg = linf(AttackKind::distance_guided_ifgsm, 0.1, 10);
  const auto cancer = distance_guided_attack(BaseVariant::ifgsm, m, x, prior, 1, cfg);
  const auto control = distance_guided_attack(BaseVariant::ifgsm, m, x, prior, 0, cfg);
  CHECK(feature_distance(cancer.image, prior) < feature_distance(x, prior));
  CHECK(feature_distance(control.image, prior) > feature_distance(x, prior));
  CHECK(cancer.image[0] == doctest::Approx(0.1));
  CHECK(cancer.image[1] == doctest::Approx(-0.1));
}

TEST_CASE("knowledge-guided selection prefers the crossing iterate nearest the prior for cancer") {
  AttackTrajectory traj;
  auto it = [](double v, bool crossed) {
    Iterate i;
    i.image = Tensor::vector({v});
    i.crossed_boundary = crossed;
    return i;
  };
  traj.iterates = {it(0.0, false), it(0.3, true), it(0.6, true), it(0.9, true)};
  const Tensor prior = Tensor::vector({0.65});
  const FeatureFn id = [](const Tensor& t) { return t; };
  CHECK(select_adversarial_candidate(traj, prior, id, 1).index == 2);
  CHECK(select_adversarial_candidate(traj, prior, id, 0).index == 1);
  traj.iterates = {it(0.0, false), it(0.3, false)};
  const auto none = select_adversarial_candidate(traj, prior, id, 1);
  CHECK_FALSE(none.crossed);
  CHECK(none.index == 1);
  // Ties resolve to the lowest index.
  traj.iterates = {it(0.25, true), it(0.75, true)};
  CHECK(select_adversarial_candidate(traj, Tensor::vector({0.5}), id, 1).index == 0);
  CHECK(select_adversarial_candidate(traj, Tensor::vector({0.5}), id, 0).index == 0);
  CHECK_THROWS_AS(select_adversarial_candidate(AttackTrajectory{}, prior, id, 1), std::invalid_argument);
}

TEST_CASE("l2 projection scales into the ball") {
  AttackConfig cfg;
  cfg.norm = Norm::l2;
  cfg.epsilon = 0.5;
  const Tensor clean = Tensor::vector({0.0, 0.0});
  const Tensor p = project(Tensor::vector({3.0, 4.0}), clean, cfg);
  CHECK(p[0] == doctest::Approx(0.3));
  CHECK(p[1] == doctest::Approx(0.4));
}

TEST_CASE("attacks reject inputs outside [-1, 1]") {
  const LogisticModel m({1.0}, 0.0);
  CHECK_THROWS_AS(fgsm(m, Tensor({1, 1, 1}, {1.5}), 1, 0.1), std::invalid_argument);
}

TEST_CASE("attack config validation and names") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = -0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.random_start = 2.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  for (auto k : all_attacks()) CHECK(parse_attack(attack_name(k)) == k);
  CHECK_FALSE(parse_attack("bogus").has_value());
  CHECK(all_attacks().size() == 10);
  CHECK(attack_title(AttackKind::knowledge_guided) == "Knowledge-guided (proposed)");
}

TEST_CASE("pgd random start depends on the sample seed only") {
  const LogisticModel m({1.0, -1.0, 0.5}, 0.0);
  const Tensor x({1, 1, 3}, {0.1, 0.2, 0.3});
  auto cfg = linf(AttackKind::pgd, 0.05, 5);
  const auto a = pgd(m, x, 0, cfg, 1), b = pgd(m, x, 0, cfg, 1);
  const auto c = pgd_trajectory(m, x, 0, cfg, 2);
  CHECK(bitwise_equal(a.image, b.image));
  const auto ta = pgd_trajectory(m, x, 0, cfg, 1);
  CHECK_FALSE(bitwise_equal(ta.iterates[0].image, c.iterates[0].image));
  CHECK(max_abs_diff(ta.iterates[0].image, x) <= 0.05);
}
