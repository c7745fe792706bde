#include "longattack/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "longattack/optimizer.hpp"
#include "longattack/rng.hpp"

namespace longattack::attacks {

namespace {

struct AttackInfo {
  AttackKind kind;
  std::string_view name;
  std::string_view title;
};

constexpr std::array<AttackInfo, 11> kAttacks{{
    {AttackKind::none, "none", "No Adversarial Attack"},
    {AttackKind::fgsm, "fgsm", "FGSM"},
    {AttackKind::distance_guided_fgsm, "distance_guided_fgsm", "Distance-guided FGSM"},
    {AttackKind::distance_reg_fgsm, "distance_reg_fgsm", "Distance Reg. FGSM"},
    {AttackKind::ifgsm, "ifgsm", "I-FGSM"},
    {AttackKind::distance_guided_ifgsm, "distance_guided_ifgsm", "Distance-guided I-FGSM"},
    {AttackKind::distance_reg_ifgsm, "distance_reg_ifgsm", "Distance Reg. I-FGSM"},
    {AttackKind::cw, "cw", "C&W"},
    {AttackKind::mifgsm, "mifgsm", "MI-FGSM"},
    {AttackKind::pgd, "pgd", "PGD"},
    {AttackKind::knowledge_guided, "knowledge_guided", "Knowledge-guided (proposed)"},
}};

const AttackInfo& info(AttackKind kind) {
  for (const auto& a : kAttacks)
    if (a.kind == kind) return a;
  throw std::logic_error("unknown attack kind");
}

using Objective = std::function<Tensor(const SurrogateOutput&)>;

Objective cross_entropy_objective(std::size_t label) {
  return [label](const SurrogateOutput& out) { return cross_entropy(out.logits, label); };
}

Objective distance_objective(const Tensor& prior_features, std::size_t label) {
  return [prior_features, label](const SurrogateOutput& out) {
    return distance_loss(out.features, prior_features, label);
  };
}

Objective regularized_objective(const Tensor& prior_features, std::size_t label, double lambda) {
  return [prior_features, label, lambda](const SurrogateOutput& out) {
    return add(cross_entropy(out.logits, label), scale(distance_loss(out.features, prior_features, label), lambda));
  };
}

Iterate make_iterate(const Tensor& image, const SurrogateOutput& out, const Tensor& loss, std::size_t label) {
  Iterate it;
  it.image = image;
  it.predicted = argmax(out.logits);
  it.loss = loss.item();
  it.crossed_boundary = it.predicted != label;
  return it;
}

void check_input(const Tensor& x) {
  for (double v : x.data())
    if (!(v >= -1.0 && v <= 1.0)) throw std::invalid_argument("attack input must lie in [-1, 1]");
}

// Shared sign-gradient loop. Records x_0 .. x_steps; each step moves along the
// sign (L-inf) or normalized (L2) gradient, optionally through an L1-normalized
// momentum accumulator, then projects.
AttackTrajectory iterate_attack(const AttackModel& model, const Tensor& clean, const Tensor& start,
                                std::size_t label, const Objective& objective, const AttackConfig& cfg,
                                std::size_t steps, double step, std::optional<double> momentum) {
  AttackTrajectory traj;
  traj.iterates.reserve(steps + 1);
  const std::size_t n = clean.numel();
  std::vector<double> accum(momentum ? n : 0, 0.0);
  Tensor x = start.detach();

  for (std::size_t k = 0;; ++k) {
    if (k == steps) {
      const auto out = model.forward(x);
      traj.iterates.push_back(make_iterate(x, out, objective(out), label));
      break;
    }
    Tensor leaf = x.detach();
    leaf.set_requires_grad(true);
    GradTape tape;
    SurrogateOutput out;
    Tensor loss;
    {
      GradTape::Recording rec(tape);
      out = model.forward(leaf);
      loss = objective(out);
    }
    traj.iterates.push_back(make_iterate(x, out, loss, label));
    const Tensor wrt[] = {leaf};
    const auto grads = backward(loss, tape, wrt);
    const auto g = grads.of(leaf);

    std::vector<double> dir(g.begin(), g.end());
    if (momentum) {
      double l1 = 0.0;
      for (double v : g) l1 += std::abs(v);
      for (std::size_t i = 0; i < n; ++i) accum[i] = *momentum * accum[i] + (l1 > 0.0 ? g[i] / l1 : 0.0);
      dir = accum;
    }

    std::vector<double> next(x.data().begin(), x.data().end());
    if (cfg.norm == Norm::linf) {
      for (std::size_t i = 0; i < n; ++i) {
        const double s = dir[i] > 0.0 ? 1.0 : (dir[i] < 0.0 ? -1.0 : 0.0);
        next[i] += step * s;
      }
    } else {
      double l2 = 0.0;
      for (double v : dir) l2 += v * v;
      l2 = std::sqrt(l2);
      if (l2 > 0.0)
        for (std::size_t i = 0; i < n; ++i) next[i] += step * dir[i] / l2;
    }
    x = project(Tensor(clean.shape(), std::move(next)), clean, cfg);
  }
  return traj;
}

AdversarialExample from_image(const AttackModel& model, const Tensor& image, std::size_t label, std::size_t index) {
  AdversarialExample ex;
  ex.image = image;
  const auto out = model.forward(image);
  ex.source_prediction = nn::to_probabilities(out.logits);
  ex.success = argmax(out.logits) != label;
  ex.selected_iterate_index = index;
  return ex;
}

AdversarialExample final_example(const AttackModel& model, const AttackTrajectory& traj, const Tensor& clean,
                                 std::size_t label, const AttackConfig& cfg) {
  const std::size_t last = traj.iterates.size() - 1;
  return from_image(model, project(traj.iterates[last].image, clean, cfg), label, last);
}

Tensor surrogate_features(const AttackModel& model, const Tensor& image) { return model.forward(image).features; }

AttackConfig fgsm_step_config(const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.iterations = 1;
  c.step_size = cfg.epsilon;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and configuration

std::string_view attack_name(AttackKind kind) { return info(kind).name; }
std::string_view attack_title(AttackKind kind) { return info(kind).title; }

std::optional<AttackKind> parse_attack(std::string_view name) {
  for (const auto& a : kAttacks)
    if (a.name == name) return a.kind;
  return std::nullopt;
}

const std::vector<AttackKind>& all_attacks() {
  static const std::vector<AttackKind> kinds = [] {
    std::vector<AttackKind> v;
    for (const auto& a : kAttacks)
      if (a.kind != AttackKind::none) v.push_back(a.kind);
    return v;
  }();
  return kinds;
}

bool is_linf_bounded(AttackKind kind) { return kind != AttackKind::cw; }

double AttackConfig::resolved_step_size() const {
  if (step_size) return *step_size;
  const double t = static_cast<double>(std::max<std::size_t>(iterations, 1));
  return std::max(epsilon / t, epsilon / 10.0);
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || epsilon > 2.0) throw std::invalid_argument("epsilon must lie in [0, 2]");
  if (iterations == 0) throw std::invalid_argument("iterations must be positive");
  if (step_size && !(*step_size >= 0.0)) throw std::invalid_argument("step_size must be nonnegative");
  if (!(momentum >= 0.0)) throw std::invalid_argument("momentum must be nonnegative");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");
  if (!(random_start >= 0.0 && random_start <= 1.0)) throw std::invalid_argument("random_start must lie in [0, 1]");
  if (!(cw.c_min > 0.0 && cw.c_min <= cw.c_max)) throw std::invalid_argument("cw: need 0 < c_min <= c_max");
  if (cw.binary_steps == 0 || cw.steps == 0) throw std::invalid_argument("cw: steps must be positive");
  if (!(cw.learning_rate > 0.0)) throw std::invalid_argument("cw: learning_rate must be positive");
  if (!(cw.confidence >= 0.0)) throw std::invalid_argument("cw: confidence must be nonnegative");
}

// ---------------------------------------------------------------------------
// Surrogates

SurrogateOutput SourceSurrogate::forward(const Tensor& image) const {
  Tensor f = model_.features(image);
  return {f, model_.logits_from_features(f)};
}

TargetCurrentSurrogate::TargetCurrentSurrogate(const nn::TargetModel& model, const Tensor& prior)
    : model_(model), prior_features_(model.backbone().forward(prior.detach()).detach()) {}

SurrogateOutput TargetCurrentSurrogate::forward(const Tensor& image) const {
  Tensor f = model_.backbone().forward(image);
  return {f, model_.logits_from_features(prior_features_, f)};
}

// ---------------------------------------------------------------------------
// Building blocks

std::size_t argmax(const Tensor& logits) {
  const auto d = logits.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

double feature_distance(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw ShapeError("feature_distance: dimension mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  return std::sqrt(s);
}

Tensor distance_loss(const Tensor& adv_features, const Tensor& prior_features, std::size_t label) {
  const Tensor d = l2_norm(sub(adv_features, prior_features));
  return label == 1 ? scale(d, -1.0) : d;
}

Tensor project(const Tensor& image, const Tensor& clean, const AttackConfig& cfg) {
  if (image.shape() != clean.shape())
    throw ShapeError("project: " + shape_str(image.shape()) + " vs " + shape_str(clean.shape()));
  const auto x = image.data();
  const auto c = clean.data();
  std::vector<double> out(x.size());
  if (cfg.norm == Norm::linf) {
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = std::clamp(std::clamp(x[i], c[i] - cfg.epsilon, c[i] + cfg.epsilon), -1.0, 1.0);
  } else {
    double l2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) l2 += (x[i] - c[i]) * (x[i] - c[i]);
    l2 = std::sqrt(l2);
    const double f = l2 > cfg.epsilon ? cfg.epsilon / l2 : 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(c[i] + f * (x[i] - c[i]), -1.0, 1.0);
  }
  return Tensor(image.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Attacks

AdversarialExample fgsm(const AttackModel& model, const Tensor& x, std::size_t label, double epsilon) {
  check_input(x);
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  GradTape tape;
  Tensor loss;
  {
    GradTape::Recording rec(tape);
    loss = cross_entropy(model.forward(leaf).logits, label);
  }
  const Tensor wrt[] = {leaf};
  const auto grads = backward(loss, tape, wrt);
  const auto g = grads.of(leaf);
  const auto xd = x.data();
  std::vector<double> adv(xd.size());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    adv[i] = std::clamp(xd[i] + epsilon * s, -1.0, 1.0);
  }
  return from_image(model, Tensor(x.shape(), std::move(adv)), label, 1);
}

AttackTrajectory ifgsm_trajectory(const AttackModel& model, const Tensor& x, std::size_t label,
                                  const AttackConfig& cfg) {
  check_input(x);
  return iterate_attack(model, x, x, label, cross_entropy_objective(label), cfg, cfg.iterations,
                        cfg.resolved_step_size(), std::nullopt);
}

std::pair<AdversarialExample, AttackTrajectory> ifgsm(const AttackModel& model, const Tensor& x, std::size_t label,
                                                      const AttackConfig& cfg) {
  auto traj = ifgsm_trajectory(model, x, label, cfg);
  auto ex = final_example(model, traj, x, label, cfg);
  return {std::move(ex), std::move(traj)};
}

AttackTrajectory mifgsm_trajectory(const AttackModel& model, const Tensor& x, std::size_t label,
                                   const AttackConfig& cfg) {
  check_input(x);
  return iterate_attack(model, x, x, label, cross_entropy_objective(label), cfg, cfg.iterations,
                        cfg.resolved_step_size(), cfg.momentum);
}

AdversarialExample mifgsm(const AttackModel& model, const Tensor& x, std::size_t label, const AttackConfig& cfg) {
  return final_example(model, mifgsm_trajectory(model, x, label, cfg), x, label, cfg);
}

AttackTrajectory pgd_trajectory(const AttackModel& model, const Tensor& x, std::size_t label,
                                const AttackConfig& cfg, std::uint64_t rng_seed) {
  check_input(x);
  Rng rng(rng_seed);
  const double radius = cfg.random_start * cfg.epsilon;
  const auto xd = x.data();
  std::vector<double> start(xd.begin(), xd.end());
  if (cfg.norm == Norm::linf) {
    for (auto& v : start) v += rng.uniform(-radius, radius);
  } else {
    std::vector<double> dir(start.size());
    double l2 = 0.0;
    for (auto& v : dir) {
      v = rng.normal();
      l2 += v * v;
    }
    l2 = std::sqrt(l2);
    const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(start.size()));
    if (l2 > 0.0)
      for (std::size_t i = 0; i < start.size(); ++i) start[i] += r * dir[i] / l2;
  }
  const Tensor s = project(Tensor(x.shape(), std::move(start)), x, cfg);
  return iterate_attack(model, x, s, label, cross_entropy_objective(label), cfg, cfg.iterations,
                        cfg.resolved_step_size(), std::nullopt);
}

AdversarialExample pgd(const AttackModel& model, const Tensor& x, std::size_t label, const AttackConfig& cfg,
                       std::uint64_t rng_seed) {
  return final_example(model, pgd_trajectory(model, x, label, cfg, rng_seed), x, label, cfg);
}

AdversarialExample cw_l2(const AttackModel& model, const Tensor& x, std::size_t label, const AttackConfig& cfg) {
  check_input(x);
  const auto xd = x.data();
  constexpr double kEdge = 1.0 - 1e-12;
  std::vector<double> w0(xd.size());
  for (std::size_t i = 0; i < w0.size(); ++i) w0[i] = std::atanh(std::clamp(xd[i], -kEdge, kEdge));

  const auto& cw = cfg.cw;
  double lo = cw.c_min, hi = cw.c_max;
  double c = std::sqrt(lo * hi);
  bool found = false;
  double best_l2 = std::numeric_limits<double>::infinity();
  Tensor best;
  Tensor last;
  const std::size_t check_every = std::max<std::size_t>(cw.steps / 10, 1);

  for (std::size_t b = 0; b < cw.binary_steps; ++b) {
    Tensor w(x.shape(), w0, true);
    std::vector<Tensor> params{w};
    auto opt = OptimizerState::adam(cw.learning_rate);
    bool success_here = false;
    double prev_loss = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0;; ++s) {
      GradTape tape;
      Tensor adv, loss;
      std::size_t pred = 0;
      {
        GradTape::Recording rec(tape);
        adv = tanh(w);
        const auto out = model.forward(adv);
        pred = argmax(out.logits);
        const std::size_t other = label == 0 ? 1 : 0;
        // Z_t - max_{j != t} Z_j; with two classes the max is the other logit.
        std::size_t best_other = other;
        for (std::size_t j = 0; j < out.logits.numel(); ++j)
          if (j != label && out.logits[j] > out.logits[best_other]) best_other = j;
        const Tensor margin = sub(select(out.logits, label), select(out.logits, best_other));
        const Tensor diff = sub(adv, x);
        loss = add(sum(mul(diff, diff)), scale(relu(add(margin, cw.confidence)), c));
        const double margin_v = margin.item();
        if (pred != label && margin_v <= -cw.confidence) {
          success_here = true;
          const double l2 = feature_distance(adv, x);
          if (l2 < best_l2) {
            best_l2 = l2;
            best = adv.detach();
            found = true;
          }
        }
      }
      last = adv.detach();
      if (s == cw.steps) break;
      if (s % check_every == 0) {
        if (loss.item() > prev_loss * 0.9999) break;
        prev_loss = loss.item();
      }
      const auto grads = backward(loss, tape, params);
      optimizer_step(params, grads, opt);
    }
    if (success_here)
      hi = c;
    else
      lo = c;
    c = std::sqrt(lo * hi);
  }

  AdversarialExample ex = from_image(model, found ? best : last, label, 0);
  return ex;
}

AttackTrajectory distance_guided_trajectory(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                            const Tensor& x_prior, std::size_t label, const AttackConfig& cfg) {
  check_input(x);
  const Tensor prior_features = surrogate_features(model, x_prior).detach();
  const AttackConfig c = variant == BaseVariant::fgsm ? fgsm_step_config(cfg) : cfg;
  return iterate_attack(model, x, x, label, distance_objective(prior_features, label), c, c.iterations,
                        c.resolved_step_size(), std::nullopt);
}

AdversarialExample distance_guided_attack(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                          const Tensor& x_prior, std::size_t label, const AttackConfig& cfg) {
  return final_example(model, distance_guided_trajectory(variant, model, x, x_prior, label, cfg), x, label, cfg);
}

AttackTrajectory distance_reg_trajectory(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                         const Tensor& x_prior, std::size_t label, const AttackConfig& cfg) {
  check_input(x);
  const Tensor prior_features = surrogate_features(model, x_prior).detach();
  const AttackConfig c = variant == BaseVariant::fgsm ? fgsm_step_config(cfg) : cfg;
  return iterate_attack(model, x, x, label, regularized_objective(prior_features, label, cfg.lambda), c,
                        c.iterations, c.resolved_step_size(), std::nullopt);
}

AdversarialExample distance_reg_attack(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                       const Tensor& x_prior, std::size_t label, const AttackConfig& cfg) {
  return final_example(model, distance_reg_trajectory(variant, model, x, x_prior, label, cfg), x, label, cfg);
}

Selection select_adversarial_candidate(const AttackTrajectory& candidates, const Tensor& prior_feature,
                                       const FeatureFn& feature_fn, std::size_t label) {
  if (candidates.iterates.empty()) throw std::invalid_argument("select_adversarial_candidate: empty trajectory");
  Selection sel;
  bool have = false;
  for (std::size_t i = 0; i < candidates.iterates.size(); ++i) {
    const auto& it = candidates.iterates[i];
    if (!it.crossed_boundary) continue;
    const double d = feature_distance(feature_fn(it.image), prior_feature);
    const bool better = label == 1 ? d < sel.distance : d > sel.distance;
    if (!have || better) {
      sel = {i, d, true};
      have = true;
    }
  }
  if (!have) {
    const std::size_t last = candidates.iterates.size() - 1;
    sel = {last, feature_distance(feature_fn(candidates.iterates[last].image), prior_feature), false};
  }
  return sel;
}

AdversarialExample knowledge_guided_attack(const AttackModel& model, const Tensor& x_current, const Tensor& x_prior,
                                           std::size_t label, const AttackConfig& cfg) {
  const auto traj = ifgsm_trajectory(model, x_current, label, cfg);
  const Tensor prior_features = surrogate_features(model, x_prior).detach();
  const auto sel = select_adversarial_candidate(
      traj, prior_features, [&model](const Tensor& img) { return surrogate_features(model, img); }, label);
  AdversarialExample ex =
      from_image(model, project(traj.iterates[sel.index].image, x_current, cfg), label, sel.index);
  ex.feature_distance_to_prior = sel.distance;
  return ex;
}

AdversarialExample run_attack(const AttackModel& model, const Tensor& x_current, const Tensor& x_prior,
                              std::size_t label, const AttackConfig& cfg, std::uint64_t sample_seed) {
  AdversarialExample ex;
  switch (cfg.attack) {
    case AttackKind::none:
      ex = from_image(model, x_current, label, 0);
      break;
    case AttackKind::fgsm:
      ex = fgsm(model, x_current, label, cfg.epsilon);
      break;
    case AttackKind::distance_guided_fgsm:
      ex = distance_guided_attack(BaseVariant::fgsm, model, x_current, x_prior, label, cfg);
      break;
    case AttackKind::distance_reg_fgsm:
      ex = distance_reg_attack(BaseVariant::fgsm, model, x_current, x_prior, label, cfg);
      break;
    case AttackKind::ifgsm:
      ex = ifgsm(model, x_current, label, cfg).first;
      break;
    case AttackKind::distance_guided_ifgsm:
      ex = distance_guided_attack(BaseVariant::ifgsm, model, x_current, x_prior, label, cfg);
      break;
    case AttackKind::distance_reg_ifgsm:
      ex = distance_reg_attack(BaseVariant::ifgsm, model, x_current, x_prior, label, cfg);
      break;
    case AttackKind::cw:
      ex = cw_l2(model, x_current, label, cfg);
      break;
    case AttackKind::mifgsm:
      ex = mifgsm(model, x_current, label, cfg);
      break;
    case AttackKind::pgd:
      ex = pgd(model, x_current, label, cfg, sample_seed);
      break;
    case AttackKind::knowledge_guided:
      return knowledge_guided_attack(model, x_current, x_prior, label, cfg);
  }
  ex.feature_distance_to_prior =
      feature_distance(surrogate_features(model, ex.image), surrogate_features(model, x_prior));
  return ex;
}

}  // namespace longattack::attacks
