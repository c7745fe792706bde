#pragma once

// Gradient-based attacks on a differentiable surrogate, plus the
// distance-guided objectives and the knowledge-guided iterate selection.
//
// All images live in the normalized range [-1, 1]. L-infinity attacks keep
// every iterate inside the epsilon ball around the clean input and inside
// [-1, 1]. Attacks only ever perturb the Current exam; the Prior exam enters
// through its (fixed) surrogate features.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "longattack/models.hpp"
#include "longattack/tensor.hpp"

namespace longattack::attacks {

enum class AttackKind {
  none,
  fgsm,
  distance_guided_fgsm,
  distance_reg_fgsm,
  ifgsm,
  distance_guided_ifgsm,
  distance_reg_ifgsm,
  cw,
  mifgsm,
  pgd,
  knowledge_guided,
};

std::string_view attack_name(AttackKind kind);
// Human-readable row label, e.g. "Distance Reg. I-FGSM".
std::string_view attack_title(AttackKind kind);
std::optional<AttackKind> parse_attack(std::string_view name);
// Every attack except `none`, in reporting order.
const std::vector<AttackKind>& all_attacks();
bool is_linf_bounded(AttackKind kind);

enum class Norm { linf, l2 };

struct CwConfig {
  double confidence = 0.0;  // kappa
  double c_min = 1e-2;
  double c_max = 1e2;
  std::size_t binary_steps = 5;
  std::size_t steps = 100;
  double learning_rate = 0.01;

  bool operator==(const CwConfig&) const = default;
};

struct AttackConfig {
  AttackKind attack = AttackKind::knowledge_guided;
  double epsilon = 0.01;
  std::size_t iterations = 15;
  // Unset: max(epsilon / iterations, epsilon / 10).
  std::optional<double> step_size;
  double momentum = 1.0;
  double lambda = 0.05;
  // PGD random start radius as a fraction of epsilon.
  double random_start = 1.0;
  std::uint64_t seed = 0;
  Norm norm = Norm::linf;
  CwConfig cw;

  double resolved_step_size() const;
  // Throws std::invalid_argument.
  void validate() const;

  bool operator==(const AttackConfig&) const = default;
};

struct SurrogateOutput {
  Tensor features;
  Tensor logits;
};

// The differentiable view of a classifier an attack needs: the
// intermediate feature map and the class logits of one image.
class AttackModel {
 public:
  virtual ~AttackModel() = default;
  virtual SurrogateOutput forward(const Tensor& image) const = 0;
};

class SourceSurrogate final : public AttackModel {
 public:
  explicit SourceSurrogate(const nn::SourceModel& model) : model_(model) {}
  SurrogateOutput forward(const Tensor& image) const override;

 private:
  const nn::SourceModel& model_;
};

// Target model seen as a function of the Current exam with the Prior fixed.
// Features are the Target backbone embedding of the Current exam.
class TargetCurrentSurrogate final : public AttackModel {
 public:
  TargetCurrentSurrogate(const nn::TargetModel& model, const Tensor& prior);
  SurrogateOutput forward(const Tensor& image) const override;

 private:
  const nn::TargetModel& model_;
  Tensor prior_features_;
};

struct Iterate {
  Tensor image;
  std::size_t predicted = 0;
  double loss = 0.0;
  bool crossed_boundary = false;
};

struct AttackTrajectory {
  std::vector<Iterate> iterates;
};

struct AdversarialExample {
  Tensor image;
  nn::Probabilities source_prediction{};
  std::size_t selected_iterate_index = 0;
  // Surrogate-feature distance to the Prior; 0 when no Prior was involved.
  double feature_distance_to_prior = 0.0;
  // Source argmax differs from the true label.
  bool success = false;
};

std::size_t argmax(const Tensor& logits);

double feature_distance(const Tensor& a, const Tensor& b);

// Signed feature distance maximized by the distance-guided attacks:
// -||L(x') - L(prior)|| for cancer (t = 1), +||L(x') - L(prior)|| for control.
Tensor distance_loss(const Tensor& adv_features, const Tensor& prior_features, std::size_t label);

// Projection onto the epsilon ball around `clean` (under cfg.norm) and [-1, 1].
Tensor project(const Tensor& image, const Tensor& clean, const AttackConfig& cfg);

AdversarialExample fgsm(const AttackModel& model, const Tensor& x, std::size_t label, double epsilon);

AttackTrajectory ifgsm_trajectory(const AttackModel& model, const Tensor& x, std::size_t label,
                                  const AttackConfig& cfg);
std::pair<AdversarialExample, AttackTrajectory> ifgsm(const AttackModel& model, const Tensor& x, std::size_t label,
                                                      const AttackConfig& cfg);

AttackTrajectory mifgsm_trajectory(const AttackModel& model, const Tensor& x, std::size_t label,
                                   const AttackConfig& cfg);
AdversarialExample mifgsm(const AttackModel& model, const Tensor& x, std::size_t label, const AttackConfig& cfg);

AttackTrajectory pgd_trajectory(const AttackModel& model, const Tensor& x, std::size_t label,
                                const AttackConfig& cfg, std::uint64_t rng_seed);
AdversarialExample pgd(const AttackModel& model, const Tensor& x, std::size_t label, const AttackConfig& cfg,
                       std::uint64_t rng_seed);

AdversarialExample cw_l2(const AttackModel& model, const Tensor& x, std::size_t label, const AttackConfig& cfg);

enum class BaseVariant { fgsm, ifgsm };

AttackTrajectory distance_guided_trajectory(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                            const Tensor& x_prior, std::size_t label, const AttackConfig& cfg);
AdversarialExample distance_guided_attack(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                          const Tensor& x_prior, std::size_t label, const AttackConfig& cfg);

AttackTrajectory distance_reg_trajectory(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                         const Tensor& x_prior, std::size_t label, const AttackConfig& cfg);
AdversarialExample distance_reg_attack(BaseVariant variant, const AttackModel& model, const Tensor& x,
                                       const Tensor& x_prior, std::size_t label, const AttackConfig& cfg);

using FeatureFn = std::function<Tensor(const Tensor& image)>;

struct Selection {
  std::size_t index = 0;
  double distance = 0.0;
  // False when no iterate crossed the boundary and the final one was returned.
  bool crossed = false;
};

// Among boundary-crossing iterates, the one closest to the Prior feature for
// cancer (t = 1) or farthest for control (t = 0); lowest index on ties.
Selection select_adversarial_candidate(const AttackTrajectory& candidates, const Tensor& prior_feature,
                                       const FeatureFn& feature_fn, std::size_t label);

AdversarialExample knowledge_guided_attack(const AttackModel& model, const Tensor& x_current, const Tensor& x_prior,
                                           std::size_t label, const AttackConfig& cfg);

// Dispatches on cfg.attack. `sample_seed` feeds PGD's random start.
AdversarialExample run_attack(const AttackModel& model, const Tensor& x_current, const Tensor& x_prior,
                              std::size_t label, const AttackConfig& cfg, std::uint64_t sample_seed);

}  // namespace longattack::attacks
