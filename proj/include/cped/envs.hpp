#pragma once

// Continuous-control toys and the scripted behavior policies that generate
// offline data for them.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cped/rng.hpp"

namespace cped::envs {

struct StepResult {
  std::vector<double> s_next;
  double reward = 0.0;
  bool done = false;
};

enum class BoundsPolicy { ClipAndWarn, Error };

class Env {
 public:
  virtual ~Env() = default;
  virtual std::string id() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t horizon() const = 0;
  // Largest |reward| any transition can produce.
  virtual double max_abs_reward() const = 0;

  virtual std::vector<double> reset(Rng& rng) const = 0;
  // `t` is the number of steps already taken in the episode. Actions outside
  // [-1, 1] are clipped (with a one-time warning) or rejected per policy.
  virtual StepResult step(std::span<const double> s, std::span<const double> a,
                          std::size_t t) const = 0;

  void set_bounds_policy(BoundsPolicy p) { bounds_ = p; }
  BoundsPolicy bounds_policy() const { return bounds_; }
  std::size_t clipped_actions() const { return clipped_; }

 protected:
  // Applies the bounds policy; returns the action actually used.
  std::vector<double> checked_action(std::span<const double> a) const;

 private:
  BoundsPolicy bounds_ = BoundsPolicy::ClipAndWarn;
  mutable std::size_t clipped_ = 0;
};

class PointMass2D final : public Env {
 public:
  static constexpr double kDt = 0.05;
  static constexpr std::size_t kHorizon = 200;
  static constexpr double kGoalX = 0.8;
  static constexpr double kGoalY = 0.8;
  static constexpr double kGoalRadius = 0.05;

  std::string id() const override { return "pointmass2d"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 2; }
  std::size_t horizon() const override { return kHorizon; }
  // Farthest point of [-1, 1]^2 from the goal.
  double max_abs_reward() const override;

  // State = (x, y, vx, vy); start position uniform in [-1, -0.5]^2, at rest.
  std::vector<double> reset(Rng& rng) const override;
  StepResult step(std::span<const double> s, std::span<const double> a,
                  std::size_t t) const override;
};

std::unique_ptr<Env> make_env(const std::string& id);

// Upper bound on |discounted return| over one episode: max|r| sum_{t<H} gamma^t.
double discounted_return_bound(const Env& env, double gamma);

enum class BehaviorKind { Random, Medium, Expert, MediumReplayMix };

std::string to_string(BehaviorKind kind);
BehaviorKind behavior_kind_from_string(const std::string& s);

// PD gains: a = clip(k (goal - p) - 2 sqrt(k) v + N(0, sigma^2)).
struct PdGains {
  double gain;
  double noise;
};
inline constexpr PdGains kMediumGains{0.5, 0.3};
inline constexpr PdGains kExpertGains{1.0, 0.05};

class BehaviorPolicy {
 public:
  BehaviorPolicy(BehaviorKind kind, const Env& env);
  // Called once per episode; MediumReplayMix picks Random or Medium here.
  void begin_episode(Rng& rng);
  std::vector<double> act(std::span<const double> s, Rng& rng) const;
  BehaviorKind kind() const { return kind_; }
  BehaviorKind episode_kind() const { return episode_kind_; }

 private:
  BehaviorKind kind_;
  BehaviorKind episode_kind_;
  std::size_t action_dim_;
};

using PolicyFn = std::function<std::vector<double>(std::span<const double> s)>;

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;  // population std over episodes
  std::vector<double> returns;
};

// Undiscounted episode returns; episode e starts from rng.stream(e).
EvalResult evaluate_policy(const Env& env, const PolicyFn& policy, std::size_t episodes,
                           const Rng& rng);
// Same protocol for a scripted behavior policy (its noise included).
EvalResult evaluate_behavior(const Env& env, BehaviorKind kind, std::size_t episodes,
                             const Rng& rng);

}  // namespace cped::envs
