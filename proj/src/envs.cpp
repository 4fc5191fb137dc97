#include "cped/envs.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "cped/error.hpp"

namespace cped::envs {

std::vector<double> Env::checked_action(std::span<const double> a) const {
  if (a.size() != action_dim()) {
    throw ValidationError(id() + ": action has " + std::to_string(a.size()) +
                          " components, expected " + std::to_string(action_dim()));
  }
  std::vector<double> out(a.begin(), a.end());
  bool clipped = false;
  for (double& v : out) {
    if (!std::isfinite(v)) throw NumericError(id() + ": non-finite action");
    if (v < -1.0 || v > 1.0) {
      if (bounds_ == BoundsPolicy::Error) {
        throw ValidationError(id() + ": action component " + std::to_string(v) +
                              " outside [-1, 1]");
      }
      v = std::clamp(v, -1.0, 1.0);
      clipped = true;
    }
  }
  if (clipped && clipped_++ == 0) {
    std::cerr << "warning: " << id() << ": out-of-bounds action clipped to [-1, 1]\n";
  }
  return out;
}

double PointMass2D::max_abs_reward() const {
  return std::hypot(1.0 + kGoalX, 1.0 + kGoalY);
}

std::vector<double> PointMass2D::reset(Rng& rng) const {
  return {rng.uniform(-1.0, -0.5), rng.uniform(-1.0, -0.5), 0.0, 0.0};
}

StepResult PointMass2D::step(std::span<const double> s, std::span<const double> a,
                             std::size_t t) const {
  if (s.size() != 4) throw ValidationError("pointmass2d: state must have 4 components");
  const std::vector<double> act = checked_action(a);
  StepResult out;
  out.s_next.resize(4);
  out.s_next[0] = std::clamp(s[0] + kDt * s[2], -1.0, 1.0);
  out.s_next[1] = std::clamp(s[1] + kDt * s[3], -1.0, 1.0);
  out.s_next[2] = std::clamp(s[2] + kDt * act[0], -1.0, 1.0);
  out.s_next[3] = std::clamp(s[3] + kDt * act[1], -1.0, 1.0);
  const double dist = std::hypot(out.s_next[0] - kGoalX, out.s_next[1] - kGoalY);
  out.reward = -dist;
  out.done = t + 1 >= kHorizon || dist < kGoalRadius;
  return out;
}

std::unique_ptr<Env> make_env(const std::string& id) {
  if (id == "pointmass2d") return std::make_unique<PointMass2D>();
  throw ValidationError("unknown env '" + id + "' (expected pointmass2d)");
}

double discounted_return_bound(const Env& env, double gamma) {
  const double h = static_cast<double>(env.horizon());
  const double geom = gamma == 1.0 ? h : (1.0 - std::pow(gamma, h)) / (1.0 - gamma);
  return env.max_abs_reward() * geom;
}

std::string to_string(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::Random: return "random";
    case BehaviorKind::Medium: return "medium";
    case BehaviorKind::Expert: return "expert";
    case BehaviorKind::MediumReplayMix: return "medium_replay_mix";
  }
  return "?";
}

BehaviorKind behavior_kind_from_string(const std::string& s) {
  if (s == "random") return BehaviorKind::Random;
  if (s == "medium") return BehaviorKind::Medium;
  if (s == "expert") return BehaviorKind::Expert;
  if (s == "medium_replay_mix") return BehaviorKind::MediumReplayMix;
  throw ValidationError("unknown behavior kind '" + s +
                        "' (expected random, medium, expert or medium_replay_mix)");
}

BehaviorPolicy::BehaviorPolicy(BehaviorKind kind, const Env& env)
    : kind_(kind), episode_kind_(kind), action_dim_(env.action_dim()) {
  if (kind != BehaviorKind::Random && env.id() != "pointmass2d") {
    throw ValidationError("scripted controllers are defined for pointmass2d only");
  }
}

void BehaviorPolicy::begin_episode(Rng& rng) {
  if (kind_ == BehaviorKind::MediumReplayMix) {
    episode_kind_ = rng.uniform() < 0.5 ? BehaviorKind::Random : BehaviorKind::Medium;
  }
}

std::vector<double> BehaviorPolicy::act(std::span<const double> s, Rng& rng) const {
  std::vector<double> a(action_dim_);
  if (episode_kind_ == BehaviorKind::Random) {
    for (double& v : a) v = rng.uniform(-1.0, 1.0);
    return a;
  }
  const PdGains g = episode_kind_ == BehaviorKind::Expert ? kExpertGains : kMediumGains;
  const double damping = 2.0 * std::sqrt(g.gain);
  const double goal[2] = {PointMass2D::kGoalX, PointMass2D::kGoalY};
  for (std::size_t i = 0; i < 2; ++i) {
    const double u = g.gain * (goal[i] - s[i]) - damping * s[2 + i] + g.noise * rng.normal();
    a[i] = std::clamp(u, -1.0, 1.0);
  }
  return a;
}

namespace {

EvalResult summarize(std::vector<double> returns) {
  EvalResult r;
  const double n = static_cast<double>(returns.size());
  for (double v : returns) r.mean_return += v;
  r.mean_return /= n;
  for (double v : returns) r.std_return += (v - r.mean_return) * (v - r.mean_return);
  r.std_return = std::sqrt(r.std_return / n);
  r.returns = std::move(returns);
  return r;
}

}  // namespace

EvalResult evaluate_policy(const Env& env, const PolicyFn& policy, std::size_t episodes,
                           const Rng& rng) {
  if (episodes == 0) throw ValidationError("evaluate: need at least one episode");
  std::vector<double> returns;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng ep = rng.stream(e);
    std::vector<double> s = env.reset(ep);
    double total = 0.0;
    for (std::size_t t = 0;; ++t) {
      StepResult st = env.step(s, policy(s), t);
      total += st.reward;
      s = std::move(st.s_next);
      if (st.done) break;
    }
    returns.push_back(total);
  }
  return summarize(std::move(returns));
}

EvalResult evaluate_behavior(const Env& env, BehaviorKind kind, std::size_t episodes,
                             const Rng& rng) {
  if (episodes == 0) throw ValidationError("evaluate: need at least one episode");
  BehaviorPolicy pi(kind, env);
  std::vector<double> returns;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng ep = rng.stream(e);
    pi.begin_episode(ep);
    std::vector<double> s = env.reset(ep);
    double total = 0.0;
    for (std::size_t t = 0;; ++t) {
      StepResult st = env.step(s, pi.act(s, ep), t);
      total += st.reward;
      s = std::move(st.s_next);
      if (st.done) break;
    }
    returns.push_back(total);
  }
  return summarize(std::move(returns));
}

}  // namespace cped::envs
