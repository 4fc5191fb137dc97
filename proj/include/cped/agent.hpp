#pragma once

// Twin-critic deterministic actor-critic with the density-constrained actor
// objective
//   mean[ -Q1(s, pi(s)) + alpha * max(0, -log L(s, pi(s)) - epsilon) ].

#include <cstdint>
#include <utility>
#include <vector>

#include "cped/adam.hpp"
#include "cped/behavior_density.hpp"
#include "cped/dataset.hpp"
#include "cped/nn.hpp"
#include "cped/rng.hpp"
#include "json.hpp"

namespace cped::agent {

struct AgentConfig {
  std::vector<std::size_t> hidden = {256, 256};
  double gamma = 0.99;
  double tau = 0.005;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  int policy_frequency = 2;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double action_bound = 1.0;

  nlohmann::json to_json() const;
  static AgentConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct AgentState {
  AgentState() = default;
  AgentState(const AgentConfig& cfg, std::size_t state_dim, std::size_t action_dim, Rng& rng);

  AgentConfig config;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  nn::Mlp actor, critic1, critic2;
  nn::Mlp actor_target, critic1_target, critic2_target;
  Adam actor_opt, critic1_opt, critic2_opt;
  std::int64_t steps = 0;
  std::int64_t actor_updates = 0;

  // pi(s) = bound * tanh(net(s)).
  ad::Var policy(ad::Tape& tape, ad::Var s, bool trainable);
  ad::Var target_policy(ad::Tape& tape, ad::Var s) const;
  Tensor act(const Tensor& s) const;
  static ad::Var q_value(ad::Tape& tape, nn::Mlp& critic, ad::Var s, ad::Var a, bool trainable);

  nlohmann::json to_json() const;
  static AgentState from_json(const nlohmann::json& j);
};

// y = r + gamma (1 - done) min(q1, q2), per row.
Tensor td3_target_from(const Tensor& r, const Tensor& done, const Tensor& q1, const Tensor& q2,
                       double gamma);
// a~ = clip(pi'(s') + clip(N(0, sigma), -c, c), bounds); noise drawn from rng.
Tensor target_action(const AgentState& agent, const Tensor& s_next, Rng& rng);
Tensor td3_target(const AgentState& agent, const data::Batch& batch, Rng& rng);

// mean (Q(s, a) - y)^2.
ad::Var critic_loss(ad::Tape& tape, nn::Mlp& critic, const Tensor& s, const Tensor& a,
                    const Tensor& y, bool trainable = true);

struct CriticLosses {
  double critic1 = 0.0;
  double critic2 = 0.0;
};
CriticLosses critic_update(AgentState& agent, const data::Batch& batch, const Tensor& y);

// Per-row -Q1 + alpha * hinge(-log L - epsilon). Critics and flow are constants.
ad::Var actor_objective_rows(ad::Tape& tape, AgentState& agent,
                             const density::DensityService& density, const Tensor& s,
                             double alpha, double epsilon, ad::Var* neg_log_l = nullptr,
                             ad::Var* q = nullptr);
ad::Var actor_objective(ad::Tape& tape, AgentState& agent, const density::DensityService& density,
                        const Tensor& s, double alpha, double epsilon);
// Plug-in form of one row's objective.
double actor_row_objective(double q, double neg_log_l, double epsilon, double alpha);

struct ActorLosses {
  double loss = 0.0;
  double mean_q = 0.0;
  double mean_neg_log_l = 0.0;
  double mean_violation = 0.0;
  double epsilon = 0.0;
};
// epsilon comes from `rule` applied to the batch's dataset actions.
ActorLosses actor_update(AgentState& agent, const density::DensityService& density,
                         const data::Batch& batch, double alpha, const density::EpsilonRule& rule);

void soft_update(AgentState& agent);
void soft_update(AgentState& agent, double tau);

// Piecewise-constant, right-continuous in epoch.
class AlphaSchedule {
 public:
  AlphaSchedule() : AlphaSchedule({{0, 10.0}, {300, 2.0}}) {}
  explicit AlphaSchedule(std::vector<std::pair<std::int64_t, double>> entries);
  double alpha_at(std::int64_t epoch) const;
  const std::vector<std::pair<std::int64_t, double>>& entries() const { return entries_; }

  nlohmann::json to_json() const;
  static AlphaSchedule from_json(const nlohmann::json& j);

 private:
  std::vector<std::pair<std::int64_t, double>> entries_;
};

// alpha <- max(0, alpha + lr * mean violation).
double dual_alpha_step(double alpha, double lr, double mean_violation);

// BC regression loss mean |pi(s) - a|^2 over action components.
ad::Var bc_loss(ad::Tape& tape, AgentState& agent, const Tensor& s, const Tensor& a);
double bc_update(AgentState& agent, const data::Batch& batch);

}  // namespace cped::agent
