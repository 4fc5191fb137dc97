#include "cped/agent.hpp"

#include <algorithm>
#include <cmath>

#include "cped/error.hpp"

namespace cped::agent {

nlohmann::json AgentConfig::to_json() const {
  return {{"hidden", hidden},
          {"gamma", gamma},
          {"tau", tau},
          {"policy_noise", policy_noise},
          {"noise_clip", noise_clip},
          {"policy_frequency", policy_frequency},
          {"actor_lr", actor_lr},
          {"critic_lr", critic_lr},
          {"action_bound", action_bound}};
}

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.gamma = j.at("gamma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.policy_noise = j.at("policy_noise").get<double>();
  c.noise_clip = j.at("noise_clip").get<double>();
  c.policy_frequency = j.at("policy_frequency").get<int>();
  c.actor_lr = j.at("actor_lr").get<double>();
  c.critic_lr = j.at("critic_lr").get<double>();
  c.action_bound = j.at("action_bound").get<double>();
  c.validate();
  return c;
}

void AgentConfig::validate() const {
  if (hidden.empty()) throw ValidationError("agent.hidden must list at least one width");
  for (std::size_t h : hidden) {
    if (h == 0) throw ValidationError("agent.hidden widths must be positive");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("agent.gamma must lie in [0, 1)");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("agent.tau must lie in [0, 1]");
  if (!(policy_noise >= 0.0)) throw ValidationError("agent.policy_noise must be >= 0");
  if (!(noise_clip >= 0.0)) throw ValidationError("agent.noise_clip must be >= 0");
  if (policy_frequency < 1) throw ValidationError("agent.policy_frequency must be >= 1");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ValidationError("agent learning rates must be > 0");
  if (!(action_bound > 0.0)) throw ValidationError("agent.action_bound must be > 0");
}

AgentState::AgentState(const AgentConfig& cfg, std::size_t sd, std::size_t ad_, Rng& rng)
    : config(cfg), state_dim(sd), action_dim(ad_) {
  config.validate();
  nn::MlpSpec actor_spec{sd, cfg.hidden, ad_, nn::Activation::Relu, nn::Activation::Identity};
  nn::MlpSpec critic_spec{sd + ad_, cfg.hidden, 1, nn::Activation::Relu, nn::Activation::Identity};
  Rng a = rng.stream("actor"), c1 = rng.stream("critic1"), c2 = rng.stream("critic2");
  actor = nn::Mlp(actor_spec, a, "actor");
  critic1 = nn::Mlp(critic_spec, c1, "critic1");
  critic2 = nn::Mlp(critic_spec, c2, "critic2");
  actor_target = actor;
  critic1_target = critic1;
  critic2_target = critic2;
  actor_opt = Adam(AdamConfig{cfg.actor_lr});
  critic1_opt = Adam(AdamConfig{cfg.critic_lr});
  critic2_opt = Adam(AdamConfig{cfg.critic_lr});
}

ad::Var AgentState::policy(ad::Tape& tape, ad::Var s, bool trainable) {
  nn::ForwardOptions opts;
  opts.trainable = trainable;
  return ad::scale(ad::tanh(actor.forward(tape, s, opts)), config.action_bound);
}

ad::Var AgentState::target_policy(ad::Tape& tape, ad::Var s) const {
  return ad::scale(ad::tanh(actor_target.forward_frozen(tape, s)), config.action_bound);
}

Tensor AgentState::act(const Tensor& s) const {
  ad::Tape tape;
  return ad::scale(ad::tanh(actor.forward_frozen(tape, tape.constant(s))), config.action_bound)
      .value();
}

ad::Var AgentState::q_value(ad::Tape& tape, nn::Mlp& critic, ad::Var s, ad::Var a,
                            bool trainable) {
  nn::ForwardOptions opts;
  opts.trainable = trainable;
  return critic.forward(tape, ad::concat_cols(s, a), opts);
}

nlohmann::json AgentState::to_json() const {
  return {{"config", config.to_json()},
          {"state_dim", state_dim},
          {"action_dim", action_dim},
          {"actor", actor.to_json()},
          {"critic1", critic1.to_json()},
          {"critic2", critic2.to_json()},
          {"actor_target", actor_target.to_json()},
          {"critic1_target", critic1_target.to_json()},
          {"critic2_target", critic2_target.to_json()},
          {"actor_optimizer", actor_opt.to_json()},
          {"critic1_optimizer", critic1_opt.to_json()},
          {"critic2_optimizer", critic2_opt.to_json()},
          {"steps", steps},
          {"actor_updates", actor_updates}};
}

AgentState AgentState::from_json(const nlohmann::json& j) {
  AgentState a;
  a.config = AgentConfig::from_json(j.at("config"));
  a.state_dim = j.at("state_dim").get<std::size_t>();
  a.action_dim = j.at("action_dim").get<std::size_t>();
  a.actor = nn::Mlp::from_json(j.at("actor"));
  a.critic1 = nn::Mlp::from_json(j.at("critic1"));
  a.critic2 = nn::Mlp::from_json(j.at("critic2"));
  a.actor_target = nn::Mlp::from_json(j.at("actor_target"));
  a.critic1_target = nn::Mlp::from_json(j.at("critic1_target"));
  a.critic2_target = nn::Mlp::from_json(j.at("critic2_target"));
  a.actor_opt = Adam::from_json(j.at("actor_optimizer"));
  a.critic1_opt = Adam::from_json(j.at("critic1_optimizer"));
  a.critic2_opt = Adam::from_json(j.at("critic2_optimizer"));
  a.steps = j.at("steps").get<std::int64_t>();
  a.actor_updates = j.at("actor_updates").get<std::int64_t>();
  if (a.actor.spec().input != a.state_dim || a.actor.spec().output != a.action_dim ||
      a.critic1.spec().input != a.state_dim + a.action_dim) {
    throw ValidationError("agent checkpoint: network shapes disagree with dims");
  }
  return a;
}

Tensor td3_target_from(const Tensor& r, const Tensor& done, const Tensor& q1, const Tensor& q2,
                       double gamma) {
  const std::size_t n = r.rows();
  if (done.rows() != n || q1.rows() != n || q2.rows() != n) {
    throw ValidationError("td3_target: row counts disagree");
  }
  Tensor y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = done[i] != 0.0 ? r[i] : r[i] + gamma * std::min(q1[i], q2[i]);
  }
  return y;
}

Tensor target_action(const AgentState& agent, const Tensor& s_next, Rng& rng) {
  ad::Tape tape;
  Tensor a = agent.target_policy(tape, tape.constant(s_next)).value();
  const double bound = agent.config.action_bound;
  const double sigma = agent.config.policy_noise, c = agent.config.noise_clip;
  for (double& v : a.data()) {
    const double noise = sigma > 0.0 ? std::clamp(sigma * rng.normal(), -c, c) : 0.0;
    v = std::clamp(v + noise, -bound, bound);
  }
  return a;
}

Tensor td3_target(const AgentState& agent, const data::Batch& batch, Rng& rng) {
  const Tensor a_next = target_action(agent, batch.s_next, rng);
  ad::Tape tape;
  ad::Var sa = ad::concat_cols(tape.constant(batch.s_next), tape.constant(a_next));
  const Tensor q1 = agent.critic1_target.forward_frozen(tape, sa).value();
  const Tensor q2 = agent.critic2_target.forward_frozen(tape, sa).value();
  return td3_target_from(batch.r, batch.done, q1, q2, agent.config.gamma);
}

ad::Var critic_loss(ad::Tape& tape, nn::Mlp& critic, const Tensor& s, const Tensor& a,
                    const Tensor& y, bool trainable) {
  ad::Var q = AgentState::q_value(tape, critic, tape.constant(s), tape.constant(a), trainable);
  return ad::mean(ad::square(ad::sub(q, tape.constant(y))));
}

CriticLosses critic_update(AgentState& agent, const data::Batch& batch, const Tensor& y) {
  require_finite(y, "critic target");
  if (y.rows() != batch.size() || y.cols() != 1) throw ValidationError("critic_update: y shape");
  CriticLosses out;
  auto one = [&](nn::Mlp& critic, Adam& opt) {
    ad::Tape tape;
    ad::Var loss = critic_loss(tape, critic, batch.s, batch.a, y);
    tape.backward(loss);
    auto params = critic.parameters();
    opt.step(params, tape.gradients(params));
    return loss.value().item();
  };
  out.critic1 = one(agent.critic1, agent.critic1_opt);
  out.critic2 = one(agent.critic2, agent.critic2_opt);
  return out;
}

ad::Var actor_objective_rows(ad::Tape& tape, AgentState& agent,
                             const density::DensityService& density, const Tensor& s,
                             double alpha, double epsilon, ad::Var* neg_log_l, ad::Var* q_out) {
  if (!(alpha >= 0.0)) throw ValidationError("actor objective: alpha must be >= 0");
  ad::Var sv = tape.constant(s);
  ad::Var a = agent.policy(tape, sv, true);
  ad::Var q = AgentState::q_value(tape, agent.critic1, sv, a, false);
  if (q_out != nullptr) *q_out = q;
  ad::Var rows = ad::scale(q, -1.0);
  if (alpha > 0.0 || neg_log_l != nullptr) {
    ad::Var neg = ad::scale(density.log_likelihood(tape, sv, a), -1.0);
    if (neg_log_l != nullptr) *neg_log_l = neg;
    if (alpha > 0.0) {
      rows = ad::add(rows, ad::scale(density::constraint_violation(neg, epsilon), alpha));
    }
  }
  return rows;
}

ad::Var actor_objective(ad::Tape& tape, AgentState& agent, const density::DensityService& density,
                        const Tensor& s, double alpha, double epsilon) {
  return ad::mean(actor_objective_rows(tape, agent, density, s, alpha, epsilon));
}

double actor_row_objective(double q, double neg_log_l, double epsilon, double alpha) {
  return -q + alpha * std::max(0.0, neg_log_l - epsilon);
}

ActorLosses actor_update(AgentState& agent, const density::DensityService& density,
                         const data::Batch& batch, double alpha, const density::EpsilonRule& rule) {
  ActorLosses out;
  out.epsilon = rule.threshold(density, batch.s, batch.a);
  if (!std::isfinite(out.epsilon)) throw NumericError("actor_update: non-finite epsilon");
  ad::Tape tape;
  ad::Var neg, q;
  ad::Var rows = actor_objective_rows(tape, agent, density, batch.s, alpha, out.epsilon, &neg, &q);
  ad::Var loss = ad::mean(rows);
  tape.backward(loss);
  auto params = agent.actor.parameters();
  agent.actor_opt.step(params, tape.gradients(params));
  ++agent.actor_updates;
  out.loss = loss.value().item();
  out.mean_q = ad::mean(q).value().item();
  out.mean_neg_log_l = ad::mean(neg).value().item();
  out.mean_violation = ad::mean(density::constraint_violation(neg, out.epsilon)).value().item();
  return out;
}

void soft_update(AgentState& agent, double tau) {
  nn::soft_update(agent.actor_target, agent.actor, tau);
  nn::soft_update(agent.critic1_target, agent.critic1, tau);
  nn::soft_update(agent.critic2_target, agent.critic2, tau);
}

void soft_update(AgentState& agent) { soft_update(agent, agent.config.tau); }

AlphaSchedule::AlphaSchedule(std::vector<std::pair<std::int64_t, double>> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty() || entries_.front().first != 0) {
    throw ValidationError("alpha schedule must start with an entry at epoch 0");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!(entries_[i].second >= 0.0) || !std::isfinite(entries_[i].second)) {
      throw ValidationError("alpha schedule values must be finite and >= 0");
    }
    if (i > 0 && entries_[i].first <= entries_[i - 1].first) {
      throw ValidationError("alpha schedule start epochs must be strictly increasing");
    }
  }
}

double AlphaSchedule::alpha_at(std::int64_t epoch) const {
  if (epoch < 0) throw ValidationError("alpha_at: epoch must be >= 0");
  double alpha = entries_.front().second;
  for (const auto& [start, value] : entries_) {
    if (start > epoch) break;
    alpha = value;
  }
  return alpha;
}

nlohmann::json AlphaSchedule::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [start, value] : entries_) arr.push_back({start, value});
  return arr;
}

AlphaSchedule AlphaSchedule::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("alpha schedule must be an array of [epoch, alpha] pairs");
  std::vector<std::pair<std::int64_t, double>> entries;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) {
      throw ValidationError("alpha schedule entries must be [epoch, alpha] pairs");
    }
    entries.emplace_back(e[0].get<std::int64_t>(), e[1].get<double>());
  }
  return AlphaSchedule(std::move(entries));
}

double dual_alpha_step(double alpha, double lr, double mean_violation) {
  return std::max(0.0, alpha + lr * mean_violation);
}

ad::Var bc_loss(ad::Tape& tape, AgentState& agent, const Tensor& s, const Tensor& a) {
  ad::Var pi = agent.policy(tape, tape.constant(s), true);
  return ad::mean(ad::square(ad::sub(pi, tape.constant(a))));
}

double bc_update(AgentState& agent, const data::Batch& batch) {
  ad::Tape tape;
  ad::Var loss = bc_loss(tape, agent, batch.s, batch.a);
  tape.backward(loss);
  auto params = agent.actor.parameters();
  agent.actor_opt.step(params, tape.gradients(params));
  ++agent.actor_updates;
  return loss.value().item();
}

}  // namespace cped::agent
