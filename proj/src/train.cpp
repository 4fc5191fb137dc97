#include "cped/train.hpp"

#include <cmath>
#include <sstream>

#include "cped/error.hpp"
#include "cped/serialize.hpp"

namespace cped::train {

namespace {

constexpr int kMaxConsecutiveFailures = 100;

// Counts consecutive numeric failures; throws once the limit is reached.
class FailureGuard {
 public:
  explicit FailureGuard(std::string phase) : phase_(std::move(phase)) {}
  void ok() { run_ = 0; }
  void failed(std::int64_t step, const std::exception& e) {
    last_ = e.what();
    if (++run_ >= kMaxConsecutiveFailures) {
      throw RuntimeFailure(phase_ + ": losses non-finite for " + std::to_string(run_) +
                           " consecutive steps (last at step " + std::to_string(step) +
                           "): " + last_);
    }
  }

 private:
  std::string phase_;
  std::string last_;
  int run_ = 0;
};

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Tensor out(idx.size(), t.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = t.row_span(idx[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(batch);
  for (std::size_t& i : idx) i = rng.index(n);
  return idx;
}

struct Mean {
  double sum = 0.0;
  std::int64_t count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  std::optional<double> value() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

void check_dataset(const data::OfflineDataset& d, std::size_t batch_size) {
  if (d.size() == 0) throw ValidationError("training dataset is empty");
  if (d.meta().normalized) throw ValidationError("training expects a raw (unnormalized) dataset");
  if (batch_size > d.size()) {
    throw ValidationError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                          std::to_string(d.size()));
  }
}

}  // namespace

void TrainConfig::validate() const {
  agent.validate();
  if (batch_size < 2) throw ValidationError("train.batch_size must be >= 2");
  if (pretrain_steps < 0) throw ValidationError("train.pretrain_steps must be >= 0");
  if (joint_steps < 0) throw ValidationError("train.joint_steps must be >= 0");
  if (flow_freeze_step < 0) throw ValidationError("train.flow_freeze_step must be >= 0");
  if (epoch_length < 1) throw ValidationError("train.epoch_length must be >= 1");
  if (eval_episodes < 1) throw ValidationError("train.eval_episodes must be >= 1");
  if (!(dual_alpha_lr >= 0.0)) throw ValidationError("train.dual_alpha_lr must be >= 0");
  if (!(gan.lambda >= 0.0)) throw ValidationError("gan.lambda must be >= 0");
  if (flow.coupling_layers < 1) throw ValidationError("flow.coupling_layers must be >= 1");
  if (!(epsilon.quantile >= 0.0 && epsilon.quantile <= 1.0)) {
    throw ValidationError("epsilon.quantile must lie in [0, 1]");
  }
  if (flow.hidden_width < 1) throw ValidationError("flow.hidden_width must be >= 1");
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out =
      "epoch,mean_return,std_return,critic_loss,actor_loss,mean_target_q,mean_neg_logL_policy,"
      "alpha,epsilon\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const EpochMetrics& m : rows) {
    out += std::to_string(m.epoch) + ',' + format_double(m.mean_return) + ',' +
           format_double(m.std_return) + ',' + opt(m.critic_loss) + ',' +
           format_double(m.actor_loss) + ',' + opt(m.mean_target_q) + ',' +
           opt(m.mean_neg_log_l_policy) + ',' + opt(m.alpha) + ',' + opt(m.epsilon) + '\n';
  }
  return out;
}

DensityResult train_density(const Tensor& data, const flow::FlowSpec& spec_in,
                            const flow::GanConfig& gan_cfg, std::size_t batch_size,
                            std::int64_t steps, const Rng& rng, std::size_t trace_every) {
  if (data.rows() == 0) throw ValidationError("density training data is empty");
  if (batch_size == 0 || batch_size > data.rows()) {
    throw ValidationError("density batch size must be in [1, " + std::to_string(data.rows()) + "]");
  }
  Rng jitter = rng.stream("jitter");
  density::FlowData fd = density::prepare_flow_data(data, jitter);
  flow::FlowSpec spec = spec_in;
  spec.input_dim = data.cols();
  Rng init = rng.stream("flow.init");
  DensityResult out{flow::FlowGan(flow::FlowModel(spec, init), gan_cfg, init), fd.stats, {}};
  Rng batches = rng.stream("flow.batches");
  Rng noise = rng.stream("flow.gan");
  FailureGuard guard("density training");
  for (std::int64_t step = 0; step < steps; ++step) {
    const auto idx = sample_indices(fd.normalized.rows(), batch_size, batches);
    try {
      flow::GanLossReport r = out.gan.train_step(gather_rows(fd.normalized, idx), noise);
      guard.ok();
      if (trace_every > 0 && step % static_cast<std::int64_t>(trace_every) == 0) {
        out.trace.push_back(r);
      }
    } catch (const NumericError& e) {
      try {
        guard.failed(step, e);
      } catch (const RuntimeFailure& f) {
        throw DivergenceError(f.what(), std::move(out.trace));
      }
    }
  }
  return out;
}

envs::EvalResult evaluate_agent(const agent::AgentState& agent, const envs::Env& env,
                                std::size_t episodes, const Rng& rng) {
  return envs::evaluate_policy(
      env,
      [&](std::span<const double> s) {
        return agent.act(Tensor::row(s)).vector();
      },
      episodes, rng);
}

CpedResult train_cped(const TrainConfig& config, const data::OfflineDataset& dataset,
                      std::uint64_t seed, const Progress& progress) {
  config.validate();
  check_dataset(dataset, config.batch_size);
  const std::size_t sd = dataset.meta().state_dim, ad_ = dataset.meta().action_dim;
  const auto env = envs::make_env(dataset.meta().env_id);
  const Rng root(seed);

  DensityResult dens = train_density(dataset.state_actions(), config.flow, config.gan,
                                     config.batch_size, config.pretrain_steps, root);
  CpedResult out{agent::AgentState(), std::move(dens.gan), dens.stats, {}, std::move(dens.trace)};
  Rng agent_init = root.stream("agent.init");
  out.agent = agent::AgentState(config.agent, sd, ad_, agent_init);

  // Normalized flow inputs for the joint phase, same jitter as pretraining.
  Rng jitter = root.stream("jitter");
  const density::FlowData fd = density::prepare_flow_data(dataset.state_actions(), jitter);
  const density::DensityService svc = density::DensityService::view(out.gan.model(), fd.stats, sd);
  density::EpsilonRule rule(config.epsilon);
  rule.calibrate(svc, dataset.states(), dataset.actions());

  Rng batches = root.stream("joint.batches");
  Rng gan_noise = root.stream("joint.gan");
  Rng target_noise = root.stream("target_noise");
  const Rng eval_rng = root.stream("eval");
  double alpha = config.alpha_schedule.alpha_at(0);

  FailureGuard guard("joint training");
  Mean critic, target_q, actor, neg_ll, alpha_m, eps_m;
  for (std::int64_t step = 0; step < config.joint_steps; ++step) {
    const std::int64_t epoch = step / config.epoch_length;
    const auto idx = sample_indices(dataset.size(), config.batch_size, batches);
    const data::Batch batch = dataset.rows(idx);
    try {
      if (step < config.flow_freeze_step) out.gan.train_step(gather_rows(fd.normalized, idx), gan_noise);
      const Tensor y = agent::td3_target(out.agent, batch, target_noise);
      const agent::CriticLosses cl = agent::critic_update(out.agent, batch, y);
      critic.add(0.5 * (cl.critic1 + cl.critic2));
      double ysum = 0.0;
      for (double v : y.data()) ysum += v;
      target_q.add(ysum / static_cast<double>(y.size()));
      ++out.agent.steps;
      if (out.agent.steps % config.agent.policy_frequency == 0) {
        if (config.alpha_mode == AlphaMode::Schedule) alpha = config.alpha_schedule.alpha_at(epoch);
        const agent::ActorLosses al = agent::actor_update(out.agent, svc, batch, alpha, rule);
        agent::soft_update(out.agent);
        actor.add(al.loss);
        neg_ll.add(al.mean_neg_log_l);
        alpha_m.add(alpha);
        eps_m.add(al.epsilon);
        if (config.alpha_mode == AlphaMode::Dual) {
          alpha = agent::dual_alpha_step(alpha, config.dual_alpha_lr, al.mean_violation);
        }
      }
      guard.ok();
    } catch (const NumericError& e) {
      guard.failed(step, e);
    }
    const bool epoch_end = (step + 1) % config.epoch_length == 0 || step + 1 == config.joint_steps;
    if (epoch_end) {
      const envs::EvalResult ev = evaluate_agent(out.agent, *env, config.eval_episodes, eval_rng);
      EpochMetrics m;
      m.epoch = epoch;
      m.mean_return = ev.mean_return;
      m.std_return = ev.std_return;
      m.critic_loss = critic.value();
      m.actor_loss = actor.value().value_or(0.0);
      m.mean_target_q = target_q.value();
      m.mean_neg_log_l_policy = neg_ll.value();
      m.alpha = alpha_m.value();
      m.epsilon = eps_m.value();
      out.metrics.push_back(m);
      if (progress) progress(m);
      critic = target_q = actor = neg_ll = alpha_m = eps_m = Mean{};
    }
  }
  return out;
}

BcResult train_bc(const TrainConfig& config, const data::OfflineDataset& dataset,
                  std::uint64_t seed, const Progress& progress) {
  config.validate();
  check_dataset(dataset, config.batch_size);
  const auto env = envs::make_env(dataset.meta().env_id);
  const Rng root(seed);
  Rng agent_init = root.stream("agent.init");
  BcResult out{agent::AgentState(config.agent, dataset.meta().state_dim,
                                 dataset.meta().action_dim, agent_init),
               {}};
  Rng batches = root.stream("bc.batches");
  const Rng eval_rng = root.stream("eval");
  FailureGuard guard("behavior cloning");
  Mean loss;
  for (std::int64_t step = 0; step < config.joint_steps; ++step) {
    const data::Batch batch = dataset.sample_batch(config.batch_size, batches);
    try {
      loss.add(agent::bc_update(out.agent, batch));
      ++out.agent.steps;
      guard.ok();
    } catch (const NumericError& e) {
      guard.failed(step, e);
    }
    if ((step + 1) % config.epoch_length == 0 || step + 1 == config.joint_steps) {
      const envs::EvalResult ev = evaluate_agent(out.agent, *env, config.eval_episodes, eval_rng);
      EpochMetrics m;
      m.epoch = step / config.epoch_length;
      m.mean_return = ev.mean_return;
      m.std_return = ev.std_return;
      m.actor_loss = loss.value().value_or(0.0);
      out.metrics.push_back(m);
      if (progress) progress(m);
      loss = Mean{};
    }
  }
  return out;
}

nlohmann::json flow_checkpoint(const flow::FlowGan& gan, const NormalizationStats& stats,
                               std::size_t state_dim) {
  return {{"format", "cped-flow"},
          {"version", 1},
          {"state_dim", state_dim},
          {"stats", stats.to_json()},
          {"gan", gan.to_json()}};
}

density::DensityService load_density(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "cped-flow" || j.at("version").get<int>() != 1) {
      throw ValidationError("not a version-1 flow checkpoint");
    }
    flow::FlowGan gan = flow::FlowGan::from_json(j.at("gan"));
    return density::DensityService(gan.model(), NormalizationStats::from_json(j.at("stats")),
                                   j.at("state_dim").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("flow checkpoint: ") + e.what());
  }
}

}  // namespace cped::train
