#pragma once

// Offline training drivers: density pretraining, the joint CPED loop, and the
// behavior-cloning baseline.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cped/agent.hpp"
#include "cped/behavior_density.hpp"
#include "cped/dataset.hpp"
#include "cped/envs.hpp"
#include "cped/error.hpp"
#include "cped/flow_gan.hpp"
#include "json.hpp"

namespace cped::train {

enum class AlphaMode { Schedule, Dual };

struct TrainConfig {
  flow::FlowSpec flow;  // input_dim is taken from the dataset
  flow::GanConfig gan;
  density::EpsilonMode epsilon;
  agent::AgentConfig agent;
  AlphaMode alpha_mode = AlphaMode::Schedule;
  agent::AlphaSchedule alpha_schedule;
  double dual_alpha_lr = 1e-3;
  std::size_t batch_size = 256;
  std::int64_t pretrain_steps = 20000;     // M
  std::int64_t joint_steps = 1000000;      // N
  std::int64_t flow_freeze_step = 100000;  // joint step at which the flow stops updating
  std::int64_t epoch_length = 1000;
  std::size_t eval_episodes = 10;

  void validate() const;
};

struct EpochMetrics {
  std::int64_t epoch = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::optional<double> critic_loss;
  double actor_loss = 0.0;
  std::optional<double> mean_target_q;
  std::optional<double> mean_neg_log_l_policy;
  std::optional<double> alpha;
  std::optional<double> epsilon;
};

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

// Density training stopped on persistent non-finite losses; carries the
// loss trace recorded so far.
class DivergenceError : public RuntimeFailure {
 public:
  DivergenceError(const std::string& what, std::vector<flow::GanLossReport> trace)
      : RuntimeFailure(what), trace(std::move(trace)) {}
  std::vector<flow::GanLossReport> trace;
};

struct DensityResult {
  flow::FlowGan gan;
  NormalizationStats stats;
  std::vector<flow::GanLossReport> trace;  // one entry per train step
};

// Fits a Flow-GAN to rows of `data` (raw units) for `steps` train steps.
// `rng` supplies init, jitter, batches and GAN noise via labelled streams.
DensityResult train_density(const Tensor& data, const flow::FlowSpec& spec,
                            const flow::GanConfig& gan, std::size_t batch_size, std::int64_t steps,
                            const Rng& rng, std::size_t trace_every = 1);

struct CpedResult {
  agent::AgentState agent;
  flow::FlowGan gan;
  NormalizationStats flow_stats;
  std::vector<EpochMetrics> metrics;
  std::vector<flow::GanLossReport> pretrain_trace;
};

using Progress = std::function<void(const EpochMetrics&)>;

CpedResult train_cped(const TrainConfig& config, const data::OfflineDataset& dataset,
                      std::uint64_t seed, const Progress& progress = {});

struct BcResult {
  agent::AgentState agent;
  std::vector<EpochMetrics> metrics;
};

// Runs joint_steps regression steps with the same batch size, epoch length and
// evaluation protocol as train_cped.
BcResult train_bc(const TrainConfig& config, const data::OfflineDataset& dataset,
                  std::uint64_t seed, const Progress& progress = {});

// Deterministic-actor evaluation; episode starts come from rng.
envs::EvalResult evaluate_agent(const agent::AgentState& agent, const envs::Env& env,
                                std::size_t episodes, const Rng& rng);

// Flow checkpoint: the Flow-GAN (model, critic, optimizers, kind) plus the
// normalization stats it was fit under.
nlohmann::json flow_checkpoint(const flow::FlowGan& gan, const NormalizationStats& stats,
                               std::size_t state_dim);
density::DensityService load_density(const nlohmann::json& checkpoint);

}  // namespace cped::train
