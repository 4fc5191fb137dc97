#pragma once

// Offline analyses: the two-dimensional toy density experiment, the
// sample-size KL check, and exact policy iteration on a gridworld.

#include <cstdint>
#include <functional>
#include <vector>

#include "cped/config.hpp"
#include "cped/rng.hpp"
#include "cped/tensor.hpp"
#include "json.hpp"

namespace cped::harness {

// Ground-truth densities for the toy settings, in closed form.
class ToyDistribution {
 public:
  explicit ToyDistribution(ToySetting setting);
  double log_density(double x, double y) const;
  Tensor log_density(const Tensor& xy) const;  // n x 1
  Tensor sample(std::size_t n, Rng& rng) const;
  ToySetting setting() const { return setting_; }

 private:
  ToySetting setting_;
  std::vector<std::pair<double, double>> means_;
};

// E[log p*(X)] for X ~ p*: closed form for one Gaussian, midpoint
// quadrature on a fine grid for the mixture.
double expected_log_density(ToySetting setting);

// Full-covariance Gaussian fit by maximum likelihood; the moment-matched
// baseline.
struct GaussianFit {
  double mx = 0.0, my = 0.0;
  double sxx = 1.0, sxy = 0.0, syy = 1.0;
  static GaussianFit fit(const Tensor& xy);
  Tensor log_density(const Tensor& xy) const;
};

double mean_of(const Tensor& t);

std::string loss_trace_csv(const std::vector<flow::GanLossReport>& trace);

struct ToyReport {
  ToySetting setting = ToySetting::Mixture;
  std::size_t train_samples = 0;
  std::size_t heldout_samples = 0;
  double lambda = 0.0;
  double model_mean_log_likelihood = 0.0;
  double truth_mean_log_likelihood = 0.0;  // analytic p* on the held-out samples
  double truth_expected_log_likelihood = 0.0;
  double gaussian_baseline_mean_log_likelihood = 0.0;
  bool model_beats_baseline = false;
  std::vector<flow::GanLossReport> trace;

  nlohmann::json to_json() const;
};

ToyReport toy_density_experiment(const RunConfig& config, std::uint64_t seed);

struct KlEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

// Monte-Carlo KL(p* || q) = mean over samples x ~ p* of log p*(x) - log q(x).
KlEstimate kl_estimate(const Tensor& samples, const std::function<Tensor(const Tensor&)>& log_p_star,
                       const std::function<Tensor(const Tensor&)>& log_q);

struct KlRateRow {
  std::size_t n = 0;
  std::vector<KlEstimate> per_seed;
  double median = 0.0;
  double median_standard_error = 0.0;  // largest per-seed SE at this n
};

struct KlRateReport {
  ToySetting setting = ToySetting::Mixture;
  std::vector<KlRateRow> rows;
  bool non_increasing_within_se = false;
  bool median_decreases_first_to_last = false;
  bool estimator_violation = false;  // some estimate below -SE

  nlohmann::json to_json() const;
};

KlRateReport kl_rate_check(const RunConfig& config, std::uint64_t seed);

// size x size gridworld, 4 deterministic moves (up, down, left, right; walls
// keep the agent in place). The last cell is an absorbing goal with reward 0;
// every other step costs -1.
class GridMdp {
 public:
  GridMdp(std::size_t size, double gamma);
  std::size_t states() const { return size_ * size_; }
  static constexpr std::size_t kActions = 4;
  std::size_t goal() const { return states() - 1; }
  std::size_t next(std::size_t s, std::size_t a) const;
  double reward(std::size_t s, std::size_t a) const;
  double gamma() const { return gamma_; }
  std::size_t size() const { return size_; }

 private:
  std::size_t size_;
  double gamma_;
};

// Oracle: V* by repeated Bellman optimality backups to a 1e-13 residual.
std::vector<double> value_iteration(const GridMdp& mdp);

struct TabularReport {
  std::size_t size = 0;
  double gamma = 0.0;
  std::string init;
  std::vector<double> v_star;
  std::vector<double> gaps;    // |V^{pi_k} - V*|_inf, k = 0, 1, ...
  std::vector<double> ratios;  // gaps[k+1] / gaps[k] (0 when both are 0)
  double worst_ratio = 0.0;
  std::size_t iterations = 0;
  std::size_t converged_iteration = 0;  // first k with gaps[k] ~ 0
  bool contraction_holds = true;
  std::size_t violation_iteration = 0;
  std::vector<double> violation_values;  // V^{pi_{k+1}} at the first violation

  nlohmann::json to_json() const;
};

// Support-constrained policy iteration with exact (linear-solve) evaluation.
// The behavior policy is uniform, so the support mask admits every action.
TabularReport tabular_check(const TabularConfig& config);

}  // namespace cped::harness
