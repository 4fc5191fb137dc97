#pragma once

// Behavior-likelihood queries on a trained flow, in raw (s, a) units.
//
// The flow is fit on data normalized with `training` stats. Queries are
// normalized with `query` stats and passed through the diagonal affine that
// maps query-normalized space onto training-normalized space, so
//   log L(x) = log p((x - mu_t) / sigma_t) - sum(log sigma_t)
// whatever query stats are installed.

#include <memory>
#include <optional>
#include <span>
#include <string>

#include "cped/autodiff.hpp"
#include "cped/flow.hpp"
#include "cped/normalization.hpp"
#include "json.hpp"

namespace cped::density {

class DensityService {
 public:
  DensityService() = default;
  // Owns a frozen copy of the model.
  DensityService(flow::FlowModel model, NormalizationStats training, std::size_t state_dim);
  // Tracks a model owned elsewhere (e.g. while the flow is still training).
  static DensityService view(const flow::FlowModel& model, NormalizationStats training,
                             std::size_t state_dim);

  // Same model, different query normalization; raw log L is unchanged.
  DensityService with_query_stats(NormalizationStats query) const;

  // n x 1 log L of rows of [s | a].
  Tensor log_likelihood(const Tensor& s, const Tensor& a) const;
  Tensor log_likelihood(const Tensor& sa) const;
  // Differentiable in s and a; the flow enters as constants.
  ad::Var log_likelihood(ad::Tape& tape, ad::Var s, ad::Var a) const;

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return training_.size() - state_dim_; }
  const flow::FlowModel& model() const { return *model_; }
  const NormalizationStats& training_stats() const { return training_; }
  const NormalizationStats& query_stats() const { return query_; }

 private:
  void check_dims(std::size_t s_cols, std::size_t a_cols) const;
  ad::Var model_input(ad::Tape& tape, ad::Var sa, double* correction) const;

  std::shared_ptr<const flow::FlowModel> model_;
  NormalizationStats training_;
  NormalizationStats query_;
  std::size_t state_dim_ = 0;
};

enum class EpsilonKind {
  BatchMean,            // mean of -log L over the batch
  BatchMeanLikelihood,  // -log of the batch mean of L
  FixedQuantile,        // q-quantile of -log L over the dataset, computed once
};

struct EpsilonMode {
  EpsilonKind kind = EpsilonKind::BatchMean;
  double quantile = 0.5;

  nlohmann::json to_json() const;
  static EpsilonMode from_json(const nlohmann::json& j);
};

std::string to_string(EpsilonKind kind);
EpsilonKind epsilon_kind_from_string(const std::string& s);

// Linear interpolation between order statistics; q = 0 is the minimum.
double quantile(std::vector<double> values, double q);

class EpsilonRule {
 public:
  EpsilonRule() = default;
  explicit EpsilonRule(EpsilonMode mode);

  // FixedQuantile only: stores the dataset quantile. No-op otherwise.
  void calibrate(const DensityService& svc, const Tensor& dataset_s, const Tensor& dataset_a);
  void set_fixed(double epsilon) { fixed_ = epsilon; }

  // From -log L of the batch's dataset actions.
  double threshold(std::span<const double> neg_log_l) const;
  double threshold(const DensityService& svc, const Tensor& s, const Tensor& a) const;

  const EpsilonMode& mode() const { return mode_; }
  std::optional<double> fixed() const { return fixed_; }

 private:
  EpsilonMode mode_;
  std::optional<double> fixed_;
};

// max(0, -log L - epsilon), per row.
Tensor constraint_violation(const Tensor& neg_log_l, double epsilon);
Tensor constraint_violation(const DensityService& svc, const Tensor& s, const Tensor& a_policy,
                            double epsilon);
ad::Var constraint_violation(ad::Var neg_log_l, double epsilon);

// Flow training input: normalized [s | a] with constant columns jittered by
// uniform noise of scale 1e-6 before fitting.
struct FlowData {
  Tensor normalized;
  NormalizationStats stats;
};
FlowData prepare_flow_data(const Tensor& sa, Rng& rng);

}  // namespace cped::density
