#include "cped/behavior_density.hpp"

#include <algorithm>
#include <cmath>

#include "cped/error.hpp"

namespace cped::density {

DensityService::DensityService(flow::FlowModel model, NormalizationStats training,
                               std::size_t state_dim)
    : model_(std::make_shared<const flow::FlowModel>(std::move(model))),
      training_(std::move(training)),
      state_dim_(state_dim) {
  training_.validate();
  if (training_.size() != model_->input_dim()) {
    throw ValidationError("density: stats width " + std::to_string(training_.size()) +
                          " != flow input_dim " + std::to_string(model_->input_dim()));
  }
  if (state_dim_ >= training_.size()) throw ValidationError("density: state_dim leaves no action");
  query_ = training_;
}

DensityService DensityService::view(const flow::FlowModel& model, NormalizationStats training,
                                    std::size_t state_dim) {
  DensityService svc;
  svc.model_ = std::shared_ptr<const flow::FlowModel>(&model, [](const flow::FlowModel*) {});
  svc.training_ = std::move(training);
  svc.training_.validate();
  if (svc.training_.size() != model.input_dim()) throw ValidationError("density: stats width mismatch");
  if (state_dim >= svc.training_.size()) throw ValidationError("density: state_dim leaves no action");
  svc.state_dim_ = state_dim;
  svc.query_ = svc.training_;
  return svc;
}

DensityService DensityService::with_query_stats(NormalizationStats query) const {
  query.validate();
  if (query.size() != training_.size()) throw ValidationError("density: query stats width mismatch");
  DensityService out = *this;
  out.query_ = std::move(query);
  return out;
}

void DensityService::check_dims(std::size_t s_cols, std::size_t a_cols) const {
  if (model_ == nullptr) throw ValidationError("density: service has no model");
  if (s_cols != state_dim_ || a_cols != action_dim()) {
    throw ValidationError("density: expected state dim " + std::to_string(state_dim_) +
                          " and action dim " + std::to_string(action_dim()) + ", got " +
                          std::to_string(s_cols) + " and " + std::to_string(a_cols));
  }
}

ad::Var DensityService::model_input(ad::Tape& tape, ad::Var sa, double* correction) const {
  ad::Var xq = query_.normalize(tape, sa);
  *correction = -query_.log_scale_sum();
  if (query_ == training_) return xq;
  const std::size_t d = training_.size();
  Tensor a(1, d), b(1, d);
  for (std::size_t c = 0; c < d; ++c) {
    a[c] = query_.scale[c] / training_.scale[c];
    b[c] = (query_.mean[c] - training_.mean[c]) / training_.scale[c];
    *correction += std::log(a[c]);
  }
  return ad::add(ad::mul(xq, tape.constant(a)), tape.constant(b));
}

ad::Var DensityService::log_likelihood(ad::Tape& tape, ad::Var s, ad::Var a) const {
  check_dims(s.cols(), a.cols());
  double correction = 0.0;
  ad::Var x = model_input(tape, ad::concat_cols(s, a), &correction);
  ad::Var ll = const_cast<flow::FlowModel&>(*model_).log_density(tape, x, false);
  return ad::add_scalar(ll, correction);
}

Tensor DensityService::log_likelihood(const Tensor& s, const Tensor& a) const {
  require_finite(s, "density query states");
  require_finite(a, "density query actions");
  ad::Tape tape;
  return log_likelihood(tape, tape.constant(s), tape.constant(a)).value();
}

Tensor DensityService::log_likelihood(const Tensor& sa) const {
  check_dims(state_dim_, sa.cols() >= state_dim_ ? sa.cols() - state_dim_ : 0);
  require_finite(sa, "density query");
  ad::Tape tape;
  double correction = 0.0;
  ad::Var x = model_input(tape, tape.constant(sa), &correction);
  return ad::add_scalar(const_cast<flow::FlowModel&>(*model_).log_density(tape, x, false),
                        correction)
      .value();
}

std::string to_string(EpsilonKind kind) {
  switch (kind) {
    case EpsilonKind::BatchMean: return "batch_mean";
    case EpsilonKind::BatchMeanLikelihood: return "batch_mean_likelihood";
    case EpsilonKind::FixedQuantile: return "fixed_quantile";
  }
  return "?";
}

EpsilonKind epsilon_kind_from_string(const std::string& s) {
  if (s == "batch_mean") return EpsilonKind::BatchMean;
  if (s == "batch_mean_likelihood") return EpsilonKind::BatchMeanLikelihood;
  if (s == "fixed_quantile") return EpsilonKind::FixedQuantile;
  throw ValidationError("unknown epsilon mode '" + s +
                        "' (expected batch_mean, batch_mean_likelihood or fixed_quantile)");
}

nlohmann::json EpsilonMode::to_json() const {
  return {{"kind", to_string(kind)}, {"quantile", quantile}};
}

EpsilonMode EpsilonMode::from_json(const nlohmann::json& j) {
  EpsilonMode m;
  m.kind = epsilon_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("quantile")) m.quantile = j.at("quantile").get<double>();
  if (!(m.quantile >= 0.0 && m.quantile <= 1.0)) {
    throw ValidationError("epsilon quantile must lie in [0, 1]");
  }
  return m;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

EpsilonRule::EpsilonRule(EpsilonMode mode) : mode_(mode) {
  if (!(mode_.quantile >= 0.0 && mode_.quantile <= 1.0)) {
    throw ValidationError("epsilon quantile must lie in [0, 1]");
  }
}

void EpsilonRule::calibrate(const DensityService& svc, const Tensor& dataset_s,
                            const Tensor& dataset_a) {
  if (mode_.kind != EpsilonKind::FixedQuantile) return;
  const Tensor ll = svc.log_likelihood(dataset_s, dataset_a);
  std::vector<double> neg(ll.size());
  for (std::size_t i = 0; i < ll.size(); ++i) neg[i] = -ll[i];
  fixed_ = quantile(std::move(neg), mode_.quantile);
}

double EpsilonRule::threshold(std::span<const double> neg_log_l) const {
  if (mode_.kind == EpsilonKind::FixedQuantile) {
    if (!fixed_) throw ValidationError("epsilon: fixed quantile used before calibration");
    return *fixed_;
  }
  if (neg_log_l.empty()) throw ValidationError("epsilon: empty batch");
  if (mode_.kind == EpsilonKind::BatchMean) {
    double s = 0.0;
    for (double v : neg_log_l) s += v;
    return s / static_cast<double>(neg_log_l.size());
  }
  // -log mean exp(-v), shifted by the smallest v for stability.
  const double vmin = *std::min_element(neg_log_l.begin(), neg_log_l.end());
  double s = 0.0;
  for (double v : neg_log_l) s += std::exp(-(v - vmin));
  return vmin - std::log(s / static_cast<double>(neg_log_l.size()));
}

double EpsilonRule::threshold(const DensityService& svc, const Tensor& s, const Tensor& a) const {
  if (mode_.kind == EpsilonKind::FixedQuantile) return threshold(std::span<const double>{});
  if (s.rows() == 0) throw ValidationError("epsilon: empty batch");
  const Tensor ll = svc.log_likelihood(s, a);
  std::vector<double> neg(ll.size());
  for (std::size_t i = 0; i < ll.size(); ++i) neg[i] = -ll[i];
  return threshold(neg);
}

Tensor constraint_violation(const Tensor& neg_log_l, double epsilon) {
  if (!std::isfinite(epsilon)) throw ValidationError("constraint_violation: epsilon must be finite");
  Tensor out(neg_log_l.rows(), neg_log_l.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, neg_log_l[i] - epsilon);
  return out;
}

Tensor constraint_violation(const DensityService& svc, const Tensor& s, const Tensor& a_policy,
                            double epsilon) {
  Tensor neg = svc.log_likelihood(s, a_policy);
  for (double& v : neg.data()) v = -v;
  return constraint_violation(neg, epsilon);
}

ad::Var constraint_violation(ad::Var neg_log_l, double epsilon) {
  if (!std::isfinite(epsilon)) throw ValidationError("constraint_violation: epsilon must be finite");
  return ad::relu(ad::add_scalar(neg_log_l, -epsilon));
}

FlowData prepare_flow_data(const Tensor& sa, Rng& rng) {
  if (sa.rows() == 0) throw ValidationError("flow data: empty dataset");
  Tensor x = sa;
  const NormalizationStats raw = NormalizationStats::fit(sa);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    if (raw.scale[c] > kScaleFloor) continue;
    Rng col = rng.stream("jitter").stream(c);
    for (std::size_t r = 0; r < x.rows(); ++r) x(r, c) += col.uniform(-1e-6, 1e-6);
  }
  FlowData out;
  out.stats = NormalizationStats::fit(x);
  out.normalized = out.stats.normalize(x);
  return out;
}

}  // namespace cped::density
