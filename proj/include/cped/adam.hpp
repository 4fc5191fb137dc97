#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cped/autodiff.hpp"
#include "json.hpp"

namespace cped {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for one parameter list. Parameters are passed to every step rather
// than held, so networks stay freely copyable.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  // Applies one bias-corrected Adam update; throws NumericError on a
  // non-finite gradient and ValidationError on a shape mismatch. Nothing is
  // modified when it throws.
  void step(std::span<ad::Parameter* const> params, std::span<const Tensor> grads);

  std::int64_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  nlohmann::json to_json() const;
  static Adam from_json(const nlohmann::json& j);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace cped
