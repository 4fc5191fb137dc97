#pragma once

// Per-column affine normalization, x_n = (x - mean) / scale.

#include <vector>

#include "cped/autodiff.hpp"
#include "cped/tensor.hpp"
#include "json.hpp"

namespace cped {

inline constexpr double kScaleFloor = 1e-6;

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> scale;  // population std, floored at kScaleFloor

  std::size_t size() const { return mean.size(); }
  static NormalizationStats identity(std::size_t dim);
  static NormalizationStats fit(const Tensor& data);

  Tensor normalize(const Tensor& x) const;
  Tensor denormalize(const Tensor& x) const;
  // n x d tape version, differentiable in x.
  ad::Var normalize(ad::Tape& tape, ad::Var x) const;
  // sum(log scale): subtract from a normalized-space log-density to get raw units.
  double log_scale_sum() const;
  // Columns [begin, begin + count).
  NormalizationStats slice(std::size_t begin, std::size_t count) const;

  nlohmann::json to_json() const;
  static NormalizationStats from_json(const nlohmann::json& j);
  void validate() const;

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

NormalizationStats concat(const NormalizationStats& a, const NormalizationStats& b);

}  // namespace cped
