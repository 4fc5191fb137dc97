#include "cped/normalization.hpp"

#include <algorithm>
#include <cmath>

#include "cped/error.hpp"

namespace cped {

NormalizationStats NormalizationStats::identity(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

NormalizationStats NormalizationStats::fit(const Tensor& data) {
  if (data.rows() == 0) throw ValidationError("normalization: no rows to fit");
  const std::size_t n = data.rows(), d = data.cols();
  NormalizationStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += data(r, c);
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double e = data(r, c) - s.mean[c];
      s.scale[c] += e * e;
    }
  }
  for (double& v : s.scale) v = std::max(std::sqrt(v / static_cast<double>(n)), kScaleFloor);
  return s;
}

void NormalizationStats::validate() const {
  if (mean.size() != scale.size()) throw ValidationError("normalization: mean/scale length mismatch");
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(scale[i]) || !(scale[i] > 0.0)) {
      throw ValidationError("normalization: column " + std::to_string(i) +
                            " has a non-finite mean or non-positive scale");
    }
  }
}

Tensor NormalizationStats::normalize(const Tensor& x) const {
  if (x.cols() != size()) throw ValidationError("normalize: width " + x.shape_string() +
                                                " does not match stats of size " +
                                                std::to_string(size()));
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
  }
  return out;
}

Tensor NormalizationStats::denormalize(const Tensor& x) const {
  if (x.cols() != size()) throw ValidationError("denormalize: width mismatch");
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * scale[c] + mean[c];
  }
  return out;
}

ad::Var NormalizationStats::normalize(ad::Tape& tape, ad::Var x) const {
  if (x.cols() != size()) throw ValidationError("normalize: width mismatch");
  Tensor inv(1, size());
  for (std::size_t c = 0; c < size(); ++c) inv[c] = 1.0 / scale[c];
  return ad::mul(ad::sub(x, tape.constant(Tensor::row(mean))), tape.constant(inv));
}

double NormalizationStats::log_scale_sum() const {
  double s = 0.0;
  for (double v : scale) s += std::log(v);
  return s;
}

NormalizationStats NormalizationStats::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw ValidationError("normalization: slice out of range");
  return {std::vector<double>(mean.begin() + begin, mean.begin() + begin + count),
          std::vector<double>(scale.begin() + begin, scale.begin() + begin + count)};
}

nlohmann::json NormalizationStats::to_json() const {
  return {{"mean", mean}, {"scale", scale}};
}

NormalizationStats NormalizationStats::from_json(const nlohmann::json& j) {
  NormalizationStats s{j.at("mean").get<std::vector<double>>(),
                       j.at("scale").get<std::vector<double>>()};
  s.validate();
  return s;
}

NormalizationStats concat(const NormalizationStats& a, const NormalizationStats& b) {
  NormalizationStats out = a;
  out.mean.insert(out.mean.end(), b.mean.begin(), b.mean.end());
  out.scale.insert(out.scale.end(), b.scale.begin(), b.scale.end());
  return out;
}

}  // namespace cped
