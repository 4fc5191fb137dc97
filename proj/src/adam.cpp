#include "cped/adam.hpp"

#include <cmath>

#include "cped/error.hpp"
#include "cped/serialize.hpp"
#include "cped/simd/kernels.hpp"

namespace cped {

void Adam::step(std::span<ad::Parameter* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ValidationError("adam: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->value.same_shape(grads[i])) {
      throw ValidationError("adam: gradient shape mismatch for " + params[i]->name);
    }
    if (!grads[i].all_finite()) throw NumericError("adam: non-finite gradient for " + params[i]->name);
  }
  if (m_.empty()) {
    for (const ad::Parameter* p : params) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  } else if (m_.size() != params.size()) {
    throw ValidationError("adam: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!m_[i].same_shape(params[i]->value)) {
      throw ValidationError("adam: moment shape mismatch for " + params[i]->name);
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const simd::AdamParams ap{config_.lr, config_.beta1, config_.beta2, config_.eps,
                            1.0 - std::pow(config_.beta1, t), 1.0 - std::pow(config_.beta2, t)};
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    k.adam(params[i]->value.ptr(), m_[i].ptr(), v_[i].ptr(), grads[i].ptr(), grads[i].size(), ap);
  }
}

nlohmann::json Adam::to_json() const {
  nlohmann::json j;
  j["lr"] = config_.lr;
  j["beta1"] = config_.beta1;
  j["beta2"] = config_.beta2;
  j["eps"] = config_.eps;
  j["steps"] = steps_;
  j["m"] = nlohmann::json::array();
  j["v"] = nlohmann::json::array();
  for (const Tensor& t : m_) j["m"].push_back(tensor_to_json(t));
  for (const Tensor& t : v_) j["v"].push_back(tensor_to_json(t));
  return j;
}

Adam Adam::from_json(const nlohmann::json& j) {
  Adam a(AdamConfig{j.at("lr").get<double>(), j.at("beta1").get<double>(),
                    j.at("beta2").get<double>(), j.at("eps").get<double>()});
  a.steps_ = j.at("steps").get<std::int64_t>();
  for (const auto& t : j.at("m")) a.m_.push_back(tensor_from_json(t));
  for (const auto& t : j.at("v")) a.v_.push_back(tensor_from_json(t));
  return a;
}

}  // namespace cped
