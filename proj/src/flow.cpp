#include "cped/flow.hpp"

#include <cmath>
#include <numbers>

#include "cped/error.hpp"
#include "cped/serialize.hpp"

namespace cped::flow {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

void split_dims(std::size_t dim, int parity, std::vector<std::size_t>& passive,
                std::vector<std::size_t>& active) {
  passive.clear();
  active.clear();
  for (std::size_t i = 0; i < dim; ++i) {
    (static_cast<int>(i % 2) == parity ? passive : active).push_back(i);
  }
}

FlowModel::FlowModel(const FlowSpec& spec, Rng& rng) : spec_(spec) {
  if (spec_.input_dim < 2) throw ValidationError("flow: input_dim must be at least 2");
  if (spec_.coupling_layers == 0) throw ValidationError("flow: need at least one coupling layer");
  for (std::size_t l = 0; l < spec_.coupling_layers; ++l) {
    CouplingLayer layer;
    layer.parity = static_cast<int>(l % 2);
    split_dims(spec_.input_dim, layer.parity, layer.passive, layer.active);
    nn::MlpSpec ms;
    ms.input = layer.passive.size();
    ms.hidden.assign(spec_.conditioner_hidden_layers, spec_.hidden_width);
    ms.output = layer.active.size();
    ms.hidden_activation = nn::Activation::LeakyRelu;
    ms.output_activation = nn::Activation::Identity;
    Rng layer_rng = rng.stream("coupling").stream(l);
    layer.conditioner = nn::Mlp(ms, layer_rng, "flow.m" + std::to_string(l));
    layer.conditioner.zero_output_layer();
    layers_.push_back(std::move(layer));
  }
  log_scale_ = {"flow.log_scale", Tensor(1, spec_.input_dim)};
  validate_masks();
}

void FlowModel::validate_masks() const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const CouplingLayer& layer = layers_[l];
    if (layer.passive.size() + layer.active.size() != spec_.input_dim || layer.active.empty()) {
      throw ValidationError("flow: coupling layer " + std::to_string(l) + " has an invalid mask");
    }
    if (l > 0 && layers_[l - 1].parity == layer.parity) {
      throw ValidationError("flow: coupling layers " + std::to_string(l - 1) + " and " +
                            std::to_string(l) + " do not use complementary masks");
    }
  }
}

FlowModel::Forward FlowModel::forward(ad::Tape& tape, ad::Var x, bool trainable) {
  if (x.cols() != spec_.input_dim) {
    throw ValidationError("flow: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(spec_.input_dim));
  }
  ad::Var h = x;
  for (CouplingLayer& layer : layers_) {
    ad::Var passive = ad::gather_cols(h, layer.passive);
    ad::Var active = ad::gather_cols(h, layer.active);
    ad::Var shift = trainable ? layer.conditioner.forward(tape, passive)
                              : layer.conditioner.forward_frozen(tape, passive);
    h = ad::combine_cols(passive, layer.passive, ad::add(active, shift), layer.active);
  }
  ad::Var s = trainable ? tape.param(log_scale_) : tape.frozen(log_scale_);
  return {ad::mul(h, ad::exp(s)), ad::sum(s)};
}

ad::Var FlowModel::inverse(ad::Tape& tape, ad::Var z, bool trainable) {
  if (z.cols() != spec_.input_dim) throw ValidationError("flow: latent has wrong width");
  ad::Var s = trainable ? tape.param(log_scale_) : tape.frozen(log_scale_);
  ad::Var h = ad::mul(z, ad::exp(ad::scale(s, -1.0)));
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    CouplingLayer& layer = *it;
    ad::Var passive = ad::gather_cols(h, layer.passive);
    ad::Var active = ad::gather_cols(h, layer.active);
    ad::Var shift = trainable ? layer.conditioner.forward(tape, passive)
                              : layer.conditioner.forward_frozen(tape, passive);
    h = ad::combine_cols(passive, layer.passive, ad::sub(active, shift), layer.active);
  }
  return h;
}

ad::Var standard_normal_log_density(ad::Var z) {
  const double d = static_cast<double>(z.cols());
  return ad::add_scalar(ad::scale(ad::row_sum(ad::square(z)), -0.5), -0.5 * d * kLog2Pi);
}

double standard_normal_log_density(std::span<const double> z) {
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return -0.5 * sq - 0.5 * static_cast<double>(z.size()) * kLog2Pi;
}

ad::Var FlowModel::log_density(ad::Tape& tape, ad::Var x, bool trainable) {
  Forward f = forward(tape, x, trainable);
  return ad::add(standard_normal_log_density(f.z), f.logdet);
}

Tensor FlowModel::forward_f(const Tensor& x, Tensor* logdet) const {
  require_finite(x, "flow forward input");
  ad::Tape tape;
  Forward f = const_cast<FlowModel*>(this)->forward(tape, tape.constant(x), false);
  if (logdet != nullptr) *logdet = Tensor(x.rows(), 1, f.logdet.value().item());
  return f.z.value();
}

Tensor FlowModel::inverse_g(const Tensor& z) const {
  require_finite(z, "flow inverse input");
  ad::Tape tape;
  return const_cast<FlowModel*>(this)->inverse(tape, tape.constant(z), false).value();
}

Tensor FlowModel::log_density(const Tensor& x) const {
  require_finite(x, "flow log_density input");
  ad::Tape tape;
  return const_cast<FlowModel*>(this)->log_density(tape, tape.constant(x), false).value();
}

Tensor FlowModel::sample(std::size_t n, Rng& rng) const {
  if (n == 0) throw ValidationError("flow: sample count must be >= 1");
  Tensor z(n, spec_.input_dim);
  for (double& v : z.data()) v = rng.normal();
  return inverse_g(z);
}

std::vector<ad::Parameter*> FlowModel::parameters() {
  std::vector<ad::Parameter*> out;
  for (CouplingLayer& layer : layers_) {
    for (ad::Parameter* p : layer.conditioner.parameters()) out.push_back(p);
  }
  out.push_back(&log_scale_);
  return out;
}

nlohmann::json FlowModel::to_json() const {
  nlohmann::json j;
  j["input_dim"] = spec_.input_dim;
  j["coupling_layers"] = spec_.coupling_layers;
  j["conditioner_hidden_layers"] = spec_.conditioner_hidden_layers;
  j["hidden_width"] = spec_.hidden_width;
  j["prior"] = "standard_normal";
  j["log_scale"] = log_scale_.value.vector();
  j["layers"] = nlohmann::json::array();
  for (const CouplingLayer& layer : layers_) {
    j["layers"].push_back({{"parity", layer.parity},
                           {"passive", layer.passive},
                           {"active", layer.active},
                           {"conditioner", layer.conditioner.to_json()}});
  }
  return j;
}

FlowModel FlowModel::from_json(const nlohmann::json& j) {
  FlowModel m;
  m.spec_.input_dim = j.at("input_dim").get<std::size_t>();
  m.spec_.coupling_layers = j.at("coupling_layers").get<std::size_t>();
  m.spec_.conditioner_hidden_layers = j.at("conditioner_hidden_layers").get<std::size_t>();
  m.spec_.hidden_width = j.at("hidden_width").get<std::size_t>();
  if (j.at("prior").get<std::string>() != "standard_normal") {
    throw ValidationError("flow: unsupported prior '" + j.at("prior").get<std::string>() + "'");
  }
  const auto scale = j.at("log_scale").get<std::vector<double>>();
  if (scale.size() != m.spec_.input_dim) throw ValidationError("flow: log_scale length mismatch");
  m.log_scale_ = {"flow.log_scale", Tensor::row(scale)};
  const auto& layers = j.at("layers");
  if (layers.size() != m.spec_.coupling_layers) throw ValidationError("flow: layer count mismatch");
  for (const auto& lj : layers) {
    CouplingLayer layer;
    layer.parity = lj.at("parity").get<int>();
    split_dims(m.spec_.input_dim, layer.parity, layer.passive, layer.active);
    if (lj.at("passive").get<std::vector<std::size_t>>() != layer.passive ||
        lj.at("active").get<std::vector<std::size_t>>() != layer.active) {
      throw ValidationError("flow: stored mask does not match its parity");
    }
    layer.conditioner = nn::Mlp::from_json(lj.at("conditioner"));
    if (layer.conditioner.spec().input != layer.passive.size() ||
        layer.conditioner.spec().output != layer.active.size()) {
      throw ValidationError("flow: conditioner shape does not match mask");
    }
    m.layers_.push_back(std::move(layer));
  }
  m.validate_masks();
  return m;
}

}  // namespace cped::flow
