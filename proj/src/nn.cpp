#include "cped/nn.hpp"

#include <cmath>

#include "cped/error.hpp"
#include "cped/serialize.hpp"

namespace cped::nn {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "leaky_relu") return Activation::LeakyRelu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "relu") return Activation::Relu;
  throw ValidationError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
  }
  return "identity";
}

ad::Var apply(Activation a, ad::Var x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::LeakyRelu: return ad::leaky_relu(x, kLeakySlope);
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Sigmoid: return ad::sigmoid(x);
    case Activation::Relu: return ad::relu(x);
  }
  return x;
}

Mlp::Mlp(MlpSpec spec, Rng& rng, const std::string& name) : spec_(std::move(spec)) {
  if (spec_.input == 0 || spec_.output == 0) throw ValidationError("mlp: zero-width input or output");
  std::vector<std::size_t> widths{spec_.input};
  widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
  widths.push_back(spec_.output);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    if (out == 0) throw ValidationError("mlp: zero-width hidden layer");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear layer;
    layer.weight = {name + ".w" + std::to_string(l), Tensor(in, out)};
    layer.bias = {name + ".b" + std::to_string(l), Tensor(1, out)};
    for (double& w : layer.weight.value.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias.value.data()) b = rng.uniform(-bound, bound);
    layers_.push_back(std::move(layer));
  }
}

ad::Var Mlp::run(ad::Tape& tape, ad::Var x, const ForwardOptions& opts, bool trainable) {
  if (x.cols() != spec_.input) {
    throw ValidationError("mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(spec_.input));
  }
  if (opts.dropout > 0.0 && opts.rng == nullptr) throw ValidationError("mlp: dropout needs an rng");
  ad::Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Linear& layer = layers_[l];
    ad::Var w = trainable ? tape.param(layer.weight) : tape.frozen(layer.weight);
    ad::Var b = trainable ? tape.param(layer.bias) : tape.frozen(layer.bias);
    h = ad::add(ad::matmul(h, w), b);
    const bool last = l + 1 == layers_.size();
    h = apply(last ? spec_.output_activation : spec_.hidden_activation, h);
    if (!last && opts.dropout > 0.0) {
      h = ad::mul_const(h, dropout_mask(h.rows(), h.cols(), opts.dropout, *opts.rng));
    }
  }
  return h;
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x, const ForwardOptions& opts) {
  return run(tape, x, opts, opts.trainable);
}

ad::Var Mlp::forward_frozen(ad::Tape& tape, ad::Var x) const {
  // run() only reads parameters when trainable is false.
  return const_cast<Mlp*>(this)->run(tape, x, ForwardOptions{false}, false);
}

Tensor Mlp::evaluate(const Tensor& x) const {
  ad::Tape tape;
  return forward_frozen(tape, tape.constant(x)).value();
}

void Mlp::zero_output_layer() {
  if (layers_.empty()) return;
  layers_.back().weight.value.fill(0.0);
  layers_.back().bias.value.fill(0.0);
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (Linear& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const Linear& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Linear& l : layers_) n += l.weight.value.size() + l.bias.value.size();
  return n;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["input"] = spec_.input;
  j["hidden"] = spec_.hidden;
  j["output"] = spec_.output;
  j["hidden_activation"] = to_string(spec_.hidden_activation);
  j["output_activation"] = to_string(spec_.output_activation);
  j["layers"] = nlohmann::json::array();
  for (const Linear& l : layers_) {
    j["layers"].push_back({{"name", l.weight.name.substr(0, l.weight.name.rfind('.'))},
                           {"weight", tensor_to_json(l.weight.value)},
                           {"bias", tensor_to_json(l.bias.value)}});
  }
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp m;
  m.spec_.input = j.at("input").get<std::size_t>();
  m.spec_.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  m.spec_.output = j.at("output").get<std::size_t>();
  m.spec_.hidden_activation = activation_from_string(j.at("hidden_activation").get<std::string>());
  m.spec_.output_activation = activation_from_string(j.at("output_activation").get<std::string>());
  const auto& layers = j.at("layers");
  if (layers.size() != m.spec_.hidden.size() + 1) throw ValidationError("mlp: layer count mismatch");
  std::size_t l = 0;
  std::size_t in = m.spec_.input;
  for (const auto& lj : layers) {
    const std::string base = lj.at("name").get<std::string>();
    Linear layer;
    layer.weight = {base + ".w" + std::to_string(l), tensor_from_json(lj.at("weight"))};
    layer.bias = {base + ".b" + std::to_string(l), tensor_from_json(lj.at("bias"))};
    const std::size_t out = l < m.spec_.hidden.size() ? m.spec_.hidden[l] : m.spec_.output;
    if (layer.weight.value.rows() != in || layer.weight.value.cols() != out ||
        layer.bias.value.rows() != 1 || layer.bias.value.cols() != out) {
      throw ValidationError("mlp: layer " + std::to_string(l) + " has wrong shape");
    }
    m.layers_.push_back(std::move(layer));
    in = out;
    ++l;
  }
  return m;
}

void soft_update(Mlp& target, const Mlp& source, double rate) {
  auto dst = target.parameters();
  auto src = source.parameters();
  if (dst.size() != src.size()) throw ValidationError("soft_update: architecture mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Tensor& t = dst[i]->value;
    const Tensor& s = src[i]->value;
    if (!t.same_shape(s)) throw ValidationError("soft_update: shape mismatch");
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = rate * s[k] + (1.0 - rate) * t[k];
  }
}

Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Tensor mask(rows, cols);
  const double keep = 1.0 - rate;
  for (double& m : mask.data()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace cped::nn
