#pragma once

// Fully connected networks on the autodiff tape.

#include <string>
#include <vector>

#include "cped/autodiff.hpp"
#include "cped/rng.hpp"
#include "json.hpp"

namespace cped::nn {

inline constexpr double kLeakySlope = 0.01;

enum class Activation { Identity, LeakyRelu, Tanh, Sigmoid, Relu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);
ad::Var apply(Activation a, ad::Var x);

struct MlpSpec {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;
  Activation hidden_activation = Activation::LeakyRelu;
  Activation output_activation = Activation::Identity;
};

struct Linear {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out
};

struct ForwardOptions {
  // false: weights enter the tape as constants.
  bool trainable = true;
  // Dropout after every hidden activation; needs rng when > 0.
  double dropout = 0.0;
  Rng* rng = nullptr;
};

class Mlp {
 public:
  Mlp() = default;
  // Weights and biases uniform in +-1/sqrt(fan_in).
  Mlp(MlpSpec spec, Rng& rng, const std::string& name);

  ad::Var forward(ad::Tape& tape, ad::Var x, const ForwardOptions& opts = {});
  ad::Var forward_frozen(ad::Tape& tape, ad::Var x) const;
  // Convenience evaluation on a throwaway tape.
  Tensor evaluate(const Tensor& x) const;

  void zero_output_layer();
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  const MlpSpec& spec() const { return spec_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::vector<Linear>& layers() { return layers_; }

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  ad::Var run(ad::Tape& tape, ad::Var x, const ForwardOptions& opts, bool trainable);

  MlpSpec spec_;
  std::vector<Linear> layers_;
};

// target <- rate * source + (1 - rate) * target, parameter by parameter.
void soft_update(Mlp& target, const Mlp& source, double rate);

Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);

}  // namespace cped::nn
