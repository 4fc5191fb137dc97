#pragma once

// Additive-coupling normalizing flow with a final diagonal scaling layer.
//
//   f = scale o coupling_{L-1} o ... o coupling_0,    z = f(x)
//   coupling: y_passive = x_passive, y_active = x_active + m(x_passive)
//   scale:    z = y * exp(s)
//
// log|det df/dx| = sum(s) for every x. The prior over z is N(0, I), so
//   log p(x) = -|f(x)|^2 / 2 - (d/2) log(2 pi) + sum(s).
// The generator is the exact inverse G = f^{-1}.

#include <filesystem>
#include <string>
#include <vector>

#include "cped/autodiff.hpp"
#include "cped/nn.hpp"
#include "cped/rng.hpp"
#include "json.hpp"

namespace cped::flow {

struct FlowSpec {
  std::size_t input_dim = 2;
  std::size_t coupling_layers = 4;
  std::size_t conditioner_hidden_layers = 3;
  std::size_t hidden_width = 750;
};

struct CouplingLayer {
  // Even-index dims are passive when parity == 0, odd-index dims otherwise.
  int parity = 0;
  std::vector<std::size_t> passive;
  std::vector<std::size_t> active;
  nn::Mlp conditioner;  // passive -> shift for active
};

// Index split for a given parity; even indices number ceil(d/2).
void split_dims(std::size_t dim, int parity, std::vector<std::size_t>& passive,
                std::vector<std::size_t>& active);

class FlowModel {
 public:
  FlowModel() = default;
  // Conditioner output layers start at zero and log_scale at 0: the flow is
  // the identity until trained.
  FlowModel(const FlowSpec& spec, Rng& rng);

  struct Forward {
    ad::Var z;       // n x d
    ad::Var logdet;  // 1 x 1, identical for every row
  };

  Forward forward(ad::Tape& tape, ad::Var x, bool trainable);
  ad::Var inverse(ad::Tape& tape, ad::Var z, bool trainable);
  // n x 1 log-density under the model.
  ad::Var log_density(ad::Tape& tape, ad::Var x, bool trainable);

  // Frozen evaluations. logdet is returned per row (n x 1).
  Tensor forward_f(const Tensor& x, Tensor* logdet = nullptr) const;
  Tensor inverse_g(const Tensor& z) const;
  Tensor log_density(const Tensor& x) const;
  Tensor sample(std::size_t n, Rng& rng) const;

  std::size_t input_dim() const { return spec_.input_dim; }
  const FlowSpec& spec() const { return spec_; }
  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  ad::Parameter& log_scale() { return log_scale_; }
  const ad::Parameter& log_scale() const { return log_scale_; }
  std::vector<ad::Parameter*> parameters();

  nlohmann::json to_json() const;
  static FlowModel from_json(const nlohmann::json& j);

 private:
  void validate_masks() const;
  FlowSpec spec_;
  std::vector<CouplingLayer> layers_;
  ad::Parameter log_scale_;
};

// Standard-normal log-density per row (n x 1).
ad::Var standard_normal_log_density(ad::Var z);
double standard_normal_log_density(std::span<const double> z);

}  // namespace cped::flow
