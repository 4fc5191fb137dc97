#pragma once

// Hybrid adversarial + maximum-likelihood training of a FlowModel.
//
// Generator objective:  L_adv(G, D) - lambda * mean log p_theta(x_data)
// Discriminator objectives:
//   Bce:             -mean log D(real) - mean log(1 - D(fake))
//   GradientPenalty:  mean D(fake) - mean D(real)
//                     + 0.5 * mean((|grad_x D(x_hat)|_2 - 1)^2)

#include <cstdint>
#include <filesystem>
#include <string>

#include "cped/adam.hpp"
#include "cped/autodiff.hpp"
#include "cped/flow.hpp"
#include "cped/nn.hpp"
#include "cped/rng.hpp"
#include "json.hpp"

namespace cped::flow {

enum class GanKind { Bce, GradientPenalty };

struct GanKindTraits {
  int generator_steps;      // per train step
  int discriminator_steps;  // per train step
  double penalty;           // gradient-penalty coefficient (0 for Bce)
  double discriminator_lr;
  double dropout;
};

// Fixed per kind: Bce 5:1 generator:discriminator, GradientPenalty 1:5 with
// penalty 0.5.
GanKindTraits traits(GanKind kind);
GanKind gan_kind_from_string(const std::string& s);
std::string to_string(GanKind kind);

struct DiscriminatorSpec {
  std::size_t input_dim = 2;
  std::size_t hidden_width = 8;  // within [2 d, 4 d]
  GanKind kind = GanKind::GradientPenalty;
  double dropout = 0.0;
};

// Two hidden LeakyReLU layers and a scalar head. The head is a logit for
// Bce (sigmoid applied in the loss) and the raw critic value otherwise.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorSpec& spec, Rng& rng);

  // n x 1 pre-sigmoid output. dropout_rng enables dropout (training only).
  ad::Var logits(ad::Tape& tape, ad::Var x, bool trainable, Rng* dropout_rng = nullptr);
  // D(x): sigmoid(logit) for Bce, identity otherwise.
  ad::Var output(ad::Tape& tape, ad::Var x, bool trainable, Rng* dropout_rng = nullptr);
  // grad_x of the identity head, n x d, expressed as tape ops so it can
  // itself be differentiated w.r.t. the weights. Requires no dropout.
  ad::Var input_gradient(ad::Tape& tape, ad::Var x, bool trainable);

  Tensor evaluate(const Tensor& x) const;
  const DiscriminatorSpec& spec() const { return spec_; }
  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }
  std::vector<ad::Parameter*> parameters() { return net_.parameters(); }

  nlohmann::json to_json() const;
  static Discriminator from_json(const nlohmann::json& j);

 private:
  DiscriminatorSpec spec_;
  nn::Mlp net_;
};

// Loss pieces on tape values, exposed for plug-in checks.
ad::Var bce_discriminator_loss(ad::Var real_logits, ad::Var fake_logits);
ad::Var gp_discriminator_loss(ad::Var d_real, ad::Var d_fake, ad::Var grad_norms, double penalty);
ad::Var gradient_penalty(ad::Var grad_norms, double penalty);
// Adversarial generator term: Bce -mean log D(fake); GradientPenalty -mean D(fake).
ad::Var generator_adversarial_term(GanKind kind, ad::Var fake_out);
ad::Var hybrid_generator_objective(ad::Var adversarial, ad::Var data_log_density, double lambda);

// Full losses on tapes. The discriminator loss draws fakes from the frozen
// model and interpolation weights from rng.
ad::Var discriminator_loss(ad::Tape& tape, Discriminator& disc, const Tensor& real,
                           const Tensor& fake, GanKind kind, Rng& rng, bool train_disc = true);
ad::Var generator_hybrid_loss(ad::Tape& tape, FlowModel& model, Discriminator& disc,
                              const Tensor& data, GanKind kind, double lambda, Rng& rng,
                              bool train_model = true, ad::Var* data_log_density = nullptr);

struct GanConfig {
  GanKind kind = GanKind::GradientPenalty;
  double lambda = 1.0;
  double generator_lr = 1e-4;
  double discriminator_lr = 0.0;   // 0 -> kind default
  std::size_t discriminator_hidden = 0;  // 0 -> 4 * input_dim
};

struct GanLossReport {
  double discriminator_loss = 0.0;
  double generator_loss = 0.0;
  double mean_log_likelihood = 0.0;  // over the data batch, model space
  int discriminator_steps = 0;
  int generator_steps = 0;
};

// Owns the model, critic, and both optimisers.
class FlowGan {
 public:
  FlowGan() = default;
  FlowGan(FlowModel model, const GanConfig& config, Rng& rng);

  // One outer step at the kind's ratio: Bce runs 5 generator updates and 1
  // discriminator update, GradientPenalty 5 discriminator updates then 1
  // generator update. All sub-steps use `batch` as real data.
  GanLossReport train_step(const Tensor& batch, Rng& rng);

  FlowModel& model() { return model_; }
  const FlowModel& model() const { return model_; }
  Discriminator& discriminator() { return disc_; }
  const GanConfig& config() const { return config_; }
  std::int64_t generator_updates() const { return generator_updates_; }
  std::int64_t discriminator_updates() const { return discriminator_updates_; }

  nlohmann::json to_json() const;
  static FlowGan from_json(const nlohmann::json& j);

 private:
  double discriminator_update(const Tensor& batch, Rng& rng);
  double generator_update(const Tensor& batch, Rng& rng, double* mean_ll);

  FlowModel model_;
  Discriminator disc_;
  GanConfig config_;
  Adam gen_opt_;
  Adam disc_opt_;
  std::int64_t generator_updates_ = 0;
  std::int64_t discriminator_updates_ = 0;
};

}  // namespace cped::flow
