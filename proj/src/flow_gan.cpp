#include "cped/flow_gan.hpp"

#include <cmath>

#include "cped/error.hpp"

namespace cped::flow {

GanKindTraits traits(GanKind kind) {
  switch (kind) {
    case GanKind::Bce: return {5, 1, 0.0, 1e-5, 0.2};
    case GanKind::GradientPenalty: return {1, 5, 0.5, 1e-4, 0.0};
  }
  throw ValidationError("unknown GanKind");
}

GanKind gan_kind_from_string(const std::string& s) {
  if (s == "bce") return GanKind::Bce;
  if (s == "gradient_penalty") return GanKind::GradientPenalty;
  throw ValidationError("unknown gan kind '" + s + "' (expected bce or gradient_penalty)");
}

std::string to_string(GanKind kind) {
  return kind == GanKind::Bce ? "bce" : "gradient_penalty";
}

Discriminator::Discriminator(const DiscriminatorSpec& spec, Rng& rng) : spec_(spec) {
  const std::size_t d = spec_.input_dim;
  if (spec_.hidden_width < 2 * d || spec_.hidden_width > 4 * d) {
    throw ValidationError("discriminator hidden width " + std::to_string(spec_.hidden_width) +
                          " outside [2d, 4d] = [" + std::to_string(2 * d) + ", " +
                          std::to_string(4 * d) + "]");
  }
  if (spec_.kind == GanKind::GradientPenalty && spec_.dropout != 0.0) {
    throw ValidationError("gradient-penalty discriminator does not support dropout");
  }
  nn::MlpSpec ms;
  ms.input = d;
  ms.hidden = {spec_.hidden_width, spec_.hidden_width};
  ms.output = 1;
  ms.hidden_activation = nn::Activation::LeakyRelu;
  ms.output_activation = nn::Activation::Identity;
  net_ = nn::Mlp(ms, rng, "disc");
}

ad::Var Discriminator::logits(ad::Tape& tape, ad::Var x, bool trainable, Rng* dropout_rng) {
  nn::ForwardOptions opts;
  opts.trainable = trainable;
  if (dropout_rng != nullptr && spec_.dropout > 0.0) {
    opts.dropout = spec_.dropout;
    opts.rng = dropout_rng;
  }
  return net_.forward(tape, x, opts);
}

ad::Var Discriminator::output(ad::Tape& tape, ad::Var x, bool trainable, Rng* dropout_rng) {
  ad::Var l = logits(tape, x, trainable, dropout_rng);
  return spec_.kind == GanKind::Bce ? ad::sigmoid(l) : l;
}

ad::Var Discriminator::input_gradient(ad::Tape& tape, ad::Var x, bool trainable) {
  auto& layers = net_.layers();
  std::vector<ad::Var> weights;
  std::vector<Tensor> masks;
  weights.reserve(layers.size());
  Tensor h = x.value();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    weights.push_back(trainable ? tape.param(layers[l].weight) : tape.frozen(layers[l].weight));
    if (l + 1 == layers.size()) break;
    // Pre-activation, only needed for the LeakyReLU derivative pattern.
    const Tensor& w = layers[l].weight.value;
    const Tensor& b = layers[l].bias.value;
    Tensor pre(h.rows(), w.cols());
    for (std::size_t r = 0; r < h.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = b[c];
        for (std::size_t k = 0; k < w.rows(); ++k) s += h(r, k) * w(k, c);
        pre(r, c) = s;
      }
    }
    Tensor mask(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      mask[i] = pre[i] > 0.0 ? 1.0 : nn::kLeakySlope;
      pre[i] = pre[i] > 0.0 ? pre[i] : nn::kLeakySlope * pre[i];
    }
    masks.push_back(std::move(mask));
    h = std::move(pre);
  }
  ad::Var g = ad::matmul_nt(tape.constant(Tensor(x.rows(), 1, 1.0)), weights.back());
  for (std::size_t l = layers.size() - 1; l-- > 0;) {
    g = ad::matmul_nt(ad::mul_const(g, masks[l]), weights[l]);
  }
  return g;
}

Tensor Discriminator::evaluate(const Tensor& x) const {
  ad::Tape tape;
  ad::Var l = net_.forward_frozen(tape, tape.constant(x));
  if (spec_.kind == GanKind::Bce) l = ad::sigmoid(l);
  return l.value();
}

nlohmann::json Discriminator::to_json() const {
  return {{"input_dim", spec_.input_dim},
          {"hidden_width", spec_.hidden_width},
          {"kind", to_string(spec_.kind)},
          {"dropout", spec_.dropout},
          {"net", net_.to_json()}};
}

Discriminator Discriminator::from_json(const nlohmann::json& j) {
  Discriminator d;
  d.spec_.input_dim = j.at("input_dim").get<std::size_t>();
  d.spec_.hidden_width = j.at("hidden_width").get<std::size_t>();
  d.spec_.kind = gan_kind_from_string(j.at("kind").get<std::string>());
  d.spec_.dropout = j.at("dropout").get<double>();
  d.net_ = nn::Mlp::from_json(j.at("net"));
  return d;
}

ad::Var bce_discriminator_loss(ad::Var real_logits, ad::Var fake_logits) {
  // -log sigmoid(l) = softplus(-l);  -log(1 - sigmoid(l)) = softplus(l)
  return ad::add(ad::mean(ad::softplus(ad::scale(real_logits, -1.0))),
                 ad::mean(ad::softplus(fake_logits)));
}

ad::Var gradient_penalty(ad::Var grad_norms, double penalty) {
  return ad::scale(ad::mean(ad::square(ad::add_scalar(grad_norms, -1.0))), penalty);
}

ad::Var gp_discriminator_loss(ad::Var d_real, ad::Var d_fake, ad::Var grad_norms, double penalty) {
  return ad::add(ad::sub(ad::mean(d_fake), ad::mean(d_real)), gradient_penalty(grad_norms, penalty));
}

ad::Var generator_adversarial_term(GanKind kind, ad::Var fake_out) {
  if (kind == GanKind::Bce) return ad::mean(ad::softplus(ad::scale(fake_out, -1.0)));
  return ad::scale(ad::mean(fake_out), -1.0);
}

ad::Var hybrid_generator_objective(ad::Var adversarial, ad::Var data_log_density, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("hybrid loss: lambda must be >= 0");
  return ad::sub(adversarial, ad::scale(ad::mean(data_log_density), lambda));
}

namespace {

void require_batch(const Tensor& t, std::size_t width, const char* what) {
  if (t.rows() == 0) throw ValidationError(std::string(what) + ": empty batch");
  if (t.cols() != width) throw ValidationError(std::string(what) + ": batch width mismatch");
}

}  // namespace

ad::Var discriminator_loss(ad::Tape& tape, Discriminator& disc, const Tensor& real,
                           const Tensor& fake, GanKind kind, Rng& rng, bool train_disc) {
  require_batch(real, disc.spec().input_dim, "discriminator_loss(real)");
  require_batch(fake, disc.spec().input_dim, "discriminator_loss(fake)");
  Rng* drop = kind == GanKind::Bce ? &rng : nullptr;
  ad::Var real_v = tape.constant(real);
  ad::Var fake_v = tape.constant(fake);
  if (kind == GanKind::Bce) {
    return bce_discriminator_loss(disc.logits(tape, real_v, train_disc, drop),
                                  disc.logits(tape, fake_v, train_disc, drop));
  }
  // Interpolates pair real row i with fake row i mod n_fake.
  Tensor mix(real.rows(), real.cols());
  for (std::size_t r = 0; r < real.rows(); ++r) {
    const double u = rng.uniform();
    const std::size_t fr = r % fake.rows();
    for (std::size_t c = 0; c < real.cols(); ++c) {
      mix(r, c) = u * real(r, c) + (1.0 - u) * fake(fr, c);
    }
  }
  ad::Var grad = disc.input_gradient(tape, tape.constant(mix), train_disc);
  ad::Var norms = ad::sqrt(ad::add_scalar(ad::row_sum(ad::square(grad)), 1e-12));
  return gp_discriminator_loss(disc.logits(tape, real_v, train_disc),
                               disc.logits(tape, fake_v, train_disc), norms,
                               traits(kind).penalty);
}

ad::Var generator_hybrid_loss(ad::Tape& tape, FlowModel& model, Discriminator& disc,
                              const Tensor& data, GanKind kind, double lambda, Rng& rng,
                              bool train_model, ad::Var* data_log_density) {
  require_batch(data, model.input_dim(), "generator_hybrid_loss");
  Tensor z(data.rows(), data.cols());
  for (double& v : z.data()) v = rng.normal();
  ad::Var fake = model.inverse(tape, tape.constant(z), train_model);
  Rng* drop = kind == GanKind::Bce ? &rng : nullptr;
  ad::Var adv = generator_adversarial_term(kind, disc.logits(tape, fake, false, drop));
  ad::Var ll = model.log_density(tape, tape.constant(data), train_model);
  if (data_log_density != nullptr) *data_log_density = ll;
  return hybrid_generator_objective(adv, ll, lambda);
}

FlowGan::FlowGan(FlowModel model, const GanConfig& config, Rng& rng)
    : model_(std::move(model)), config_(config) {
  const GanKindTraits t = traits(config_.kind);
  if (config_.discriminator_lr <= 0.0) config_.discriminator_lr = t.discriminator_lr;
  if (config_.discriminator_hidden == 0) config_.discriminator_hidden = 4 * model_.input_dim();
  if (config_.lambda < 0.0) throw ValidationError("gan: lambda must be >= 0");
  DiscriminatorSpec ds;
  ds.input_dim = model_.input_dim();
  ds.hidden_width = config_.discriminator_hidden;
  ds.kind = config_.kind;
  ds.dropout = t.dropout;
  Rng disc_rng = rng.stream("discriminator.init");
  disc_ = Discriminator(ds, disc_rng);
  gen_opt_ = Adam(AdamConfig{config_.generator_lr});
  disc_opt_ = Adam(AdamConfig{config_.discriminator_lr});
}

double FlowGan::discriminator_update(const Tensor& batch, Rng& rng) {
  Tensor fake = model_.sample(batch.rows(), rng);
  ad::Tape tape;
  ad::Var loss = discriminator_loss(tape, disc_, batch, fake, config_.kind, rng, true);
  tape.backward(loss);
  auto params = disc_.parameters();
  disc_opt_.step(params, tape.gradients(params));
  ++discriminator_updates_;
  return loss.value().item();
}

double FlowGan::generator_update(const Tensor& batch, Rng& rng, double* mean_ll) {
  ad::Tape tape;
  ad::Var ll;
  ad::Var loss = generator_hybrid_loss(tape, model_, disc_, batch, config_.kind, config_.lambda,
                                       rng, true, &ll);
  tape.backward(loss);
  auto params = model_.parameters();
  gen_opt_.step(params, tape.gradients(params));
  ++generator_updates_;
  if (mean_ll != nullptr) *mean_ll = ad::mean(ll).value().item();
  return loss.value().item();
}

GanLossReport FlowGan::train_step(const Tensor& batch, Rng& rng) {
  require_batch(batch, model_.input_dim(), "gan_train_step");
  const GanKindTraits t = traits(config_.kind);
  GanLossReport report;
  for (int i = 0; i < t.discriminator_steps; ++i) {
    report.discriminator_loss = discriminator_update(batch, rng);
    ++report.discriminator_steps;
  }
  for (int i = 0; i < t.generator_steps; ++i) {
    report.generator_loss = generator_update(batch, rng, &report.mean_log_likelihood);
    ++report.generator_steps;
  }
  return report;
}

nlohmann::json FlowGan::to_json() const {
  return {{"kind", to_string(config_.kind)},
          {"lambda", config_.lambda},
          {"generator_lr", config_.generator_lr},
          {"discriminator_lr", config_.discriminator_lr},
          {"discriminator_hidden", config_.discriminator_hidden},
          {"flow", model_.to_json()},
          {"discriminator", disc_.to_json()},
          {"generator_optimizer", gen_opt_.to_json()},
          {"discriminator_optimizer", disc_opt_.to_json()},
          {"generator_updates", generator_updates_},
          {"discriminator_updates", discriminator_updates_}};
}

FlowGan FlowGan::from_json(const nlohmann::json& j) {
  FlowGan g;
  g.config_.kind = gan_kind_from_string(j.at("kind").get<std::string>());
  g.config_.lambda = j.at("lambda").get<double>();
  g.config_.generator_lr = j.at("generator_lr").get<double>();
  g.config_.discriminator_lr = j.at("discriminator_lr").get<double>();
  g.config_.discriminator_hidden = j.at("discriminator_hidden").get<std::size_t>();
  g.model_ = FlowModel::from_json(j.at("flow"));
  g.disc_ = Discriminator::from_json(j.at("discriminator"));
  g.gen_opt_ = Adam::from_json(j.at("generator_optimizer"));
  g.disc_opt_ = Adam::from_json(j.at("discriminator_optimizer"));
  g.generator_updates_ = j.at("generator_updates").get<std::int64_t>();
  g.discriminator_updates_ = j.at("discriminator_updates").get<std::int64_t>();
  return g;
}

}  // namespace cped::flow
