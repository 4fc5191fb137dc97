#include <cmath>
#include <numbers>

#include "cped/error.hpp"
#include "cped/flow.hpp"
#include "cped/flow_gan.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"
#include "model_fixtures.hpp"

using namespace cped;
using namespace cped::flow;
using cped::testing::finite_difference;
using cped::testing::random_flow;
using cped::testing::random_tensor;
using cped::testing::relative_error;

namespace {

FlowModel identity_flow(std::size_t dim = 2) {
  Rng rng(1);
  FlowSpec spec;
  spec.input_dim = dim;
  spec.hidden_width = 8;
  spec.conditioner_hidden_layers = 2;
  return FlowModel(spec, rng);
}

FlowModel scaling_flow() {
  FlowModel m = identity_flow();
  m.log_scale().value = Tensor{{std::log(2.0), std::log(2.0)}};
  return m;
}

// d(up)/dx by central differences of the frozen forward map, d x d.
Tensor numerical_jacobian(const FlowModel& m, const Tensor& x, double h = 1e-5) {
  const std::size_t d = x.cols();
  Tensor jac(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    Tensor up = x, down = x;
    up[j] += h;
    down[j] -= h;
    const Tensor zu = m.forward_f(up), zd = m.forward_f(down);
    for (std::size_t i = 0; i < d; ++i) jac(i, j) = (zu[i] - zd[i]) / (2.0 * h);
  }
  return jac;
}

}  // namespace

TEST_CASE("identity flow passes data through") {
  FlowModel m = identity_flow();
  const Tensor x{{0.3, -1.2}, {2.0, 0.5}};
  Tensor logdet;
  CHECK(m.forward_f(x, &logdet) == x);
  CHECK(logdet == Tensor(2, 1, 0.0));
  CHECK(m.inverse_g(x) == x);
  CHECK(m.log_density(Tensor{{0.0, 0.0}}).item() ==
        doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(m.log_density(Tensor{{0.0, 0.0}}).item() == doctest::Approx(-1.8379).epsilon(1e-4));
}

TEST_CASE("diagonal scaling examples") {
  FlowModel m = scaling_flow();
  Tensor logdet;
  const Tensor z = m.forward_f(Tensor{{0.0, 0.0}}, &logdet);
  CHECK(z == Tensor{{0.0, 0.0}});
  CHECK(logdet.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(logdet.item() == doctest::Approx(1.3863).epsilon(1e-4));

  const Tensor x = m.inverse_g(Tensor{{2.0, 4.0}});
  CHECK(x(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(x(0, 1) == doctest::Approx(2.0).epsilon(1e-15));

  CHECK(m.log_density(Tensor{{0.0, 0.0}}).item() == doctest::Approx(-0.4516).epsilon(1e-4));
}

TEST_CASE("flow rejects non-finite and mis-shaped input") {
  FlowModel m = identity_flow();
  CHECK_THROWS_AS(m.forward_f(Tensor{{std::nan(""), 0.0}}), NumericError);
  CHECK_THROWS_AS(m.inverse_g(Tensor{{INFINITY, 0.0}}), NumericError);
  CHECK_THROWS_AS(m.log_density(Tensor{{1.0, 2.0, 3.0}}), ValidationError);
  Rng rng(2);
  CHECK_THROWS_AS(m.sample(0, rng), ValidationError);
}

TEST_CASE("consecutive coupling layers use complementary masks") {
  for (std::size_t dim : {2, 3, 5, 6}) {
    FlowModel m = identity_flow(dim);
    const auto& layers = m.layers();
    REQUIRE(layers.size() == 4);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      CHECK(layers[l].passive.size() + layers[l].active.size() == dim);
      if (l > 0) {
        CHECK(layers[l].passive == layers[l - 1].active);
        CHECK(layers[l].active == layers[l - 1].passive);
      }
    }
    CHECK(layers[0].passive.size() == (dim + 1) / 2);
  }
}

TEST_CASE("non-complementary masks are rejected on reload") {
  Rng rng(3);
  nlohmann::json j = random_flow(4, rng).to_json();
  j["layers"][1]["parity"] = j["layers"][0]["parity"];
  CHECK_THROWS_AS(FlowModel::from_json(j), ValidationError);
}

TEST_CASE("round trip is exact to 1e-9 on 10^4 random points") {
  Rng rng(4);
  for (std::size_t dim : {2, 3, 4}) {
    FlowModel m = random_flow(dim, rng);
    const Tensor x = random_tensor(10000, dim, rng, -4.0, 4.0);
    CHECK(max_abs_diff(m.inverse_g(m.forward_f(x)), x) < 1e-9);
    CHECK(max_abs_diff(m.forward_f(m.inverse_g(x)), x) < 1e-9);
  }
}

TEST_CASE("logdet matches the numerical Jacobian for dims up to 6") {
  Rng rng(5);
  for (std::size_t dim = 2; dim <= 6; ++dim) {
    FlowModel m = random_flow(dim, rng);
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor(1, dim, rng, -2.0, 2.0);
      Tensor logdet;
      m.forward_f(x, &logdet);
      const double oracle = cped::testing::log_abs_det(numerical_jacobian(m, x));
      INFO("dim " << dim << " logdet " << logdet.item() << " oracle " << oracle);
      CHECK(std::abs(logdet.item() - oracle) < 1e-6);
    }
  }
}

TEST_CASE("2-d density integrates to one on a grid") {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    FlowModel m = random_flow(2, rng, 16, 0.3, 0.3);
    // Bound the support: latent radius 6 mapped back, plus the largest shifts seen.
    const Tensor ring = [&] {
      Tensor z(720, 2);
      for (std::size_t i = 0; i < 720; ++i) {
        const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / 720.0;
        z(i, 0) = 6.0 * std::cos(t);
        z(i, 1) = 6.0 * std::sin(t);
      }
      return m.inverse_g(z);
    }();
    double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
    for (std::size_t i = 0; i < ring.rows(); ++i) {
      for (int c = 0; c < 2; ++c) {
        lo[c] = std::min(lo[c], ring(i, c));
        hi[c] = std::max(hi[c], ring(i, c));
      }
    }
    const std::size_t n = 400;
    const double hx = (hi[0] - lo[0]) * 1.2 / n, hy = (hi[1] - lo[1]) * 1.2 / n;
    const double x0 = lo[0] - 0.1 * (hi[0] - lo[0]), y0 = lo[1] - 0.1 * (hi[1] - lo[1]);
    Tensor grid(n * n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        grid(i * n + j, 0) = x0 + (static_cast<double>(i) + 0.5) * hx;
        grid(i * n + j, 1) = y0 + (static_cast<double>(j) + 0.5) * hy;
      }
    }
    const Tensor ld = m.log_density(grid);
    double mass = 0.0;
    for (double v : ld.data()) mass += std::exp(v);
    mass *= hx * hy;
    INFO("mass " << mass);
    CHECK(mass >= 0.98);
    CHECK(mass <= 1.02);
  }
}

TEST_CASE("identity flow samples are standard normal") {
  FlowModel m = identity_flow();
  Rng rng(7);
  const Tensor s = m.sample(100000, rng);
  double mean[2] = {0, 0}, cov[3] = {0, 0, 0};
  for (std::size_t i = 0; i < s.rows(); ++i) {
    mean[0] += s(i, 0);
    mean[1] += s(i, 1);
  }
  mean[0] /= 1e5;
  mean[1] /= 1e5;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const double a = s(i, 0) - mean[0], b = s(i, 1) - mean[1];
    cov[0] += a * a;
    cov[1] += a * b;
    cov[2] += b * b;
  }
  for (double& c : cov) c /= 1e5;
  // 5 standard errors at n = 1e5.
  CHECK(std::abs(mean[0]) < 5.0 / std::sqrt(1e5));
  CHECK(std::abs(mean[1]) < 5.0 / std::sqrt(1e5));
  CHECK(std::abs(cov[0] - 1.0) < 5.0 * std::sqrt(2.0 / 1e5));
  CHECK(std::abs(cov[2] - 1.0) < 5.0 * std::sqrt(2.0 / 1e5));
  CHECK(std::abs(cov[1]) < 5.0 / std::sqrt(1e5));
}

TEST_CASE("scaled flow samples have variance 1/4") {
  FlowModel m = scaling_flow();
  Rng rng(8);
  const Tensor s = m.sample(100000, rng);
  for (int c = 0; c < 2; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) mu += s(i, c);
    mu /= 1e5;
    for (std::size_t i = 0; i < s.rows(); ++i) var += (s(i, c) - mu) * (s(i, c) - mu);
    var /= 1e5;
    CHECK(std::abs(var - 0.25) < 5.0 * 0.25 * std::sqrt(2.0 / 1e5));
  }
}

TEST_CASE("loss plug-in values") {
  ad::Tape tape;
  ad::Var ones = tape.constant(Tensor(4, 1, 1.0));
  ad::Var zeros = tape.constant(Tensor(4, 1, 0.0));
  CHECK(gp_discriminator_loss(ones, zeros, ones, 0.5).value().item() == -1.0);

  // D = 0.5 everywhere means logits 0.
  CHECK(bce_discriminator_loss(zeros, zeros).value().item() ==
        doctest::Approx(-2.0 * std::log(0.5)).epsilon(1e-14));
  CHECK(bce_discriminator_loss(zeros, zeros).value().item() ==
        doctest::Approx(1.3863).epsilon(1e-4));

  ad::Var threes = tape.constant(Tensor(4, 1, 3.0));
  CHECK(gradient_penalty(threes, 0.5).value().item() == 2.0);

  ad::Var halves = tape.constant(Tensor(4, 1, 0.5));
  ad::Var ll = tape.constant(Tensor(4, 1, -2.0));
  ad::Var adv = generator_adversarial_term(GanKind::GradientPenalty, halves);
  CHECK(hybrid_generator_objective(adv, ll, 1.0).value().item() == 1.5);
  CHECK(hybrid_generator_objective(adv, ll, 0.0).value().item() == adv.value().item());
  CHECK_THROWS_AS(hybrid_generator_objective(adv, ll, -1.0), ValidationError);

  // Non-saturating BCE generator term at D = 0.5.
  CHECK(generator_adversarial_term(GanKind::Bce, zeros).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("kind traits follow the fixed ratios") {
  CHECK(traits(GanKind::Bce).generator_steps == 5);
  CHECK(traits(GanKind::Bce).discriminator_steps == 1);
  CHECK(traits(GanKind::GradientPenalty).generator_steps == 1);
  CHECK(traits(GanKind::GradientPenalty).discriminator_steps == 5);
  CHECK(traits(GanKind::GradientPenalty).penalty == 0.5);
  CHECK(GanConfig{}.lambda == 1.0);
}

TEST_CASE("discriminator width must stay within [2d, 4d]") {
  Rng rng(9);
  CHECK_THROWS_AS(Discriminator(DiscriminatorSpec{3, 5}, rng), ValidationError);
  CHECK_THROWS_AS(Discriminator(DiscriminatorSpec{3, 13}, rng), ValidationError);
  CHECK_NOTHROW(Discriminator(DiscriminatorSpec{3, 6}, rng));
  CHECK_NOTHROW(Discriminator(DiscriminatorSpec{3, 12}, rng));
}

TEST_CASE("empty batches are rejected") {
  Rng rng(10);
  Discriminator disc(DiscriminatorSpec{2, 8}, rng);
  FlowModel m = identity_flow();
  ad::Tape tape;
  CHECK_THROWS_AS(discriminator_loss(tape, disc, Tensor(0, 2), Tensor(3, 2), GanKind::Bce, rng),
                  ValidationError);
  CHECK_THROWS_AS(generator_hybrid_loss(tape, m, disc, Tensor(0, 2), GanKind::Bce, 1.0, rng),
                  ValidationError);
}

TEST_CASE("discriminator input gradient matches finite differences") {
  Rng rng(11);
  Discriminator disc(DiscriminatorSpec{3, 12}, rng);
  const Tensor x = random_tensor(6, 3, rng);
  ad::Tape tape;
  const Tensor g = disc.input_gradient(tape, tape.constant(x), false).value();
  const Tensor fd = finite_difference(
      [&](const Tensor& v) {
        const Tensor out = disc.evaluate(v);
        double s = 0.0;
        for (double d : out.data()) s += d;
        return s;
      },
      x);
  CHECK(relative_error(g, fd) < 1e-6);
}

TEST_CASE("composite losses match finite differences") {
  Rng rng(12);
  const std::size_t dim = 3;
  for (GanKind kind : {GanKind::Bce, GanKind::GradientPenalty}) {
    int disc_scored = 0, gen_scored = 0;
    for (int attempt = 0; attempt < 10 && (disc_scored < 3 || gen_scored < 3); ++attempt) {
      FlowModel model = random_flow(dim, rng, 8, 0.4, 0.3);
      const Tensor real = random_tensor(6, dim, rng);
      const Tensor fake = random_tensor(6, dim, rng);
      DiscriminatorSpec ds{dim, 8, kind, kind == GanKind::Bce ? 0.2 : 0.0};
      Discriminator disc(ds, rng);
      const std::uint64_t loss_seed = rng.next_u64();

      {
        Rng r(loss_seed);
        ad::Tape tape;
        tape.backward(discriminator_loss(tape, disc, real, fake, kind, r));
        auto params = disc.parameters();
        const auto check = cped::testing::parameter_gradient_check(
            params, tape.gradients(params), [&] {
              Rng rr(loss_seed);
              ad::Tape t;
              return discriminator_loss(t, disc, real, fake, kind, rr).value().item();
            });
        if (check.smooth()) {
          INFO("discriminator_loss " << to_string(kind) << " error " << check.error);
          CHECK(check.error < 1e-4);
          ++disc_scored;
        }
      }
      {
        Rng r(loss_seed);
        ad::Tape tape;
        tape.backward(generator_hybrid_loss(tape, model, disc, real, kind, 0.7, r));
        auto params = model.parameters();
        const auto check = cped::testing::parameter_gradient_check(
            params, tape.gradients(params), [&] {
              Rng rr(loss_seed);
              ad::Tape t;
              return generator_hybrid_loss(t, model, disc, real, kind, 0.7, rr).value().item();
            });
        if (check.smooth()) {
          INFO("generator_hybrid_loss " << to_string(kind) << " error " << check.error);
          CHECK(check.error < 1e-4);
          ++gen_scored;
        }
      }
    }
    CHECK(disc_scored >= 3);
    CHECK(gen_scored >= 3);
  }
}

TEST_CASE("discriminator loss moves only the discriminator; generator loss only the flow") {
  Rng rng(13);
  FlowModel model = random_flow(2, rng, 8);
  Discriminator disc(DiscriminatorSpec{2, 8}, rng);
  const Tensor real = random_tensor(5, 2, rng);
  const Tensor fake = model.sample(5, rng);

  ad::Tape dt;
  // The flow takes part in the tape only through the sampled constants.
  dt.backward(discriminator_loss(dt, disc, real, fake, GanKind::GradientPenalty, rng));
  for (const Tensor& g : dt.gradients(model.parameters())) CHECK(g == Tensor(g.rows(), g.cols()));
  double disc_norm = 0.0;
  for (const Tensor& g : dt.gradients(disc.parameters())) {
    for (double v : g.data()) disc_norm += v * v;
  }
  CHECK(disc_norm > 0.0);

  ad::Tape gt;
  ad::Var loss = generator_hybrid_loss(gt, model, disc, real, GanKind::GradientPenalty, 1.0, rng);
  gt.backward(loss);
  for (const Tensor& g : gt.gradients(disc.parameters())) CHECK(g == Tensor(g.rows(), g.cols()));
  double gen_norm = 0.0;
  for (const Tensor& g : gt.gradients(model.parameters())) {
    for (double v : g.data()) gen_norm += v * v;
  }
  CHECK(gen_norm > 0.0);
}

TEST_CASE("update ratios are exact over 100 train steps") {
  Rng rng(14);
  for (GanKind kind : {GanKind::Bce, GanKind::GradientPenalty}) {
    GanConfig cfg;
    cfg.kind = kind;
    FlowSpec spec;
    spec.hidden_width = 8;
    spec.conditioner_hidden_layers = 1;
    FlowGan gan(FlowModel(spec, rng), cfg, rng);
    Rng data = rng.stream("data");
    for (int i = 0; i < 100; ++i) {
      GanLossReport r = gan.train_step(random_tensor(16, 2, data), data);
      CHECK(std::isfinite(r.discriminator_loss));
      CHECK(std::isfinite(r.generator_loss));
    }
    const GanKindTraits t = traits(kind);
    CHECK(gan.generator_updates() == 100 * t.generator_steps);
    CHECK(gan.discriminator_updates() == 100 * t.discriminator_steps);
    if (kind == GanKind::GradientPenalty) {
      CHECK(gan.discriminator_updates() == 5 * gan.generator_updates());
    } else {
      CHECK(gan.generator_updates() == 5 * gan.discriminator_updates());
    }
  }
}

TEST_CASE("checkpoint reload gives bit-identical log densities") {
  Rng rng(15);
  FlowGan gan(random_flow(3, rng, 8), GanConfig{}, rng);
  Rng data(16);
  for (int i = 0; i < 3; ++i) gan.train_step(random_tensor(8, 3, data), data);
  const std::string text = gan.to_json().dump();
  FlowGan back = FlowGan::from_json(nlohmann::json::parse(text));
  const Tensor x = random_tensor(50, 3, data, -3, 3);
  CHECK(back.model().log_density(x) == gan.model().log_density(x));
  CHECK(back.to_json().dump() == text);
}
