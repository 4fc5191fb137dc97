#include <cmath>
#include <functional>

#include "cped/adam.hpp"
#include "cped/autodiff.hpp"
#include "cped/error.hpp"
#include "cped/nn.hpp"
#include "cped/rng.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace cped;
using cped::testing::finite_difference;
using cped::testing::random_tensor;
using cped::testing::relative_error;

TEST_CASE("forward examples") {
  ad::Tape tape;
  ad::Var y = ad::matmul(tape.constant(Tensor{{1, 2}}), tape.constant(Tensor{{1}, {1}}));
  CHECK(y.value().item() == 3.0);

  ad::Var l = ad::leaky_relu(tape.constant(Tensor{{-1, 2}}), nn::kLeakySlope);
  CHECK(l.value()[0] == doctest::Approx(-0.01).epsilon(1e-15));
  CHECK(l.value()[1] == 2.0);

  CHECK(ad::tanh(tape.constant(Tensor{{0}})).value().item() == 0.0);
}

TEST_CASE("forward rejects shape mismatch and non-finite output") {
  ad::Tape tape;
  CHECK_THROWS_AS(ad::matmul(tape.constant(Tensor(1, 2)), tape.constant(Tensor(3, 1))),
                  ValidationError);
  CHECK_THROWS_AS(ad::add(tape.constant(Tensor(2, 3)), tape.constant(Tensor(3, 2))),
                  ValidationError);
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor{{0.0}})), NumericError);
  CHECK_THROWS_AS(ad::exp(tape.constant(Tensor{{1000.0}})), NumericError);
}

TEST_CASE("backward examples") {
  ad::Tape tape;
  ad::Var x = tape.variable(Tensor{{3.0}});
  tape.backward(ad::square(x));
  CHECK(tape.grad(x).item() == 6.0);

  ad::Tape t2;
  ad::Var v = t2.variable(Tensor{{0.0, 0.0}});
  t2.backward(ad::sum(ad::exp(v)));
  CHECK(t2.grad(v) == Tensor{{1.0, 1.0}});
}

TEST_CASE("backward before any forward pass is an error") {
  ad::Tape tape;
  ad::Tape other;
  ad::Var foreign = other.variable(Tensor{{1.0}});
  CHECK_THROWS_AS(tape.backward(foreign), ValidationError);
  ad::Var x = tape.variable(Tensor{{1.0, 2.0}});
  CHECK_THROWS_AS(tape.backward(x, Tensor{{1.0}}), ValidationError);
}

TEST_CASE("unreached trainable parameters receive zero gradients") {
  ad::Parameter used{"used", Tensor{{2.0}}};
  ad::Parameter unused{"unused", Tensor(2, 2, 1.0)};
  ad::Tape tape;
  ad::Var u = tape.param(used);
  tape.param(unused);
  tape.backward(ad::square(u));
  std::vector<ad::Parameter*> params{&used, &unused};
  auto g = tape.gradients(params);
  CHECK(g[0].item() == 4.0);
  CHECK(g[1] == Tensor(2, 2, 0.0));
}

namespace {

// Checks d(sum(w * op(x)))/dx against finite differences for random x, w.
void check_unary(const char* name, const std::function<ad::Var(ad::Var)>& op, double lo,
                 double hi, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor x0 = random_tensor(3, 4, rng, lo, hi);
  ad::Tape probe;
  const Tensor shape = op(probe.constant(x0)).value();
  const Tensor w = random_tensor(shape.rows(), shape.cols(), rng);
  auto f = [&](const Tensor& x) {
    ad::Tape t;
    return ad::sum(ad::mul(op(t.constant(x)), t.constant(w))).value().item();
  };
  ad::Tape tape;
  ad::Var x = tape.variable(x0);
  tape.backward(ad::sum(ad::mul(op(x), tape.constant(w))));
  const double err = relative_error(tape.grad(x), finite_difference(f, x0));
  INFO(name << " relative error " << err);
  CHECK(err < 1e-4);
}

}  // namespace

TEST_CASE("unary primitives match finite differences") {
  check_unary("leaky_relu", [](ad::Var v) { return ad::leaky_relu(v, nn::kLeakySlope); }, -1, 1, 10);
  check_unary("relu", [](ad::Var v) { return ad::relu(v); }, -1, 1, 11);
  check_unary("tanh", [](ad::Var v) { return ad::tanh(v); }, -2, 2, 12);
  check_unary("exp", [](ad::Var v) { return ad::exp(v); }, -2, 2, 13);
  check_unary("log", [](ad::Var v) { return ad::log(v); }, 0.2, 3, 14);
  check_unary("sigmoid", [](ad::Var v) { return ad::sigmoid(v); }, -4, 4, 15);
  check_unary("softplus", [](ad::Var v) { return ad::softplus(v); }, -4, 4, 16);
  check_unary("log_sigmoid", [](ad::Var v) { return ad::log_sigmoid(v); }, -4, 4, 17);
  check_unary("square", [](ad::Var v) { return ad::square(v); }, -2, 2, 18);
  check_unary("sqrt", [](ad::Var v) { return ad::sqrt(v); }, 0.3, 3, 19);
  check_unary("scale", [](ad::Var v) { return ad::scale(v, -2.5); }, -1, 1, 20);
  check_unary("add_scalar", [](ad::Var v) { return ad::add_scalar(v, 0.7); }, -1, 1, 21);
  check_unary("row_sum", [](ad::Var v) { return ad::row_sum(ad::square(v)); }, -1, 1, 22);
  check_unary("col_mean", [](ad::Var v) { return ad::col_mean(ad::tanh(v)); }, -1, 1, 23);
  check_unary("mean", [](ad::Var v) { return ad::mean(ad::exp(v)); }, -1, 1, 24);
  check_unary("gather_cols", [](ad::Var v) {
    const std::size_t idx[] = {3, 0, 0};
    return ad::gather_cols(ad::square(v), idx);
  }, -1, 1, 25);
  check_unary("mul_const", [](ad::Var v) {
    return ad::mul_const(v, Tensor{{1, 0, 2, 3}, {0, 1, 1, 1}, {2, 2, 0, 0.5}});
  }, -1, 1, 26);
}

TEST_CASE("binary primitives match finite differences, including broadcasting") {
  Rng rng(30);
  struct Case {
    const char* name;
    std::size_t br, bc;
    std::function<ad::Var(ad::Var, ad::Var)> op;
  };
  const std::vector<Case> cases = {
      {"add same", 3, 4, [](ad::Var a, ad::Var b) { return ad::add(a, b); }},
      {"add row", 1, 4, [](ad::Var a, ad::Var b) { return ad::add(a, b); }},
      {"sub col", 3, 1, [](ad::Var a, ad::Var b) { return ad::sub(a, b); }},
      {"mul scalar", 1, 1, [](ad::Var a, ad::Var b) { return ad::mul(a, b); }},
      {"mul row", 1, 4, [](ad::Var a, ad::Var b) { return ad::mul(a, b); }},
      {"matmul", 4, 2, [](ad::Var a, ad::Var b) { return ad::matmul(a, b); }},
      {"matmul_nt", 5, 4, [](ad::Var a, ad::Var b) { return ad::matmul_nt(a, b); }},
      {"concat", 3, 2, [](ad::Var a, ad::Var b) { return ad::concat_cols(a, b); }},
      {"combine", 3, 2, [](ad::Var a, ad::Var b) {
         const std::size_t ia[] = {0, 2, 4, 5};
         const std::size_t ib[] = {3, 1};
         return ad::combine_cols(a, ia, b, ib);
       }},
  };
  for (const Case& c : cases) {
    const Tensor a0 = random_tensor(3, 4, rng);
    const Tensor b0 = random_tensor(c.br, c.bc, rng);
    ad::Tape probe;
    const Tensor out_shape = c.op(probe.constant(a0), probe.constant(b0)).value();
    const Tensor w = random_tensor(out_shape.rows(), out_shape.cols(), rng);
    auto loss = [&](const Tensor& a, const Tensor& b) {
      ad::Tape t;
      return ad::sum(ad::mul(c.op(t.constant(a), t.constant(b)), t.constant(w))).value().item();
    };
    ad::Tape tape;
    ad::Var a = tape.variable(a0);
    ad::Var b = tape.variable(b0);
    tape.backward(ad::sum(ad::mul(c.op(a, b), tape.constant(w))));
    const double ea = relative_error(
        tape.grad(a), finite_difference([&](const Tensor& x) { return loss(x, b0); }, a0));
    const double eb = relative_error(
        tape.grad(b), finite_difference([&](const Tensor& x) { return loss(a0, x); }, b0));
    INFO(c.name << " errors " << ea << " " << eb);
    CHECK(ea < 1e-4);
    CHECK(eb < 1e-4);
  }
}

TEST_CASE("random 2-layer MLP gradients match central finite differences") {
  Rng rng(40);
  nn::MlpSpec spec{6, {8}, 3, nn::Activation::LeakyRelu, nn::Activation::Tanh};
  nn::Mlp net(spec, rng, "mlp");
  const Tensor x = random_tensor(5, 6, rng);
  const Tensor target = random_tensor(5, 3, rng);
  auto loss_of = [&](nn::Mlp& m) {
    ad::Tape t;
    ad::Var y = m.forward(t, t.constant(x));
    return ad::mean(ad::square(ad::sub(y, t.constant(target)))).value().item();
  };
  ad::Tape tape;
  ad::Var y = net.forward(tape, tape.constant(x));
  tape.backward(ad::mean(ad::square(ad::sub(y, tape.constant(target)))));
  auto params = net.parameters();
  auto grads = tape.gradients(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor fd = finite_difference(
        [&](const Tensor& v) {
          nn::Mlp copy = net;
          copy.parameters()[i]->value = v;
          return loss_of(copy);
        },
        params[i]->value);
    INFO(params[i]->name);
    CHECK(relative_error(grads[i], fd) < 1e-4);
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  ad::Parameter p{"p", Tensor{{0.25, -1.5}}};
  Adam opt(AdamConfig{1e-3});
  std::vector<ad::Parameter*> params{&p};
  std::vector<Tensor> grads{Tensor(1, 2, 0.0)};
  opt.step(params, grads);
  CHECK(p.value == Tensor{{0.25, -1.5}});
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam first step moves a scalar by lr") {
  ad::Parameter p{"p", Tensor{{0.0}}};
  Adam opt(AdamConfig{1e-3});
  std::vector<ad::Parameter*> params{&p};
  std::vector<Tensor> grads{Tensor{{1.0}}};
  opt.step(params, grads);
  CHECK(p.value.item() == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam converges a 1-d quadratic") {
  ad::Parameter p{"p", Tensor{{3.0}}};
  Adam opt(AdamConfig{1e-2});
  std::vector<ad::Parameter*> params{&p};
  int steps = 0;
  for (; steps < 5000; ++steps) {
    const double x = p.value.item();
    if (std::abs(x - 1.0) < 1e-3 && steps > 0) break;
    std::vector<Tensor> grads{Tensor{{2.0 * (x - 1.0)}}};
    opt.step(params, grads);
  }
  CHECK(std::abs(p.value.item() - 1.0) < 1e-3);
  CHECK(steps <= 5000);
}

TEST_CASE("adam rejects non-finite gradients without touching state") {
  ad::Parameter p{"p", Tensor{{1.0}}};
  Adam opt;
  std::vector<ad::Parameter*> params{&p};
  std::vector<Tensor> bad{Tensor{{std::nan("")}}};
  CHECK_THROWS_AS(opt.step(params, bad), NumericError);
  CHECK(opt.step_count() == 0);
  CHECK(p.value.item() == 1.0);
}

TEST_CASE("identical seeds give bit-identical parameter trajectories") {
  auto run = [] {
    Rng rng(99);
    nn::Mlp net(nn::MlpSpec{4, {16, 16}, 2}, rng, "net");
    Adam opt(AdamConfig{1e-3});
    Rng data = rng.stream("data");
    for (int step = 0; step < 20; ++step) {
      const Tensor x = random_tensor(8, 4, data);
      ad::Tape tape;
      ad::Var y = net.forward(tape, tape.constant(x));
      tape.backward(ad::mean(ad::square(y)));
      auto params = net.parameters();
      opt.step(params, tape.gradients(params));
    }
    return net.to_json().dump();
  };
  CHECK(run() == run());
}

TEST_CASE("rng streams are independent of sibling consumption") {
  Rng root(5);
  Rng a1 = root.stream("a");
  Rng b1 = root.stream("b");
  const double first_b = b1.uniform();
  for (int i = 0; i < 100; ++i) a1.uniform();
  Rng b2 = root.stream("b");
  CHECK(b2.uniform() == first_b);
  CHECK(root.stream("a").uniform() != root.stream("b").uniform());
}
