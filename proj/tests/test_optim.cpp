#include "catch_amalgamated.hpp"

#include <cmath>
#include <limits>

#include "ecpp/optim.hpp"

using namespace ecpp;
using Catch::Approx;

namespace {

OptimConfig cfg64() {
  OptimConfig c;
  c.base_lr = 0.4;
  c.batch_size = 64;
  c.warmup_epochs = 10;
  c.total_epochs = 100;
  return c;
}

ParamList<double> scalar_param(double value, double grad, ParamRole role = ParamRole::Weight) {
  auto t = TensorD::from({1}, {value}, true);
  backward(scale(t, grad));
  return {{"p", role, t}};
}

}  // namespace

TEST_CASE("learning rate schedule", "[optim]") {
  const auto c = cfg64();
  CHECK(c.effective_lr() == Approx(0.1));
  CHECK(lr_at(c, 0.0) == 0.0);
  CHECK(lr_at(c, 10.0) == Approx(0.1).margin(1e-15));
  CHECK(lr_at(c, 5.0) == Approx(0.05).margin(1e-15));
  CHECK(std::abs(lr_at(c, 100.0)) < 1e-9);
  CHECK(lr_at(c, 55.0) == Approx(0.05).margin(1e-12));
  CHECK(std::abs(lr_at(c, 10.0 - 1e-9) - lr_at(c, 10.0 + 1e-9)) < 1e-9);
  for (double t = 10.0; t < 100.0; t += 0.5) CHECK(lr_at(c, t + 0.5) <= lr_at(c, t));
  CHECK_THROWS(lr_at(c, -0.1));
  CHECK_THROWS(lr_at(c, 100.5));
  auto bad = c;
  bad.total_epochs = 10;
  CHECK_THROWS(lr_at(bad, 0.0));

  CHECK(cosine_lr(1.0, 0.0, 10.0) == 1.0);
  CHECK(cosine_lr(1.0, 5.0, 10.0) == Approx(0.5));
  CHECK(std::abs(cosine_lr(1.0, 10.0, 10.0)) < 1e-12);
}

TEST_CASE("sgd step examples", "[optim]") {
  std::vector<double> p{1.5, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
  sgd_step<double>(p, g, v, 0.9, 0.0, 0.1);
  CHECK(p == std::vector<double>{1.5, -2.0});

  std::vector<double> q{1.0}, gq{0.25}, vq{0.0};
  sgd_step<double>(q, gq, vq, 0.0, 0.0, 0.2);
  CHECK(q[0] == Approx(1.0 - 0.2 * 0.25).margin(1e-15));

  // Momentum and coupled weight decay, two steps by hand.
  std::vector<double> r{2.0}, gr{1.0}, vr{0.0};
  sgd_step<double>(r, gr, vr, 0.9, 0.1, 0.5);
  CHECK(vr[0] == Approx(1.0 + 0.2));
  CHECK(r[0] == Approx(2.0 - 0.5 * 1.2));
  sgd_step<double>(r, gr, vr, 0.9, 0.1, 0.5);
  CHECK(vr[0] == Approx(0.9 * 1.2 + 1.0 + 0.1 * 1.4));
  CHECK(r[0] == Approx(1.4 - 0.5 * (0.9 * 1.2 + 1.0 + 0.1 * 1.4)));

  std::vector<double> short_v{0.0};
  CHECK_THROWS_AS(sgd_step<double>(p, g, short_v, 0.9, 0.0, 0.1), ShapeError);
}

TEST_CASE("quadratic bowl converges for lr below 2", "[optim]") {
  for (double lr : {0.1, 0.5, 1.0, 1.5, 1.9}) {
    std::vector<double> w{3.0}, v{0.0};
    for (int i = 0; i < 2000; ++i) {
      std::vector<double> g{w[0]};
      sgd_step<double>(w, g, v, 0.0, 0.0, lr);
    }
    CHECK(std::abs(w[0]) < 1e-6);
  }
  std::vector<double> w{3.0}, v{0.0};
  for (int i = 0; i < 50; ++i) {
    std::vector<double> g{w[0]};
    sgd_step<double>(w, g, v, 0.0, 0.0, 2.1);
  }
  CHECK(std::abs(w[0]) > 3.0);
}

TEST_CASE("biases are exempt from weight decay", "[optim]") {
  CHECK(decay_exempt(ParamRole::Bias));
  CHECK_FALSE(decay_exempt(ParamRole::Weight));
  auto weight = scalar_param(2.0, 0.0, ParamRole::Weight);
  auto bias = scalar_param(2.0, 0.0, ParamRole::Bias);
  Sgd<double> ow(weight, 0.9, 0.1), ob(bias, 0.9, 0.1);
  ow.step(weight, 0.5);
  ob.step(bias, 0.5);
  CHECK(weight[0].value.at(0) == Approx(2.0 - 0.5 * 0.1 * 2.0));
  CHECK(bias[0].value.at(0) == 2.0);
  CHECK(ob.velocity()[0][0] == 0.0);
}

TEST_CASE("sgd wrapper", "[optim]") {
  auto a = scalar_param(1.0, 0.5), b = scalar_param(1.0, 0.5);
  Sgd<double> oa(a, 0.9, 0.0), ob(b, 0.9, 0.0);
  oa.step(a, 0.1);
  ob.step(b, 0.1);
  CHECK(a[0].value.at(0) == b[0].value.at(0));
  CHECK(a[0].value.at(0) == Approx(0.95));

  Sgd<double>::zero_grad(a);
  CHECK_FALSE(a[0].value.has_grad());
  oa.step(a, 0.1);  // no gradient: momentum only
  CHECK(a[0].value.at(0) == Approx(0.95 - 0.1 * 0.9 * 0.5));

  auto nan = scalar_param(1.0, std::numeric_limits<double>::quiet_NaN());
  Sgd<double> on(nan, 0.9, 0.0);
  set_checked_math(false);
  CHECK_THROWS_AS(on.step(nan, 0.1), NonFiniteGradient);
  set_checked_math(true);
  CHECK(nan[0].value.at(0) == 1.0);
}
