#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "genadapt/autodiff.hpp"
#include "genadapt/errors.hpp"
#include "genadapt/rng.hpp"
#include "test_util.hpp"

using namespace genadapt;
using numerics::GradMap;
using numerics::ParamMap;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

TEST_CASE("tensor shape/value consistency is enforced") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("non-finite values are a checked failure") {
  Tape tape;
  CHECK_THROWS_AS(tape.leaf(Tensor({2}, {1.0, std::nan("")})), NumericError);
  Var x = tape.leaf(Tensor({1}, {2000.0}).set_requires_grad(true));
  CHECK_THROWS_AS(tape.exp(x), NumericError);  // overflow to inf
}

TEST_CASE("matmul identity and hand dot-product") {
  Tape tape;
  Var i2 = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var a = tape.constant(Tensor({2, 2}, {3, 1, 4, 1}));
  CHECK(tape.value(tape.matmul(i2, a)).bit_equal(
      Tensor({2, 2}, {3, 1, 4, 1})));

  Var m = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var v = tape.constant(Tensor({2, 1}, {1, 1}));
  const Tensor& r = tape.value(tape.matmul(m, v));
  CHECK(r.at(0, 0) == 3.0);
  CHECK(r.at(1, 0) == 7.0);
}

TEST_CASE("matmul rejects mismatched inner extents") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(tape.matmul(a, b), DimensionError);
}

TEST_CASE("matmul associativity on random tensors") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Var a = tape.constant(testutil::random_tensor({3, 4}, rng));
    Var b = tape.constant(testutil::random_tensor({4, 5}, rng));
    Var c = tape.constant(testutil::random_tensor({5, 2}, rng));
    const Tensor& left = tape.value(tape.matmul(tape.matmul(a, b), c));
    const Tensor& right = tape.value(tape.matmul(a, tape.matmul(b, c)));
    for (std::size_t i = 0; i < left.size(); ++i)
      CHECK(testutil::close(left[i], right[i], 1e-10));
  }
}

TEST_CASE("softmax: symmetry, stabilization, closed form") {
  Tape tape;
  const Tensor& u = tape.value(tape.softmax(tape.constant(Tensor({1, 3}, {0, 0, 0}))));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  const Tensor& big =
      tape.value(tape.softmax(tape.constant(Tensor({1, 2}, {1000, 1000}))));
  CHECK(big[0] == doctest::Approx(0.5));
  CHECK(big[1] == doctest::Approx(0.5));

  const Tensor& cf =
      tape.value(tape.softmax(tape.constant(Tensor({1, 2}, {0.0, std::log(3.0)}))));
  CHECK(cf[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cf[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one, outputs in (0,1)") {
  Rng rng(11);
  Tape tape;
  Var x = tape.constant(testutil::random_tensor({6, 5}, rng, -30.0, 30.0));
  const Tensor& s = tape.value(tape.softmax(x));
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(s.at(r, c) > 0.0);
      CHECK(s.at(r, c) < 1.0);
      sum += s.at(r, c);
    }
    CHECK(testutil::close(sum, 1.0, 1e-12));
  }
}

TEST_CASE("layer_norm examples") {
  Tape tape;
  Var gain = tape.constant(Tensor({2}, {1, 1}));
  Var bias = tape.constant(Tensor({2}, {0, 0}));

  const Tensor& zero =
      tape.value(tape.layer_norm(tape.constant(Tensor({1, 2}, {5, 5})), gain, bias, 1e-5));
  CHECK(zero[0] == doctest::Approx(0.0));
  CHECK(zero[1] == doctest::Approx(0.0));

  const Tensor& norm =
      tape.value(tape.layer_norm(tape.constant(Tensor({1, 2}, {1, 3})), gain, bias, 1e-12));
  CHECK(norm[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(norm[1] == doctest::Approx(1.0).epsilon(1e-6));

  Var zero_gain = tape.constant(Tensor({2}, {0, 0}));
  Var b2 = tape.constant(Tensor({2}, {0.3, -0.7}));
  const Tensor& broadcast = tape.value(
      tape.layer_norm(tape.constant(Tensor({2, 2}, {1, 3, -2, 8})), zero_gain, b2, 1e-5));
  CHECK(broadcast.at(0, 0) == doctest::Approx(0.3));
  CHECK(broadcast.at(1, 1) == doctest::Approx(-0.7));
}

TEST_CASE("backward: sum, elementwise square, unused leaf") {
  Tape tape;
  Var w = tape.leaf(Tensor({3}, {1, 2, 3}).set_requires_grad(true));
  Var unused = tape.leaf(Tensor({2}, {5, 5}).set_requires_grad(true));
  Var loss = tape.sum(tape.mul(w, w));
  auto grads = tape.backward(loss);
  CHECK(grads.at(w.id).bit_equal(Tensor({3}, {2, 4, 6})));
  CHECK(grads.at(unused.id).bit_equal(Tensor({2}, {0, 0})));

  Tape tape2;
  Var w2 = tape2.leaf(Tensor({4}, {1, -1, 2, 0}).set_requires_grad(true));
  auto g2 = tape2.backward(tape2.sum(w2));
  CHECK(g2.at(w2.id).bit_equal(Tensor({4}, {1, 1, 1, 1})));
}

TEST_CASE("backward demands a scalar loss") {
  Tape tape;
  Var w = tape.leaf(Tensor({2}, {1, 2}).set_requires_grad(true));
  CHECK_THROWS_AS(tape.backward(w), ContractError);
}

TEST_CASE("gradient accumulates over multiple paths") {
  // loss = sum(w * w) + sum(w) -> dloss/dw = 2w + 1
  Tape tape;
  Var w = tape.leaf(Tensor({2}, {3, -2}).set_requires_grad(true));
  Var loss = tape.add(tape.sum(tape.mul(w, w)), tape.sum(w));
  auto grads = tape.backward(loss);
  CHECK(grads.at(w.id).bit_equal(Tensor({2}, {7, -3})));
}

namespace {

// a composite touching every op in the set, as a grad_check target
double composite_loss(const ParamMap& params, GradMap* grads) {
  Tape tape;
  std::map<std::string, Var> vars;
  std::map<int, std::string> names;
  for (const auto& [key, t] : params) {
    Tensor copy = t;
    copy.set_requires_grad(true);
    Var v = tape.leaf(std::move(copy));
    vars[key] = v;
    names[v.id] = key;
  }
  Var a = vars.at("a");  // 2x4
  Var b = vars.at("b");  // 4x3
  Var g = vars.at("g");  // 3
  Var h = tape.matmul(a, b);                                   // 2x3
  h = tape.layer_norm(h, g, vars.at("bias"), 1e-5);            // 2x3
  h = tape.add(h, vars.at("row"));                             // row broadcast
  h = tape.relu(h);
  Var s = tape.softmax(tape.scale(h, 1.7));
  Var t1 = tape.transpose(tape.concat_cols(s, h));             // 6x2
  Var sl = tape.slice_cols(tape.slice_rows(t1, 1, 5), 0, 2);   // 4x2
  Var e = tape.exp(tape.scale(sl, 0.3));
  Var lg = tape.log(tape.add(e, tape.constant(Tensor::filled({4, 2}, 0.5))));
  std::vector<std::uint8_t> mask(8, 0);
  mask[3] = 1;
  mask[6] = 1;
  Var m = tape.masked_fill(lg, mask, 0.25);
  Var emb = tape.embedding(vars.at("table"), {0, 2, 1, 2});    // 4x2
  Var loss = tape.sum(tape.mul(m, emb));
  if (grads) {
    grads->clear();
    for (auto& [id, tensor] : tape.backward(loss)) (*grads)[names.at(id)] = tensor;
  }
  return tape.value(loss).scalar_value();
}

}  // namespace

TEST_CASE("backward through a composite of the whole op set matches finite differences") {
  Rng rng(123);
  ParamMap params;
  params.emplace("a", testutil::random_tensor({2, 4}, rng));
  params.emplace("b", testutil::random_tensor({4, 3}, rng));
  params.emplace("g", testutil::random_tensor({3}, rng, 0.5, 1.5));
  params.emplace("bias", testutil::random_tensor({3}, rng));
  params.emplace("row", testutil::random_tensor({1, 3}, rng));
  params.emplace("table", testutil::random_tensor({3, 2}, rng));
  const double err = numerics::grad_check(composite_loss, params, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check: quadratic loss is exact to 1e-8") {
  ParamMap params;
  params.emplace("w", Tensor({3}, {0.5, -1.5, 2.0}));
  auto f = [](const ParamMap& p, GradMap* grads) {
    const Tensor& w = p.at("w");
    double loss = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) loss += w[i] * w[i];
    if (grads) {
      grads->clear();
      grads->emplace("w", Tensor::from_fn({3}, [&](std::size_t i) { return 2.0 * w[i]; }));
    }
    return loss;
  };
  CHECK(numerics::grad_check(f, params, 1e-5) < 1e-8);
}

TEST_CASE("grad_check: zero gradient and zero difference give error 0") {
  ParamMap params;
  params.emplace("w", Tensor({2}, {1.0, -1.0}));
  auto f = [](const ParamMap&, GradMap* grads) {
    if (grads) {
      grads->clear();
      grads->emplace("w", Tensor::zeros({2}));
    }
    return 3.0;  // constant
  };
  CHECK(numerics::grad_check(f, params, 1e-5) == 0.0);
}

TEST_CASE("grad_check: a 10% corrupted gradient reports error near 0.1") {
  ParamMap params;
  params.emplace("w", Tensor({2}, {1.25, -0.75}));
  auto f = [](const ParamMap& p, GradMap* grads) {
    const Tensor& w = p.at("w");
    double loss = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) loss += w[i] * w[i];
    if (grads) {
      grads->clear();
      grads->emplace("w",
                     Tensor::from_fn({2}, [&](std::size_t i) { return 2.2 * w[i]; }));
    }
    return loss;
  };
  const double err = numerics::grad_check(f, params, 1e-6);
  CHECK(err > 0.07);
  CHECK(err < 0.13);
}

TEST_CASE("grad_check detects a non-deterministic function") {
  ParamMap params;
  params.emplace("w", Tensor({1}, {1.0}));
  int calls = 0;
  auto f = [&calls](const ParamMap&, GradMap* grads) {
    if (grads) grads->emplace("w", Tensor::zeros({1}));
    return static_cast<double>(++calls);
  };
  CHECK_THROWS_AS(numerics::grad_check(f, params, 1e-5), ContractError);
}

TEST_CASE("determinism: same seed gives bit-identical op outputs") {
  auto run = [] {
    Rng rng(99);
    Tape tape;
    Var a = tape.constant(testutil::random_tensor({4, 4}, rng));
    Var b = tape.constant(testutil::random_tensor({4, 4}, rng));
    return tape.value(tape.softmax(tape.matmul(a, b)));
  };
  CHECK(run().bit_equal(run()));
}
