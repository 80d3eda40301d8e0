#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "mosaic/autograd.hpp"
#include "mosaic/rng.hpp"
#include "mosaic/tensor.hpp"

using namespace mosaic;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double bound = 2.0) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

// Scalarizes an arbitrary-output op with a fixed random weighting so a
// single grad_check covers every output coordinate.
double check_op(const std::function<Var(const std::vector<Var>&)>& op,
                const std::vector<Shape>& param_shapes, uint64_t seed, double eps = 1e-5) {
  Rng rng(seed);
  std::vector<Var> params;
  for (const Shape& s : param_shapes) params.push_back(make_parameter(random_tensor(s, rng)));
  Var probe = op(params);
  Tensor w = random_tensor(probe.value().shape(), rng, 1.0);
  auto f = [&]() { return ops::weighted_sum(op(params), w); };
  return grad_check(f, params, eps);
}

}  // namespace

TEST_CASE("stable_softmax basics") {
  Tensor x(Shape(2), {0.0, 0.0});
  Tensor s = stable_softmax(x, 0);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor big(Shape(2), {1000.0, 1000.0});
  Tensor sb = stable_softmax(big, 0);
  CHECK(sb[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sb.all_finite());

  Tensor onezero(Shape(2), {1.0, 0.0});
  Tensor so = stable_softmax(onezero, 0);
  CHECK(so[0] == doctest::Approx(0.7310585786300049).epsilon(1e-9));
  CHECK(so[1] == doctest::Approx(0.2689414213699951).epsilon(1e-9));
}

TEST_CASE("stable_softmax sums to one and shifts away") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(Shape(3, 5), rng, 50.0);
    Tensor s = stable_softmax(x, 1);
    for (int64_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int64_t c = 0; c < 5; ++c) sum += s.at(r, c);
      CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
    const double shift = rng.uniform(-100.0, 100.0);
    Tensor shifted = x;
    for (int64_t i = 0; i < shifted.size(); ++i) shifted[i] += shift;
    Tensor s2 = stable_softmax(shifted, 1);
    for (int64_t i = 0; i < s.size(); ++i) CHECK(std::fabs(s[i] - s2[i]) < 1e-9);
  }
}

TEST_CASE("stable_softmax rejects bad input") {
  Tensor nan(Shape(2), {std::nan(""), 0.0});
  CHECK_THROWS(stable_softmax(nan, 0));
  Tensor ok(Shape(2), {0.0, 1.0});
  CHECK_THROWS(stable_softmax(ok, 1));
  CHECK_THROWS(stable_softmax(Tensor(Shape(0)), 0));
}

TEST_CASE("cross_entropy_from_logits oracle values") {
  Tensor uniform(Shape(4), {0.0, 0.0, 0.0, 0.0});
  CHECK(cross_entropy_from_logits(uniform, 0) ==
        doctest::Approx(1.3862943611198906).epsilon(1e-12));

  Tensor single(Shape(1), {3.7});
  CHECK(cross_entropy_from_logits(single, 0) == doctest::Approx(0.0).epsilon(1e-15));

  Tensor spiked(Shape(4), {2.0, 0.0, 0.0, 0.0});
  CHECK(cross_entropy_from_logits(spiked, 0) ==
        doctest::Approx(0.3407529539131311).epsilon(1e-12));
}

TEST_CASE("cross_entropy_from_logits is shift invariant and non-negative") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor x = random_tensor(Shape(7), rng, 30.0);
    const int64_t target = static_cast<int64_t>(rng.bounded(7));
    const double base = cross_entropy_from_logits(x, target);
    CHECK(base >= 0.0);
    const double shift = rng.uniform(-40.0, 40.0);
    Tensor shifted = x;
    for (int64_t i = 0; i < 7; ++i) shifted[i] += shift;
    CHECK(std::fabs(cross_entropy_from_logits(shifted, target) - base) < 1e-9);
  }
}

TEST_CASE("cross_entropy_from_logits errors") {
  CHECK_THROWS(cross_entropy_from_logits(Tensor(Shape(0)), 0));
  Tensor x(Shape(2), {0.0, 1.0});
  CHECK_THROWS(cross_entropy_from_logits(x, 2));
}

TEST_CASE("grad_check on p^2 matches the analytic slope") {
  Var p = make_parameter(Tensor(Shape(1), {3.0}));
  auto f = [&]() { return ops::dot(p, p); };
  CHECK(grad_check(f, {p}, 1e-4) < 1e-6);

  p.zero_grad();
  backward(f());
  CHECK(p.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad_check flags a non-deterministic function") {
  Var p = make_parameter(Tensor(Shape(1), {1.0}));
  Rng noise(3);
  auto f = [&]() { return ops::scale(ops::dot(p, p), 1.0 + noise.uniform01()); };
  CHECK_THROWS(grad_check(f, {p}, 1e-4));
}

TEST_CASE("gradients of untouched parameters stay exactly zero") {
  Var used = make_parameter(Tensor(Shape(3), {1.0, -0.5, 2.0}));
  Var untouched = make_parameter(Tensor(Shape(2, 2), {1, 2, 3, 4}));
  used.zero_grad();
  untouched.zero_grad();
  backward(ops::dot(used, used));
  CHECK(used.has_grad());
  CHECK(used.grad().shape() == used.value().shape());
  Tensor z = untouched.grad_or_zero();
  CHECK(z.shape() == untouched.value().shape());
  for (int64_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("every differentiable op passes a finite-difference check over 10 seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);

    CHECK(check_op([](const std::vector<Var>& p) { return ops::axpby(0.7, p[0], -1.3, p[1]); },
                   {Shape(3, 4), Shape(3, 4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::scale(p[0], -2.5); },
                   {Shape(2, 3)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::add_rowvec(p[0], p[1]); },
                   {Shape(3, 4), Shape(4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::matmul(p[0], p[1]); },
                   {Shape(3, 4), Shape(4, 2)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::matmul_nt(p[0], p[1]); },
                   {Shape(3, 4), Shape(5, 4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::matvec(p[0], p[1]); },
                   {Shape(3, 4), Shape(4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::gather_rows(p[0], {2, 0, 2}); },
                   {Shape(4, 3)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::slice_cols(p[0], 1, 2); },
                   {Shape(3, 5)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::concat_cols({p[0], p[1]}); },
                   {Shape(3, 2), Shape(3, 4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::row(p[0], 1); }, {Shape(3, 4)},
                   seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::stack_rows({p[0], p[1]}); },
                   {Shape(4), Shape(4)}, seed) < 1e-4);
    CHECK(check_op(
              [](const std::vector<Var>& p) { return ops::layer_norm(p[0], p[1], p[2]); },
              {Shape(3, 6), Shape(6), Shape(6)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::gelu(p[0]); }, {Shape(2, 5)},
                   seed) < 1e-4);
    CHECK(check_op(
              [](const std::vector<Var>& p) {
                return ops::softmax_rows_masked(p[0], {1, 0, 1, 1});
              },
              {Shape(3, 4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::mean_rows(p[0], {0, 2}); },
                   {Shape(3, 4)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::l2_normalize(p[0]); }, {Shape(5)},
                   seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::dot(p[0], p[1]); },
                   {Shape(6), Shape(6)}, seed) < 1e-4);
    CHECK(check_op([](const std::vector<Var>& p) { return ops::cross_entropy(p[0], 2); },
                   {Shape(5)}, seed) < 1e-4);
    CHECK(check_op(
              [](const std::vector<Var>& p) {
                return ops::mean({ops::dot(p[0], p[0]), ops::dot(p[0], p[1]), ops::dot(p[1], p[1])});
              },
              {Shape(4), Shape(4)}, seed) < 1e-4);
    CHECK(check_op(
              [](const std::vector<Var>& p) {
                Rng mask_rng(99);  // fixed stream keeps the mask identical per call
                return ops::dropout(p[0], 0.3, mask_rng);
              },
              {Shape(4, 5)}, seed) < 1e-4);
  }
}

TEST_CASE("ops reject non-finite values") {
  Var p = make_parameter(Tensor(Shape(2), {1.0, 2.0}));
  Var q = make_parameter(Tensor(Shape(2), {1e308, 1e308}));
  CHECK_THROWS(ops::scale(q, 1e10));  // overflow to inf is an error state
  CHECK_NOTHROW(ops::dot(p, p));
}

TEST_CASE("l2_normalize rejects near-zero vectors") {
  Var v = make_parameter(Tensor(Shape(3), {1e-9, 0.0, 0.0}));
  CHECK_THROWS(ops::l2_normalize(v));
}

TEST_CASE("backward accumulates fan-out contributions") {
  Var p = make_parameter(Tensor(Shape(2), {1.0, 2.0}));
  Var s = ops::scale(p, 2.0);
  Var loss = ops::dot(s, p);  // 2*p.p -> d/dp = 4p
  p.zero_grad();
  backward(loss);
  CHECK(p.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(p.grad()[1] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("no-grad mode records nothing") {
  Var p = make_parameter(Tensor(Shape(2), {1.0, 2.0}));
  NoGradGuard ng;
  Var loss = ops::dot(p, p);
  CHECK(!loss.requires_grad());
  backward(loss);  // no-op
  CHECK(!p.has_grad());
}
