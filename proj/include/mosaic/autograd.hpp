#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mosaic/tensor.hpp"

namespace mosaic {

class Rng;

struct Node;

// Handle to a node of the recorded computation. Copies share the node.
// Values are immutable once produced by an op; only leaf parameters may be
// mutated (between graph constructions) through mutable_value().
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const;
  Tensor& mutable_value();  // leaves only
  bool requires_grad() const;
  const std::string& name() const;

  bool has_grad() const;
  const Tensor& grad() const;   // throws if the node was never touched
  Tensor grad_or_zero() const;  // untouched parameters read as exact zeros
  void zero_grad();

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool is_leaf = false;
  int64_t seq = 0;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

Var make_parameter(Tensor value, std::string name = "");
Var make_constant(Tensor value);
Var scalar_constant(double v);

// While a guard is alive (per thread), ops compute values but record no
// parents or backward closures, so frozen-weight evaluation stays cheap.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Accumulates d(loss)/d(node) into every reachable node's grad, in reverse
// recording order. loss must be a scalar. Grads add across calls; callers
// zero parameter grads between steps.
void backward(const Var& loss);

namespace ops {

// alpha*a + beta*b, same shape; alpha/beta are plain constants.
Var axpby(double alpha, const Var& a, double beta, const Var& b);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double c);
// [RxC] + [C] broadcast over rows.
Var add_rowvec(const Var& m, const Var& v);

Var matmul(const Var& a, const Var& b);     // [mxk]·[kxn]
Var matmul_nt(const Var& a, const Var& b);  // [mxk]·[nxk]^T
Var matvec(const Var& m, const Var& v);     // [rxc]·[c] -> [r]

Var gather_rows(const Var& m, std::vector<int64_t> ids);
Var slice_cols(const Var& m, int64_t c0, int64_t len);
Var concat_cols(const std::vector<Var>& parts);
Var row(const Var& m, int64_t r);
Var stack_rows(const std::vector<Var>& rows);

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& x);

// Row softmax over the positions where valid[j] != 0; invalid columns get
// probability exactly 0. valid.size() must equal the column count and hold
// at least one nonzero.
Var softmax_rows_masked(const Var& x, std::vector<char> valid);

// Mean of the selected rows of x -> vector [C].
Var mean_rows(const Var& x, std::vector<int64_t> positions);

// v / ||v||; throws if ||v|| < 1e-8.
Var l2_normalize(const Var& v);

Var dot(const Var& u, const Var& v);

// -log softmax(logits)[target]; logits rank 1.
Var cross_entropy(const Var& logits, int64_t target);

Var mean(const std::vector<Var>& scalars);

// sum(x ⊙ w) for a constant weight tensor; handy for scalarizing tests.
Var weighted_sum(const Var& x, Tensor w);

// Inverted dropout with the mask drawn from rng; identity when rate == 0.
Var dropout(const Var& x, double rate, Rng& rng);

}  // namespace ops

// Compares the tape gradient of f against central finite differences
// (f(p+eps)-f(p-eps))/(2 eps) over every coordinate of every parameter and
// returns the worst relative error with denominator max(|a|,|b|,1e-8).
// f is called with the parameters' current values and must be deterministic;
// a value change across identical calls is an error.
double grad_check(const std::function<Var()>& f, const std::vector<Var>& params, double eps);

}  // namespace mosaic
