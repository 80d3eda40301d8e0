#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mosaic {

class Rng;

// Shapes are rank 0 (scalar), 1 (vector) or 2 (matrix). That is all the
// encoder and losses need; batches are handled as loops over sentences.
class Shape {
 public:
  Shape() : rank_(0) {}
  explicit Shape(int64_t n) : dims_{n, 0}, rank_(1) {}
  Shape(int64_t rows, int64_t cols) : dims_{rows, cols}, rank_(2) {}

  int rank() const { return rank_; }
  int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  int64_t size() const {
    int64_t s = 1;
    for (int i = 0; i < rank_; ++i) s *= dims_[static_cast<size_t>(i)];
    return s;
  }
  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[static_cast<size_t>(i)] != o.dims_[static_cast<size_t>(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string to_string() const;

 private:
  std::array<int64_t, 2> dims_{0, 0};
  int rank_;
};

// Dense row-major tensor of doubles. Storage is 64-bit throughout the
// project; this is what makes the finite-difference gradient tolerances and
// bit-exact checkpoint round-trips hold at the same time.
//
// Every exposed operation leaves only finite values behind; NaN/Inf is an
// error state and producers throw instead of returning one.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(static_cast<size_t>(shape.size()), 0.0) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, double v);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
  static Tensor gaussian(Shape shape, Rng& rng, double mean, double stddev);

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t rows() const;
  int64_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;

  // Value of a single-element tensor (rank 0, or any shape of size 1).
  double item() const;

  bool all_finite() const;
  bool same_bits(const Tensor& o) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void check_finite(const Tensor& t, const char* what);

// Softmax along `axis` computed with max-subtraction, so constant shifts and
// large magnitudes do not overflow. Output rows sum to 1 within 1e-9.
// Throws on non-finite input or invalid axis.
Tensor stable_softmax(const Tensor& logits, int axis);

// -log softmax(logits)[target] for a rank-1 logits vector; always >= 0.
// Throws on empty logits or target out of range.
double cross_entropy_from_logits(const Tensor& logits, int64_t target);

}  // namespace mosaic
