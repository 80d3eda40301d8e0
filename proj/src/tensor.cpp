#include "mosaic/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mosaic/rng.hpp"

namespace mosaic {

std::string Shape::to_string() const {
  if (rank_ == 0) return "[]";
  if (rank_ == 1) return "[" + std::to_string(dims_[0]) + "]";
  return "[" + std::to_string(dims_[0]) + "x" + std::to_string(dims_[1]) + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_.size())
    throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_.to_string());
}

Tensor Tensor::scalar(double v) {
  Tensor t{Shape()};
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(shape);
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("tensor: from_rows needs at least one row");
  const size_t cols = rows[0].size();
  Tensor t(Shape(static_cast<int64_t>(rows.size()), static_cast<int64_t>(cols)));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw std::invalid_argument("tensor: ragged rows");
    std::memcpy(t.data() + r * cols, rows[r].data(), cols * sizeof(double));
  }
  return t;
}

Tensor Tensor::gaussian(Shape shape, Rng& rng, double mean, double stddev) {
  Tensor t(shape);
  for (auto& x : t.data_) x = rng.gaussian(mean, stddev);
  return t;
}

int64_t Tensor::rows() const {
  if (rank() != 2) throw std::logic_error("tensor: rows() on non-matrix " + shape_.to_string());
  return shape_.dim(0);
}

int64_t Tensor::cols() const {
  if (rank() != 2) throw std::logic_error("tensor: cols() on non-matrix " + shape_.to_string());
  return shape_.dim(1);
}

double& Tensor::at(int64_t r, int64_t c) {
  return data_[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
  return data_[static_cast<size_t>(r * cols() + c)];
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("tensor: item() on shape " + shape_.to_string());
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

bool Tensor::same_bits(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite())
    throw std::runtime_error(std::string(what) + ": non-finite value in tensor " +
                             t.shape().to_string());
}

namespace {

// Softmax of one stride-1 slice, in place into out.
void softmax_span(const double* in, double* out, int64_t n) {
  double mx = in[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (int64_t i = 0; i < n; ++i) out[i] /= sum;
}

}  // namespace

Tensor stable_softmax(const Tensor& logits, int axis) {
  check_finite(logits, "stable_softmax");
  if (logits.rank() == 1) {
    if (axis != 0) throw std::invalid_argument("stable_softmax: axis out of range for vector");
    if (logits.size() == 0) throw std::invalid_argument("stable_softmax: empty input");
    Tensor out(logits.shape());
    softmax_span(logits.data(), out.data(), logits.size());
    return out;
  }
  if (logits.rank() != 2) throw std::invalid_argument("stable_softmax: rank must be 1 or 2");
  const int64_t r = logits.rows(), c = logits.cols();
  if (r == 0 || c == 0) throw std::invalid_argument("stable_softmax: empty input");
  Tensor out(logits.shape());
  if (axis == 1) {
    for (int64_t i = 0; i < r; ++i) softmax_span(logits.data() + i * c, out.data() + i * c, c);
  } else if (axis == 0) {
    std::vector<double> col(static_cast<size_t>(r)), res(static_cast<size_t>(r));
    for (int64_t j = 0; j < c; ++j) {
      for (int64_t i = 0; i < r; ++i) col[static_cast<size_t>(i)] = logits.at(i, j);
      softmax_span(col.data(), res.data(), r);
      for (int64_t i = 0; i < r; ++i) out.at(i, j) = res[static_cast<size_t>(i)];
    }
  } else {
    throw std::invalid_argument("stable_softmax: axis out of range for matrix");
  }
  return out;
}

double cross_entropy_from_logits(const Tensor& logits, int64_t target) {
  if (logits.rank() != 1) throw std::invalid_argument("cross_entropy_from_logits: logits must be rank 1");
  const int64_t n = logits.size();
  if (n == 0) throw std::invalid_argument("cross_entropy_from_logits: empty logits");
  if (target < 0 || target >= n) throw std::out_of_range("cross_entropy_from_logits: target out of range");
  check_finite(logits, "cross_entropy_from_logits");
  double mx = logits[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  return std::log(sum) - (logits[target] - mx);
}

}  // namespace mosaic
