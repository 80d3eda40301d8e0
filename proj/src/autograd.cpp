#include "mosaic/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "mosaic/rng.hpp"

namespace mosaic {

namespace {

thread_local int64_t g_seq = 0;
thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> new_node(Tensor value) {
  check_finite(value, "op output");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = ++g_seq;
  return n;
}

bool any_requires(const std::vector<Var>& parents) {
  for (const auto& p : parents)
    if (p.requires_grad()) return true;
  return false;
}

// Attaches parents + backward closure when gradients are being recorded.
Var finish(std::shared_ptr<Node> n, const std::vector<Var>& parents,
           std::function<void(Node&)> fn) {
  if (g_grad_enabled && any_requires(parents)) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

Tensor& ensure_grad(Node& n) {
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& pval(Node& n, size_t i) { return n.parents[i]->value; }

}  // namespace

const Tensor& Var::value() const {
  if (!n_) throw std::logic_error("var: undefined");
  return n_->value;
}

Tensor& Var::mutable_value() {
  if (!n_) throw std::logic_error("var: undefined");
  if (!n_->is_leaf) throw std::logic_error("var: only leaf values may be mutated");
  return n_->value;
}

bool Var::requires_grad() const { return n_ && n_->requires_grad; }

const std::string& Var::name() const {
  static const std::string empty;
  return n_ ? n_->name : empty;
}

bool Var::has_grad() const { return n_ && n_->has_grad; }

const Tensor& Var::grad() const {
  if (!has_grad()) throw std::logic_error("var: no gradient recorded");
  return n_->grad;
}

Tensor Var::grad_or_zero() const {
  if (has_grad()) return n_->grad;
  return Tensor(value().shape());
}

void Var::zero_grad() {
  if (n_ && n_->has_grad) {
    n_->grad = Tensor(n_->value.shape());
  }
}

Var make_parameter(Tensor value, std::string name) {
  check_finite(value, "parameter");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = ++g_seq;
  n->requires_grad = true;
  n->is_leaf = true;
  n->name = std::move(name);
  return Var(std::move(n));
}

Var make_constant(Tensor value) {
  check_finite(value, "constant");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = ++g_seq;
  n->is_leaf = true;
  return Var(std::move(n));
}

Var scalar_constant(double v) { return make_constant(Tensor::scalar(v)); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (!loss.defined()) throw std::logic_error("backward: undefined loss");
  if (loss.value().size() != 1) throw std::logic_error("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // Topological order = descending recording order of reachable nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  ensure_grad(*loss.node())[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn && n->has_grad) n->backward_fn(*n);
  }
}

namespace ops {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape().to_string() +
                                " vs " + b.value().shape().to_string());
}

}  // namespace

Var axpby(double alpha, const Var& a, double beta, const Var& b) {
  require_same_shape(a, b, "axpby");
  const int64_t n = a.value().size();
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = alpha * pa[i] + beta * pb[i];
  return finish(new_node(std::move(out)), {a, b}, [alpha, beta, n](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) {
      double* ga = ensure_grad(*self.parents[0]).data();
      for (int64_t i = 0; i < n; ++i) ga[i] += alpha * g[i];
    }
    if (self.parents[1]->requires_grad) {
      double* gb = ensure_grad(*self.parents[1]).data();
      for (int64_t i = 0; i < n; ++i) gb[i] += beta * g[i];
    }
  });
}

Var add(const Var& a, const Var& b) { return axpby(1.0, a, 1.0, b); }

Var scale(const Var& a, double c) {
  const int64_t n = a.value().size();
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
  return finish(new_node(std::move(out)), {a}, [c, n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* ga = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < n; ++i) ga[i] += c * g[i];
  });
}

Var add_rowvec(const Var& m, const Var& v) {
  const int64_t r = m.value().rows(), c = m.value().cols();
  if (v.value().rank() != 1 || v.value().size() != c)
    throw std::invalid_argument("add_rowvec: vector length must match columns");
  Tensor out(m.value().shape());
  const double* pm = m.value().data();
  const double* pv = v.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) po[i * c + j] = pm[i * c + j] + pv[j];
  return finish(new_node(std::move(out)), {m, v}, [r, c](Node& self) {
    const double* g = self.grad.data();
    if (self.parents[0]->requires_grad) {
      double* gm = ensure_grad(*self.parents[0]).data();
      for (int64_t i = 0; i < r * c; ++i) gm[i] += g[i];
    }
    if (self.parents[1]->requires_grad) {
      double* gv = ensure_grad(*self.parents[1]).data();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const int64_t m = a.value().rows(), k = a.value().cols();
  if (b.value().rows() != k)
    throw std::invalid_argument("matmul: inner dimensions disagree");
  const int64_t n = b.value().cols();
  Tensor out(Shape(m, n));
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return finish(new_node(std::move(out)), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    const double* pa2 = pval(self, 0).data();
    const double* pb2 = pval(self, 1).data();
    if (self.parents[0]->requires_grad) {
      double* ga = ensure_grad(*self.parents[0]).data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = g + i * n;
          const double* brow = pb2 + kk * n;
          for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + kk] += s;
        }
    }
    if (self.parents[1]->requires_grad) {
      double* gb = ensure_grad(*self.parents[1]).data();
      for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t i = 0; i < m; ++i) {
          const double aik = pa2[i * k + kk];
          const double* grow = g + i * n;
          double* gbrow = gb + kk * n;
          for (int64_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
        }
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const int64_t m = a.value().rows(), k = a.value().cols();
  if (b.value().cols() != k)
    throw std::invalid_argument("matmul_nt: inner dimensions disagree");
  const int64_t n = b.value().rows();
  Tensor out(Shape(m, n));
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      const double* arow = pa + i * k;
      const double* brow = pb + j * k;
      for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      po[i * n + j] = s;
    }
  return finish(new_node(std::move(out)), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    const double* pa2 = pval(self, 0).data();
    const double* pb2 = pval(self, 1).data();
    if (self.parents[0]->requires_grad) {
      double* ga = ensure_grad(*self.parents[0]).data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          const double* brow = pb2 + j * k;
          double* garow = ga + i * k;
          for (int64_t kk = 0; kk < k; ++kk) garow[kk] += gij * brow[kk];
        }
    }
    if (self.parents[1]->requires_grad) {
      double* gb = ensure_grad(*self.parents[1]).data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          const double* arow = pa2 + i * k;
          double* gbrow = gb + j * k;
          for (int64_t kk = 0; kk < k; ++kk) gbrow[kk] += gij * arow[kk];
        }
    }
  });
}

Var matvec(const Var& m, const Var& v) {
  const int64_t r = m.value().rows(), c = m.value().cols();
  if (v.value().rank() != 1 || v.value().size() != c)
    throw std::invalid_argument("matvec: vector length must match columns");
  Tensor out{Shape(r)};
  const double* pm = m.value().data();
  const double* pv = v.value().data();
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += pm[i * c + j] * pv[j];
    out[i] = s;
  }
  return finish(new_node(std::move(out)), {m, v}, [r, c](Node& self) {
    const double* g = self.grad.data();
    const double* pm2 = pval(self, 0).data();
    const double* pv2 = pval(self, 1).data();
    if (self.parents[0]->requires_grad) {
      double* gm = ensure_grad(*self.parents[0]).data();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gm[i * c + j] += g[i] * pv2[j];
    }
    if (self.parents[1]->requires_grad) {
      double* gv = ensure_grad(*self.parents[1]).data();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gv[j] += g[i] * pm2[i * c + j];
    }
  });
}

Var gather_rows(const Var& m, std::vector<int64_t> ids) {
  const int64_t v = m.value().rows(), d = m.value().cols();
  const int64_t l = static_cast<int64_t>(ids.size());
  if (l == 0) throw std::invalid_argument("gather_rows: empty id list");
  for (int64_t id : ids)
    if (id < 0 || id >= v) throw std::out_of_range("gather_rows: row id " + std::to_string(id) + " out of range");
  Tensor out(Shape(l, d));
  const double* pm = m.value().data();
  for (int64_t i = 0; i < l; ++i)
    std::memcpy(out.data() + i * d, pm + ids[static_cast<size_t>(i)] * d,
                static_cast<size_t>(d) * sizeof(double));
  return finish(new_node(std::move(out)), {m}, [ids = std::move(ids), d](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gm = ensure_grad(*self.parents[0]).data();
    for (size_t i = 0; i < ids.size(); ++i) {
      double* grow = gm + ids[i] * d;
      const double* srow = g + static_cast<int64_t>(i) * d;
      for (int64_t j = 0; j < d; ++j) grow[j] += srow[j];
    }
  });
}

Var slice_cols(const Var& m, int64_t c0, int64_t len) {
  const int64_t r = m.value().rows(), c = m.value().cols();
  if (c0 < 0 || len <= 0 || c0 + len > c) throw std::invalid_argument("slice_cols: invalid range");
  Tensor out(Shape(r, len));
  const double* pm = m.value().data();
  for (int64_t i = 0; i < r; ++i)
    std::memcpy(out.data() + i * len, pm + i * c + c0, static_cast<size_t>(len) * sizeof(double));
  return finish(new_node(std::move(out)), {m}, [r, c, c0, len](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gm = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < len; ++j) gm[i * c + c0 + j] += g[i * len + j];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int64_t r = parts[0].value().rows();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != r) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.value().cols();
  }
  Tensor out(Shape(r, total));
  int64_t off = 0;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    const int64_t w = p.value().cols();
    for (int64_t i = 0; i < r; ++i)
      std::memcpy(out.data() + i * total + off, p.value().data() + i * w,
                  static_cast<size_t>(w) * sizeof(double));
    widths.push_back(w);
    off += w;
  }
  return finish(new_node(std::move(out)), parts, [r, total, widths = std::move(widths)](Node& self) {
    const double* g = self.grad.data();
    int64_t off2 = 0;
    for (size_t p = 0; p < self.parents.size(); ++p) {
      const int64_t w = widths[p];
      if (self.parents[p]->requires_grad) {
        double* gp = ensure_grad(*self.parents[p]).data();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off2 + j];
      }
      off2 += w;
    }
  });
}

Var row(const Var& m, int64_t r) {
  const int64_t rows = m.value().rows(), c = m.value().cols();
  if (r < 0 || r >= rows) throw std::out_of_range("row: index out of range");
  Tensor out{Shape(c)};
  std::memcpy(out.data(), m.value().data() + r * c, static_cast<size_t>(c) * sizeof(double));
  return finish(new_node(std::move(out)), {m}, [r, c](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gm = ensure_grad(*self.parents[0]).data();
    for (int64_t j = 0; j < c; ++j) gm[r * c + j] += g[j];
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const int64_t c = rows[0].value().size();
  for (const auto& v : rows)
    if (v.value().rank() != 1 || v.value().size() != c)
      throw std::invalid_argument("stack_rows: rows must be equal-length vectors");
  const int64_t r = static_cast<int64_t>(rows.size());
  Tensor out(Shape(r, c));
  for (int64_t i = 0; i < r; ++i)
    std::memcpy(out.data() + i * c, rows[static_cast<size_t>(i)].value().data(),
                static_cast<size_t>(c) * sizeof(double));
  return finish(new_node(std::move(out)), rows, [c](Node& self) {
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.parents.size(); ++i) {
      if (!self.parents[i]->requires_grad) continue;
      double* gp = ensure_grad(*self.parents[i]).data();
      const double* srow = g + static_cast<int64_t>(i) * c;
      for (int64_t j = 0; j < c; ++j) gp[j] += srow[j];
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const int64_t r = x.value().rows(), c = x.value().cols();
  if (gain.value().size() != c || bias.value().size() != c)
    throw std::invalid_argument("layer_norm: gain/bias length must match columns");
  Tensor out(Shape(r, c));
  Tensor xhat(Shape(r, c));
  std::vector<double> inv_sigma(static_cast<size_t>(r));
  const double* px = x.value().data();
  const double* pg = gain.value().data();
  const double* pb = bias.value().data();
  for (int64_t i = 0; i < r; ++i) {
    const double* xr = px + i * c;
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (xr[j] - mu) * is;
      xhat.data()[i * c + j] = xh;
      out.data()[i * c + j] = pg[j] * xh + pb[j];
    }
  }
  return finish(new_node(std::move(out)), {x, gain, bias},
                [r, c, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
                  const double* g = self.grad.data();
                  const double* pg2 = pval(self, 1).data();
                  if (self.parents[1]->requires_grad) {
                    double* gg = ensure_grad(*self.parents[1]).data();
                    for (int64_t i = 0; i < r; ++i)
                      for (int64_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
                  }
                  if (self.parents[2]->requires_grad) {
                    double* gb = ensure_grad(*self.parents[2]).data();
                    for (int64_t i = 0; i < r; ++i)
                      for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                  }
                  if (self.parents[0]->requires_grad) {
                    double* gx = ensure_grad(*self.parents[0]).data();
                    for (int64_t i = 0; i < r; ++i) {
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (int64_t j = 0; j < c; ++j) {
                        const double dxh = g[i * c + j] * pg2[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[i * c + j];
                      }
                      mean_dxh /= static_cast<double>(c);
                      mean_dxh_xh /= static_cast<double>(c);
                      const double is = inv_sigma[static_cast<size_t>(i)];
                      for (int64_t j = 0; j < c; ++j) {
                        const double dxh = g[i * c + j] * pg2[j];
                        gx[i * c + j] += is * (dxh - mean_dxh - xhat[i * c + j] * mean_dxh_xh);
                      }
                    }
                  }
                });
}

Var gelu(const Var& x) {
  const int64_t n = x.value().size();
  Tensor out(x.value().shape());
  const double* px = x.value().data();
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * inv_sqrt2));
  return finish(new_node(std::move(out)), {x}, [n](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    constexpr double inv_sqrt2b = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    const double* g = self.grad.data();
    const double* px2 = pval(self, 0).data();
    double* gx = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < n; ++i) {
      const double xi = px2[i];
      const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2b));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
      gx[i] += g[i] * (cdf + xi * pdf);
    }
  });
}

Var softmax_rows_masked(const Var& x, std::vector<char> valid) {
  const int64_t r = x.value().rows(), c = x.value().cols();
  if (static_cast<int64_t>(valid.size()) != c)
    throw std::invalid_argument("softmax_rows_masked: mask length must match columns");
  bool any = false;
  for (char v : valid) any = any || (v != 0);
  if (!any) throw std::invalid_argument("softmax_rows_masked: no valid columns");
  Tensor out(Shape(r, c));
  const double* px = x.value().data();
  for (int64_t i = 0; i < r; ++i) {
    const double* xr = px + i * c;
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j)
      if (valid[static_cast<size_t>(j)]) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      if (valid[static_cast<size_t>(j)]) {
        const double e = std::exp(xr[j] - mx);
        out.data()[i * c + j] = e;
        sum += e;
      }
    }
    for (int64_t j = 0; j < c; ++j)
      if (valid[static_cast<size_t>(j)]) out.data()[i * c + j] /= sum;
  }
  Tensor probs = out;  // kept for the backward pass
  return finish(new_node(std::move(out)), {x}, [r, c, valid = std::move(valid), probs = std::move(probs)](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gx = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < c; ++j)
        if (valid[static_cast<size_t>(j)]) s += g[i * c + j] * probs[i * c + j];
      for (int64_t j = 0; j < c; ++j)
        if (valid[static_cast<size_t>(j)])
          gx[i * c + j] += probs[i * c + j] * (g[i * c + j] - s);
    }
  });
}

Var mean_rows(const Var& x, std::vector<int64_t> positions) {
  const int64_t r = x.value().rows(), c = x.value().cols();
  if (positions.empty()) throw std::invalid_argument("mean_rows: no positions");
  for (int64_t p : positions)
    if (p < 0 || p >= r) throw std::out_of_range("mean_rows: position out of range");
  Tensor out{Shape(c)};
  const double* px = x.value().data();
  for (int64_t p : positions)
    for (int64_t j = 0; j < c; ++j) out[j] += px[p * c + j];
  const double inv = 1.0 / static_cast<double>(positions.size());
  for (int64_t j = 0; j < c; ++j) out[j] *= inv;
  return finish(new_node(std::move(out)), {x}, [positions = std::move(positions), c, inv](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gx = ensure_grad(*self.parents[0]).data();
    for (int64_t p : positions)
      for (int64_t j = 0; j < c; ++j) gx[p * c + j] += g[j] * inv;
  });
}

Var l2_normalize(const Var& v) {
  if (v.value().rank() != 1) throw std::invalid_argument("l2_normalize: rank-1 input required");
  const int64_t n = v.value().size();
  const double* pv = v.value().data();
  double nrm2 = 0.0;
  for (int64_t i = 0; i < n; ++i) nrm2 += pv[i] * pv[i];
  const double nrm = std::sqrt(nrm2);
  if (nrm < 1e-8) throw std::runtime_error("l2_normalize: vector norm below 1e-8");
  Tensor out{Shape(n)};
  for (int64_t i = 0; i < n; ++i) out[i] = pv[i] / nrm;
  Tensor unit = out;
  return finish(new_node(std::move(out)), {v}, [n, nrm, unit = std::move(unit)](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gv = ensure_grad(*self.parents[0]).data();
    double gy = 0.0;
    for (int64_t i = 0; i < n; ++i) gy += g[i] * unit[i];
    for (int64_t i = 0; i < n; ++i) gv[i] += (g[i] - unit[i] * gy) / nrm;
  });
}

Var dot(const Var& u, const Var& v) {
  if (u.value().rank() != 1 || v.value().rank() != 1 || u.value().size() != v.value().size())
    throw std::invalid_argument("dot: equal-length vectors required");
  const int64_t n = u.value().size();
  double s = 0.0;
  const double* pu = u.value().data();
  const double* pv = v.value().data();
  for (int64_t i = 0; i < n; ++i) s += pu[i] * pv[i];
  return finish(new_node(Tensor::scalar(s)), {u, v}, [n](Node& self) {
    const double g = self.grad[0];
    const double* pu2 = pval(self, 0).data();
    const double* pv2 = pval(self, 1).data();
    if (self.parents[0]->requires_grad) {
      double* gu = ensure_grad(*self.parents[0]).data();
      for (int64_t i = 0; i < n; ++i) gu[i] += g * pv2[i];
    }
    if (self.parents[1]->requires_grad) {
      double* gv = ensure_grad(*self.parents[1]).data();
      for (int64_t i = 0; i < n; ++i) gv[i] += g * pu2[i];
    }
  });
}

Var cross_entropy(const Var& logits, int64_t target) {
  if (logits.value().rank() != 1) throw std::invalid_argument("cross_entropy: logits must be rank 1");
  const int64_t n = logits.value().size();
  if (n == 0) throw std::invalid_argument("cross_entropy: empty logits");
  if (target < 0 || target >= n) throw std::out_of_range("cross_entropy: target out of range");
  const double ce = cross_entropy_from_logits(logits.value(), target);
  Tensor probs = stable_softmax(logits.value(), 0);
  return finish(new_node(Tensor::scalar(ce)), {logits}, [n, target, probs = std::move(probs)](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double g = self.grad[0];
    double* gl = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < n; ++i) gl[i] += g * (probs[i] - (i == target ? 1.0 : 0.0));
  });
}

Var mean(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (const auto& v : scalars) {
    if (v.value().size() != 1) throw std::invalid_argument("mean: inputs must be scalars");
    s += v.value().item();
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return finish(new_node(Tensor::scalar(s * inv)), scalars, [inv](Node& self) {
    const double g = self.grad[0] * inv;
    for (auto& p : self.parents)
      if (p->requires_grad) ensure_grad(*p)[0] += g;
  });
}

Var weighted_sum(const Var& x, Tensor w) {
  if (x.value().shape() != w.shape()) throw std::invalid_argument("weighted_sum: shape mismatch");
  const int64_t n = x.value().size();
  double s = 0.0;
  const double* px = x.value().data();
  for (int64_t i = 0; i < n; ++i) s += px[i] * w[i];
  return finish(new_node(Tensor::scalar(s)), {x}, [n, w = std::move(w)](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double g = self.grad[0];
    double* gx = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < n; ++i) gx[i] += g * w[i];
  });
}

Var dropout(const Var& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  const int64_t n = x.value().size();
  std::vector<char> keep(static_cast<size_t>(n));
  const double inv_keep = 1.0 / (1.0 - rate);
  Tensor out(x.value().shape());
  const double* px = x.value().data();
  for (int64_t i = 0; i < n; ++i) {
    keep[static_cast<size_t>(i)] = rng.uniform01() >= rate ? 1 : 0;
    out.data()[i] = keep[static_cast<size_t>(i)] ? px[i] * inv_keep : 0.0;
  }
  return finish(new_node(std::move(out)), {x}, [n, inv_keep, keep = std::move(keep)](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const double* g = self.grad.data();
    double* gx = ensure_grad(*self.parents[0]).data();
    for (int64_t i = 0; i < n; ++i)
      if (keep[static_cast<size_t>(i)]) gx[i] += g[i] * inv_keep;
  });
}

}  // namespace ops

double grad_check(const std::function<Var()>& f, const std::vector<Var>& params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  if (params.empty()) throw std::invalid_argument("grad_check: no parameters");
  for (const auto& p : params)
    if (!p.defined() || !p.requires_grad())
      throw std::invalid_argument("grad_check: params must be gradient-tracked leaves");

  double v0, v1;
  {
    NoGradGuard ng;
    v0 = f().value().item();
    v1 = f().value().item();
  }
  if (std::memcmp(&v0, &v1, sizeof(double)) != 0)
    throw std::runtime_error("grad_check: function is not deterministic across identical calls");

  std::vector<Var> mutable_params(params);
  for (auto& p : mutable_params) p.zero_grad();
  Var loss = f();
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad_or_zero());

  double worst = 0.0;
  NoGradGuard ng;
  for (size_t pi = 0; pi < mutable_params.size(); ++pi) {
    Tensor& val = mutable_params[pi].mutable_value();
    for (int64_t i = 0; i < val.size(); ++i) {
      const double orig = val[i];
      val[i] = orig + eps;
      const double fp = f().value().item();
      val[i] = orig - eps;
      const double fm = f().value().item();
      val[i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic[pi][i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace mosaic
