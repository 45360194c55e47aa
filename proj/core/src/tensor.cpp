#include "brmil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace brmil {

namespace {

bool g_finite_checks = true;

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

// Interprets a tensor as a [rows, cols] matrix: 1-D is one row, 2-D as-is.
void as_rows(const Tensor& x, int* rows, int* cols) {
  if (x.ndim() == 1) {
    *rows = 1;
    *cols = x.dim(0);
  } else if (x.ndim() == 2) {
    *rows = x.dim(0);
    *cols = x.dim(1);
  } else {
    throw ShapeError("expected 1-D or 2-D tensor, got " + shape_str(x.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

Tensor Tensor::zeros(Shape shape) {
  auto st = std::make_shared<Storage>();
  st->data.assign(checked_numel(shape), 0.0);
  st->shape = std::move(shape);
  return Tensor(std::move(st));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.st_->data.begin(), t.st_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  std::size_t n = checked_numel(shape);
  if (values.size() != n)
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  auto st = std::make_shared<Storage>();
  st->shape = std::move(shape);
  st->data = std::move(values);
  return Tensor(std::move(st));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, RngState& rng) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.st_->data) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Shape shape, double stddev, RngState& rng) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.st_->data) v = stddev * rng.normal();
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return st_->data[0];
}

double* Tensor::grad() {
  if (st_->grad.size() != st_->data.size()) st_->grad.assign(st_->data.size(), 0.0);
  return st_->grad.data();
}

const double* Tensor::grad_if() const {
  return st_->grad.size() == st_->data.size() ? st_->grad.data() : nullptr;
}

void Tensor::zero_grad() {
  if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

Tensor Tensor::grad_tensor() const {
  Tensor g = zeros(st_->shape);
  if (const double* p = grad_if())
    std::copy(p, p + st_->data.size(), g.st_->data.begin());
  return g;
}

Tensor Tensor::clone() const {
  Tensor t = zeros(st_->shape);
  t.st_->data = st_->data;
  return t;
}

void Tensor::check_finite(const char* where) const {
  for (double v : st_->data)
    if (!std::isfinite(v))
      throw NumericalError(std::string(where) + ": non-finite value in output");
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  Tensor seed = loss;  // shares storage; grad buffer lives there
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

namespace ops {

namespace {

Tensor finish(Tensor out, const char* where) {
  if (g_finite_checks) out.check_finite(where);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const double* g = out.grad();
      const int n = out.numel();
      if (a.requires_grad()) {
        Tensor am = a;
        double* ga = am.grad();
        for (int i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        Tensor bm = b;
        double* gb = bm.grad();
        for (int i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return finish(out, "add");
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const double* g = out.grad();
      const int n = out.numel();
      if (a.requires_grad()) {
        Tensor am = a;
        double* ga = am.grad();
        for (int i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        Tensor bm = b;
        double* gb = bm.grad();
        for (int i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return finish(out, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const double* g = out.grad();
      const int n = out.numel();
      if (a.requires_grad()) {
        Tensor am = a;
        double* ga = am.grad();
        for (int i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        Tensor bm = b;
        double* gb = bm.grad();
        for (int i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return finish(out, "mul");
}

Tensor add_scalar(const Tensor& a, double c, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) ga[i] += g[i];
    });
  }
  return finish(out, "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double c, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out, c]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) ga[i] += c * g[i];
    });
  }
  return finish(out, "mul_scalar");
}

Tensor relu(const Tensor& a, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i)
        if (a.data()[i] > 0.0) ga[i] += g[i];
    });
  }
  return finish(out, "relu");
}

Tensor sigmoid(const Tensor& a, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) {
    double x = a.data()[i];
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) {
        double s = out.data()[i];
        ga[i] += g[i] * s * (1.0 - s);
      }
    });
  }
  return finish(out, "sigmoid");
}

Tensor exp(const Tensor& a, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) ga[i] += g[i] * out.data()[i];
    });
  }
  return finish(out, "exp");
}

Tensor log(const Tensor& a, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) {
    if (a.data()[i] <= 0.0) throw NumericalError("log: non-positive input");
    out.data()[i] = std::log(a.data()[i]);
  }
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) ga[i] += g[i] / a.data()[i];
    });
  }
  return finish(out, "log");
}

Tensor softplus(const Tensor& a, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) {
    double x = a.data()[i];
    out.data()[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) {
        double x = a.data()[i];
        double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        ga[i] += g[i] * s;
      }
    });
  }
  return finish(out, "softplus");
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "matmul: need 2-D operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dims differ, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      double* orow = po + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, n]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        Tensor am = a;
        double* ga = am.grad();
        const double* pb = b.data();
        // dA = G * B^T
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = pb + l * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + l] += acc;
          }
      }
      if (b.requires_grad()) {
        Tensor bm = b;
        double* gb = bm.grad();
        const double* pa = a.data();
        // dB = A^T * G
        for (int i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (int l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            double* gbrow = gb + l * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return finish(out, "matmul");
}

Tensor matvec(const Tensor& w, const Tensor& x, Tape* tape) {
  require(w.ndim() == 2 && x.ndim() == 1,
          "matvec: need [M,N]*[N], got " + shape_str(w.shape()) + " and " +
              shape_str(x.shape()));
  const int m = w.dim(0), n = w.dim(1);
  require(x.dim(0) == n, "matvec: inner dims differ, " + shape_str(w.shape()) +
                             " vs " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({m});
  for (int i = 0; i < m; ++i) {
    const double* wrow = w.data() + i * n;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += wrow[j] * x.data()[j];
    out.data()[i] = acc;
  }
  if (tape && (w.requires_grad() || x.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([w, x, out, m, n]() mutable {
      const double* g = out.grad();
      if (w.requires_grad()) {
        Tensor wm = w;
        double* gw = wm.grad();
        for (int i = 0; i < m; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          double* gwrow = gw + i * n;
          for (int j = 0; j < n; ++j) gwrow[j] += gi * x.data()[j];
        }
      }
      if (x.requires_grad()) {
        Tensor xm = x;
        double* gx = xm.grad();
        for (int i = 0; i < m; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          const double* wrow = w.data() + i * n;
          for (int j = 0; j < n; ++j) gx[j] += gi * wrow[j];
        }
      }
    });
  }
  return finish(out, "matvec");
}

Tensor flatten(const Tensor& a, Tape* tape) {
  Tensor out = Tensor::zeros({a.numel()});
  std::copy(a.data(), a.data() + a.numel(), out.data());
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) ga[i] += g[i];
    });
  }
  return finish(out, "flatten");
}

Tensor reshape(const Tensor& a, Shape shape, Tape* tape) {
  Tensor out = Tensor::zeros(std::move(shape));
  require(out.numel() == a.numel(), "reshape: " + shape_str(a.shape()) + " has " +
                                        std::to_string(a.numel()) + " elements, target " +
                                        shape_str(out.shape()));
  std::copy(a.data(), a.data() + a.numel(), out.data());
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < out.numel(); ++i) ga[i] += g[i];
    });
  }
  return finish(out, "reshape");
}

Tensor transpose(const Tensor& a, Tape* tape) {
  require(a.ndim() == 2, "transpose: need 2-D, got " + shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out, r, c]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return finish(out, "transpose");
}

Tensor sum(const Tensor& a, Tape* tape) {
  double acc = 0.0;
  for (int i = 0; i < a.numel(); ++i) acc += a.data()[i];
  Tensor out = Tensor::scalar(acc);
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double g = out.grad()[0];
      for (int i = 0; i < am.numel(); ++i) ga[i] += g;
    });
  }
  return finish(out, "sum");
}

Tensor mean(const Tensor& a, Tape* tape) {
  double acc = 0.0;
  for (int i = 0; i < a.numel(); ++i) acc += a.data()[i];
  Tensor out = Tensor::scalar(acc / a.numel());
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      Tensor am = a;
      double* ga = am.grad();
      const double g = out.grad()[0] / am.numel();
      for (int i = 0; i < am.numel(); ++i) ga[i] += g;
    });
  }
  return finish(out, "mean");
}

Tensor row_mean(const Tensor& x, Tape* tape) {
  require(x.ndim() == 2, "row_mean: need 2-D, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += x.data()[i * c + j];
    out.data()[i] = acc / c;
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, r, c]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gx[i * c + j] += g[i] / c;
    });
  }
  return finish(out, "row_mean");
}

Tensor add_bias(const Tensor& x, const Tensor& b, Tape* tape) {
  int r = 0, c = 0;
  as_rows(x, &r, &c);
  require(b.ndim() == 1 && b.dim(0) == c,
          "add_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + b.data()[j];
  if (tape && (x.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x, b, out, r, c]() mutable {
      const double* g = out.grad();
      if (x.requires_grad()) {
        Tensor xm = x;
        double* gx = xm.grad();
        for (int i = 0; i < r * c; ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        Tensor bm = b;
        double* gb = bm.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    });
  }
  return finish(out, "add_bias");
}

Tensor scale_rows(const Tensor& x, const Tensor& s, Tape* tape) {
  require(x.ndim() == 2, "scale_rows: need 2-D input, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  require(s.ndim() == 1 && s.dim(0) == r,
          "scale_rows: scale " + shape_str(s.shape()) + " vs input " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] * s.data()[i];
  if (tape && (x.requires_grad() || s.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x, s, out, r, c]() mutable {
      const double* g = out.grad();
      if (x.requires_grad()) {
        Tensor xm = x;
        double* gx = xm.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * s.data()[i];
      }
      if (s.requires_grad()) {
        Tensor sm = s;
        double* gs = sm.grad();
        for (int i = 0; i < r; ++i) {
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += g[i * c + j] * x.data()[i * c + j];
          gs[i] += acc;
        }
      }
    });
  }
  return finish(out, "scale_rows");
}

Tensor concat_vec(const std::vector<Tensor>& parts, Tape* tape) {
  require(!parts.empty(), "concat_vec: empty part list");
  int total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    require(p.ndim() == 1, "concat_vec: parts must be 1-D, got " + shape_str(p.shape()));
    total += p.dim(0);
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({total});
  int off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts, out]() mutable {
      const double* g = out.grad();
      int off = 0;
      for (Tensor p : parts) {
        if (p.requires_grad()) {
          double* gp = p.grad();
          for (int i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return finish(out, "concat_vec");
}

Tensor slice_vec(const Tensor& x, int start, int len, Tape* tape) {
  require(x.ndim() == 1, "slice_vec: need 1-D, got " + shape_str(x.shape()));
  require(start >= 0 && len > 0 && start + len <= x.dim(0),
          "slice_vec: range [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({len});
  std::copy(x.data() + start, x.data() + start + len, out.data());
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, start, len]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < len; ++i) gx[start + i] += g[i];
    });
  }
  return finish(out, "slice_vec");
}

Tensor slice_cols(const Tensor& x, int c0, int n, Tape* tape) {
  require(x.ndim() == 2, "slice_cols: need 2-D, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  require(c0 >= 0 && n > 0 && c0 + n <= c,
          "slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c0 + n) +
              ") out of " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({r, n});
  for (int i = 0; i < r; ++i)
    std::copy(x.data() + i * c + c0, x.data() + i * c + c0 + n, out.data() + i * n);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, r, c, c0, n]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j) gx[i * c + c0 + j] += g[i * n + j];
    });
  }
  return finish(out, "slice_cols");
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
  require(!parts.empty(), "concat_cols: empty part list");
  const int r = parts.front().ndim() == 2 ? parts.front().dim(0) : -1;
  require(r > 0, "concat_cols: parts must be 2-D");
  int total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    require(p.ndim() == 2 && p.dim(0) == r,
            "concat_cols: row mismatch, got " + shape_str(p.shape()));
    total += p.dim(1);
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({r, total});
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    for (int i = 0; i < r; ++i)
      std::copy(p.data() + i * c, p.data() + (i + 1) * c, out.data() + i * total + off);
    off += c;
  }
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts, out, r, total]() mutable {
      const double* g = out.grad();
      int off = 0;
      for (Tensor p : parts) {
        const int c = p.dim(1);
        if (p.requires_grad()) {
          double* gp = p.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return finish(out, "concat_cols");
}

Tensor stack_rows_padded(const std::vector<Tensor>& rows, int total_rows, Tape* tape) {
  require(!rows.empty(), "stack_rows_padded: empty row list");
  require(static_cast<int>(rows.size()) <= total_rows,
          "stack_rows_padded: " + std::to_string(rows.size()) + " rows > pad " +
              std::to_string(total_rows));
  const int c = rows.front().dim(0);
  bool any_grad = false;
  for (const Tensor& v : rows) {
    require(v.ndim() == 1 && v.dim(0) == c,
            "stack_rows_padded: row shape mismatch, got " + shape_str(v.shape()));
    any_grad = any_grad || v.requires_grad();
  }
  Tensor out = Tensor::zeros({total_rows, c});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].data(), rows[i].data() + c, out.data() + static_cast<int>(i) * c);
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([rows, out, c]() mutable {
      const double* g = out.grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Tensor v = rows[i];
        if (!v.requires_grad()) continue;
        double* gv = v.grad();
        for (int j = 0; j < c; ++j) gv[j] += g[static_cast<int>(i) * c + j];
      }
    });
  }
  return finish(out, "stack_rows_padded");
}

Tensor zero_rows(const Tensor& x, const std::vector<std::uint8_t>& keep, Tape* tape) {
  require(x.ndim() == 2, "zero_rows: need 2-D, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  require(static_cast<int>(keep.size()) == r,
          "zero_rows: keep size " + std::to_string(keep.size()) + " vs rows " +
              std::to_string(r));
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i)
    if (keep[static_cast<std::size_t>(i)])
      std::copy(x.data() + i * c, x.data() + (i + 1) * c, out.data() + i * c);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, keep, r, c]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i)
        if (keep[static_cast<std::size_t>(i)])
          for (int j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j];
    });
  }
  return finish(out, "zero_rows");
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows, Tape* tape) {
  require(x.ndim() == 2, "gather_rows: need 2-D, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  const int m = static_cast<int>(rows.size());
  for (int src : rows)
    require(src >= 0 && src < r,
            "gather_rows: row " + std::to_string(src) + " outside [0, " +
                std::to_string(r) + ")");
  Tensor out = Tensor::zeros({m, c});
  for (int i = 0; i < m; ++i)
    std::copy(x.data() + rows[static_cast<std::size_t>(i)] * c,
              x.data() + (rows[static_cast<std::size_t>(i)] + 1) * c,
              out.data() + i * c);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, rows, m, c]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < m; ++i) {
        const int src = rows[static_cast<std::size_t>(i)];
        for (int j = 0; j < c; ++j) gx[src * c + j] += g[i * c + j];
      }
    });
  }
  return finish(out, "gather_rows");
}

Tensor softmax_masked(const Tensor& x, const std::vector<std::uint8_t>& mask, Tape* tape) {
  int r = 0, c = 0;
  as_rows(x, &r, &c);
  require(static_cast<int>(mask.size()) == c,
          "softmax_masked: mask size " + std::to_string(mask.size()) + " vs width " +
              std::to_string(c));
  bool any = false;
  for (std::uint8_t m : mask) any = any || (m != 0);
  if (!any) throw NumericalError("softmax_masked: fully masked row");
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double* oi = out.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (mask[static_cast<std::size_t>(j)] && xi[j] > mx) mx = xi[j];
    double denom = 0.0;
    for (int j = 0; j < c; ++j)
      if (mask[static_cast<std::size_t>(j)]) denom += std::exp(xi[j] - mx);
    for (int j = 0; j < c; ++j)
      oi[j] = mask[static_cast<std::size_t>(j)] ? std::exp(xi[j] - mx) / denom : 0.0;
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, mask, r, c]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i) {
        const double* oi = out.data() + i * c;
        const double* gi = g + i * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += gi[j] * oi[j];
        for (int j = 0; j < c; ++j)
          if (mask[static_cast<std::size_t>(j)])
            gx[i * c + j] += oi[j] * (gi[j] - dot);
      }
    });
  }
  return finish(out, "softmax_masked");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tape* tape, double eps) {
  int r = 0, c = 0;
  as_rows(x, &r, &c);
  require(gamma.ndim() == 1 && gamma.dim(0) == c && beta.ndim() == 1 && beta.dim(0) == c,
          "layer_norm: gain/shift " + shape_str(gamma.shape()) + "/" +
              shape_str(beta.shape()) + " vs width " + std::to_string(c));
  Tensor out = Tensor::zeros(x.shape());
  Tensor xhat = Tensor::zeros(x.shape());  // kept for backward
  std::vector<double> inv(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xi[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= c;
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[static_cast<std::size_t>(i)] = iv;
    for (int j = 0; j < c; ++j) {
      const double h = (xi[j] - mu) * iv;
      xhat.data()[i * c + j] = h;
      out.data()[i * c + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  if (tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x, gamma, beta, out, xhat, inv, r, c]() mutable {
      const double* g = out.grad();
      if (gamma.requires_grad()) {
        Tensor gm = gamma;
        double* gg = gm.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat.data()[i * c + j];
      }
      if (beta.requires_grad()) {
        Tensor bm = beta;
        double* gb = bm.grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
      if (x.requires_grad()) {
        Tensor xm = x;
        double* gx = xm.grad();
        for (int i = 0; i < r; ++i) {
          const double* gi = g + i * c;
          const double* hi = xhat.data() + i * c;
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < c; ++j) {
            const double gh = gi[j] * gamma.data()[j];
            m1 += gh;
            m2 += gh * hi[j];
          }
          m1 /= c;
          m2 /= c;
          const double iv = inv[static_cast<std::size_t>(i)];
          for (int j = 0; j < c; ++j) {
            const double gh = gi[j] * gamma.data()[j];
            gx[i * c + j] += iv * (gh - m1 - hi[j] * m2);
          }
        }
      }
    });
  }
  return finish(out, "layer_norm");
}

Tensor rows_l2_normalize(const Tensor& x, Tape* tape, double eps) {
  require(x.ndim() == 2, "rows_l2_normalize: need 2-D, got " + shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = Tensor::zeros({r, c});
  std::vector<double> norms(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double sq = 0.0;
    for (int j = 0; j < c; ++j) sq += xi[j] * xi[j];
    const double nrm = std::max(std::sqrt(sq), eps);
    norms[static_cast<std::size_t>(i)] = nrm;
    for (int j = 0; j < c; ++j) out.data()[i * c + j] = xi[j] / nrm;
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record([x, out, norms, r, c]() mutable {
      Tensor xm = x;
      double* gx = xm.grad();
      const double* g = out.grad();
      for (int i = 0; i < r; ++i) {
        const double* oi = out.data() + i * c;
        const double* gi = g + i * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += oi[j] * gi[j];
        const double nrm = norms[static_cast<std::size_t>(i)];
        for (int j = 0; j < c; ++j) gx[i * c + j] += (gi[j] - oi[j] * dot) / nrm;
      }
    });
  }
  return finish(out, "rows_l2_normalize");
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  require(x.ndim() == 2, "conv1d: input must be [Cin,W], got " + shape_str(x.shape()));
  require(w.ndim() == 3, "conv1d: kernel must be [Cout,Cin,K], got " + shape_str(w.shape()));
  const int ci = x.dim(0), width = x.dim(1);
  const int co = w.dim(0), kw = w.dim(2);
  require(w.dim(1) == ci, "conv1d: channel mismatch " + shape_str(x.shape()) + " vs " +
                              shape_str(w.shape()));
  require(b.ndim() == 1 && b.dim(0) == co,
          "conv1d: bias " + shape_str(b.shape()) + " vs " + std::to_string(co) + " filters");
  require(kw <= width, "conv1d: kernel wider than input");
  const int wo = width - kw + 1;
  Tensor out = Tensor::zeros({co, wo});
  for (int o = 0; o < co; ++o) {
    double* orow = out.data() + o * wo;
    for (int t = 0; t < wo; ++t) orow[t] = b.data()[o];
    for (int c = 0; c < ci; ++c) {
      const double* xrow = x.data() + c * width;
      const double* wrow = w.data() + (o * ci + c) * kw;
      for (int k = 0; k < kw; ++k) {
        const double wv = wrow[k];
        if (wv == 0.0) continue;
        for (int t = 0; t < wo; ++t) orow[t] += wv * xrow[t + k];
      }
    }
  }
  if (tape && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x, w, b, out, ci, width, co, kw, wo]() mutable {
      const double* g = out.grad();
      if (b.requires_grad()) {
        Tensor bm = b;
        double* gb = bm.grad();
        for (int o = 0; o < co; ++o) {
          double acc = 0.0;
          for (int t = 0; t < wo; ++t) acc += g[o * wo + t];
          gb[o] += acc;
        }
      }
      if (w.requires_grad()) {
        Tensor wm = w;
        double* gw = wm.grad();
        for (int o = 0; o < co; ++o)
          for (int c = 0; c < ci; ++c) {
            const double* xrow = x.data() + c * width;
            const double* grow = g + o * wo;
            double* gwrow = gw + (o * ci + c) * kw;
            for (int k = 0; k < kw; ++k) {
              double acc = 0.0;
              for (int t = 0; t < wo; ++t) acc += grow[t] * xrow[t + k];
              gwrow[k] += acc;
            }
          }
      }
      if (x.requires_grad()) {
        Tensor xm = x;
        double* gx = xm.grad();
        for (int o = 0; o < co; ++o)
          for (int c = 0; c < ci; ++c) {
            const double* wrow = w.data() + (o * ci + c) * kw;
            const double* grow = g + o * wo;
            double* gxrow = gx + c * width;
            for (int k = 0; k < kw; ++k) {
              const double wv = wrow[k];
              if (wv == 0.0) continue;
              for (int t = 0; t < wo; ++t) gxrow[t + k] += wv * grow[t];
            }
          }
      }
    });
  }
  return finish(out, "conv1d");
}

}  // namespace ops
}  // namespace brmil
