#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "brmil/rng.hpp"

namespace brmil {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

/// Dense row-major double tensor with shared storage. Values are treated as
/// immutable once an op has produced them; the gradient buffer is the only
/// thing mutated afterwards (by Tape::backward).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value) { return from({1}, {value}); }
  static Tensor uniform(Shape shape, double lo, double hi, RngState& rng);
  static Tensor normal(Shape shape, double stddev, RngState& rng);

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  int ndim() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<std::size_t>(i)]; }
  int numel() const { return static_cast<int>(st_->data.size()); }

  double* data() { return st_->data.data(); }
  const double* data() const { return st_->data.data(); }
  double operator[](int i) const { return st_->data[static_cast<std::size_t>(i)]; }
  double item() const;

  bool requires_grad() const { return st_ && st_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    st_->requires_grad = on;
    return *this;
  }

  /// Gradient buffer, allocated to zeros on first access.
  double* grad();
  /// Gradient buffer if allocated, else nullptr.
  const double* grad_if() const;
  void zero_grad();
  /// Copy of the gradient as a tensor (zeros when never touched).
  Tensor grad_tensor() const;

  /// Deep copy of the values; fresh storage, no grad, requires_grad off.
  Tensor clone() const;

  /// True if the two handles share storage.
  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

  void check_finite(const char* where) const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  explicit Tensor(std::shared_ptr<Storage> st) : st_(std::move(st)) {}
  std::shared_ptr<Storage> st_;
};

/// Records backward closures for one forward pass. Confined to a single
/// thread; run backward() once, then discard or clear().
class Tape {
 public:
  void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }
  /// Seeds d(loss)/d(loss) = 1 and replays all closures in reverse order.
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

/// Toggle the per-op non-finite output scan (on by default).
void set_finite_checks(bool on);
bool finite_checks_enabled();

namespace ops {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double c, Tape* tape = nullptr);
Tensor mul_scalar(const Tensor& a, double c, Tape* tape = nullptr);

// Unary.
Tensor relu(const Tensor& a, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& a, Tape* tape = nullptr);
Tensor exp(const Tensor& a, Tape* tape = nullptr);
Tensor log(const Tensor& a, Tape* tape = nullptr);
Tensor softplus(const Tensor& a, Tape* tape = nullptr);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose(const Tensor& a, Tape* tape = nullptr);
Tensor matvec(const Tensor& w, const Tensor& x, Tape* tape = nullptr);  // [M,N]*[N]->[M]
/// Row-major view of any tensor as a 1-D vector.
Tensor flatten(const Tensor& a, Tape* tape = nullptr);
/// Row-major view under a new shape with the same element count.
Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr);

// Reductions.
Tensor sum(const Tensor& a, Tape* tape = nullptr);
Tensor mean(const Tensor& a, Tape* tape = nullptr);
Tensor row_mean(const Tensor& x, Tape* tape = nullptr);  // [R,C] -> [R]

// Broadcast helpers.
Tensor add_bias(const Tensor& x, const Tensor& b, Tape* tape = nullptr);     // [R,C]+[C]
Tensor scale_rows(const Tensor& x, const Tensor& s, Tape* tape = nullptr);   // [R,C]*[R]

// Structure.
Tensor concat_vec(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor slice_vec(const Tensor& x, int start, int len, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, int c0, int n, Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
/// Stacks 1-D rows into a [total_rows, C] matrix, zero rows past the list.
Tensor stack_rows_padded(const std::vector<Tensor>& rows, int total_rows,
                         Tape* tape = nullptr);
/// Zeroes every row whose keep flag is 0; gradients are cut there too.
Tensor zero_rows(const Tensor& x, const std::vector<std::uint8_t>& keep,
                 Tape* tape = nullptr);
/// Row gather: out[r] = x[rows[r]]. Repeated sources accumulate gradient.
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows,
                   Tape* tape = nullptr);

// Normalization and attention building blocks.
/// Softmax over the last dim; masked entries are exactly 0 in the output.
/// A fully masked row is an error.
Tensor softmax_masked(const Tensor& x, const std::vector<std::uint8_t>& mask,
                      Tape* tape = nullptr);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tape* tape = nullptr, double eps = 1e-5);
Tensor rows_l2_normalize(const Tensor& x, Tape* tape = nullptr, double eps = 1e-12);

/// Valid 1-D convolution over the width axis: x [Cin,W] * w [Cout,Cin,K] + b
/// [Cout] -> [Cout, W-K+1].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);

}  // namespace ops
}  // namespace brmil
