#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "xpro/util.hpp"

namespace xpro {

using Shape = std::vector<int>;

class Tape;

/// Dense row-major f64 tensor. Copies share storage (cheap handles); the
/// optional tape binding makes a tensor participate in reverse-mode
/// differentiation for the lifetime of one forward pass.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  /// N(0, stddev^2) entries from the given engine.
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int numel() const;
  int rows() const;  // rank-2 only
  int cols() const;

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  std::vector<double>& vec() { return *data_; }
  const std::vector<double>& vec() const { return *data_; }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  double value() const;             // scalar tensors
  double at(int r, int c) const;    // rank-2 convenience
  double& at(int r, int c);

  bool all_finite() const;

  // Copies of a tensor share one binding cell, so watching any copy makes
  // the variable tracked everywhere it is referenced.
  Tape* tape() const { return bind_ ? bind_->tape : nullptr; }
  int node() const { return bind_ ? bind_->node : -1; }
  void bind(Tape* tape, int node) {
    bind_->tape = tape;
    bind_->node = node;
  }
  void unbind() {
    if (bind_) {
      bind_->tape = nullptr;
      bind_->node = -1;
    }
  }

 private:
  struct Binding {
    Tape* tape = nullptr;
    int node = -1;
  };
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<Binding> bind_;
};

/// Records one forward pass (define-by-run) and replays it in exact reverse
/// order on backward(). A tape is confined to a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf (parameter). Rebinds the tensor to this tape.
  void watch(Tensor& t);

  /// Appends an op node. Every input id must precede the new node.
  int record(const std::vector<int>& inputs, int out_numel, BackwardFn fn);

  /// Reverse sweep from a scalar loss. Leaves not reachable from the loss
  /// end with zero gradient.
  void backward(const Tensor& loss);

  /// Gradient of the loss w.r.t. a tensor bound to this tape.
  const std::vector<double>& grad(const Tensor& t) const;

  std::vector<double>& grad_buf(int node) { return grads_[static_cast<size_t>(node)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    int numel = 0;
    BackwardFn back;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_backward_ = false;
};

// ---- primitive ops (forward + recorded gradient) ------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor pow_const(const Tensor& a, double p);
Tensor square(const Tensor& a);
/// x + copysign(eps, x); keeps a denominator away from zero.
Tensor sign_guard(const Tensor& a, double eps);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Row-wise softmax with max subtraction; rank-2 input.
Tensor softmax_rows(const Tensor& a);

/// out[i] = a[ids[i]]; gradient scatter-adds rows (embedding lookup).
Tensor gather_rows(const Tensor& a, const std::vector<int>& ids);
/// out[i] = a[i, ids[i]] as an [m x 1] column.
Tensor select_per_row(const Tensor& a, const std::vector<int>& ids);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis0(const Tensor& a);   // [m x n] -> [1 x n]
Tensor mean_axis0(const Tensor& a);
Tensor sum_axis1(const Tensor& a);   // [m x n] -> [m x 1]
Tensor mean_axis1(const Tensor& a);

Tensor add_rowvec(const Tensor& a, const Tensor& row);   // row: [n] or [1 x n]
Tensor mul_rowvec(const Tensor& a, const Tensor& row);
Tensor add_colvec(const Tensor& a, const Tensor& col);   // col: [m x 1]
Tensor mul_colvec(const Tensor& a, const Tensor& col);
Tensor div_colvec(const Tensor& a, const Tensor& col);

// ---- composites ----------------------------------------------------------

/// x * W + b with b broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Per-row normalization along the last axis followed by affine gain/bias.
/// eps stabilizes the zero-variance case.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Rows scaled to unit L2 norm; the eps guard maps zero rows to zero rows.
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-8);

/// Cosine similarity of two [1 x d] (or flat [d]) vectors as a scalar tensor.
Tensor cosine(const Tensor& a, const Tensor& b, double eps = 1e-8);

/// softmax(q k^T * scale + mask) v. mask may be null; it is an additive
/// constant (e.g. 0 / -1e9 for causal masking).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor* add_mask, double scale);

/// Inverted dropout; identity when train is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool train);

}  // namespace xpro
