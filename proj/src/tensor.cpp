#include "xpro/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace xpro {

namespace {

int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

void check_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

/// Single tape shared by all tracked inputs, or null when none is tracked.
Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape())
      throw ContractError("operands recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

// C (m x n) = A (m x k) * B (k x n), optionally accumulating into C.
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double ail = ai[l];
      if (ail == 0.0) continue;
      const double* bl = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
}

// C (m x k) += A (m x n) * B^T (k x n)
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * n;
    double* ci = c + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* bj = b + static_cast<size_t>(j) * n;
      double s = 0.0;
      for (int l = 0; l < n; ++l) s += ai[l] * bj[l];
      ci[j] += s;
    }
  }
}

// C (k x n) += A^T (m x k) * B (m x n)
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    const double* bi = b + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double ail = ai[l];
      if (ail == 0.0) continue;
      double* cl = c + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) cl[j] += ail * bi[j];
    }
  }
}

using Data = std::shared_ptr<std::vector<double>>;

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape_)), 0.0)),
      bind_(std::make_shared<Binding>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  const int n = shape_numel(shape_);
  if (static_cast<size_t>(n) != values.size())
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape_));
  data_ = std::make_shared<std::vector<double>>(std::move(values));
  bind_ = std::make_shared<Binding>();
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.vec().begin(), t.vec().end(), v);
  return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.vec()) x = dist(rng);
  return t;
}

int Tensor::numel() const { return data_ ? static_cast<int>(data_->size()) : 0; }

int Tensor::rows() const {
  check_rank2("rows", *this);
  return shape_[0];
}

int Tensor::cols() const {
  check_rank2("cols", *this);
  return shape_[1];
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value(): tensor " + shape_str(shape_) + " is not scalar");
  return (*data_)[0];
}

double Tensor::at(int r, int c) const {
  check_rank2("at", *this);
  return (*data_)[static_cast<size_t>(r) * shape_[1] + c];
}

double& Tensor::at(int r, int c) {
  check_rank2("at", *this);
  return (*data_)[static_cast<size_t>(r) * shape_[1] + c];
}

bool Tensor::all_finite() const {
  for (double v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- Tape -------------------------------------------------------------------

void Tape::watch(Tensor& t) {
  if (t.numel() == 0) throw ContractError("watch: empty tensor");
  nodes_.push_back(Node{t.numel(), {}});
  t.bind(this, static_cast<int>(nodes_.size()) - 1);
}

int Tape::record(const std::vector<int>& inputs, int out_numel, BackwardFn fn) {
  const int id = static_cast<int>(nodes_.size());
  for (int in : inputs)
    if (in >= id) throw ContractError("tape: op input does not precede the op");
  nodes_.push_back(Node{out_numel, std::move(fn)});
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  grads_.clear();
  grads_.resize(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i)
    grads_[i].assign(static_cast<size_t>(nodes_[i].numel), 0.0);
  grads_[static_cast<size_t>(loss.node())][0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back) n.back(*this, grads_[static_cast<size_t>(i)]);
  }
  ran_backward_ = true;
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
  if (t.tape() != this || t.node() < 0)
    throw ContractError("grad: tensor is not bound to this tape");
  if (!ran_backward_) throw ContractError("grad: backward has not run");
  return grads_[static_cast<size_t>(t.node())];
}

// ---- op helpers -------------------------------------------------------------

namespace {

/// Finishes an op: records the node when any input is tracked.
void finish(Tensor& out, std::initializer_list<const Tensor*> ins, Tape::BackwardFn fn) {
  Tape* tp = common_tape(ins);
  if (!tp) return;
  std::vector<int> ids;
  for (const Tensor* t : ins)
    if (t->tape()) ids.push_back(t->node());
  out.bind(tp, tp->record(ids, out.numel(), std::move(fn)));
}

void axpy(std::vector<double>& y, const std::vector<double>& x, double a = 1.0) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  const int an = a.node(), bn = b.node();
  finish(out, {&a, &b}, [an, bn](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g);
    if (bn >= 0) axpy(t.grad_buf(bn), g);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  const int an = a.node(), bn = b.node();
  finish(out, {&a, &b}, [an, bn](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g);
    if (bn >= 0) axpy(t.grad_buf(bn), g, -1.0);
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  const int an = a.node(), bn = b.node();
  const Data ad = a.storage(), bd = b.storage();
  finish(out, {&a, &b}, [an, bn, ad, bd](Tape& t, const std::vector<double>& g) {
    if (an >= 0) {
      auto& ga = t.grad_buf(an);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_buf(bn);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
  const int an = a.node(), bn = b.node();
  const Data ad = a.storage(), bd = b.storage();
  finish(out, {&a, &b}, [an, bn, ad, bd](Tape& t, const std::vector<double>& g) {
    if (an >= 0) {
      auto& ga = t.grad_buf(an);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*bd)[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_buf(bn);
      for (size_t i = 0; i < g.size(); ++i)
        gb[i] -= g[i] * (*ad)[i] / ((*bd)[i] * (*bd)[i]);
    }
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  const int an = a.node();
  finish(out, {&a}, [an](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g);
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  const int an = a.node();
  finish(out, {&a}, [an, c](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g, c);
  });
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// ---- unary ---------------------------------------------------------------------

namespace {

/// Shared skeleton for elementwise unaries: dx = g * dfn(x, out).
template <class Fwd, class Dfn>
Tensor unary_op(const Tensor& a, Fwd fwd, Dfn dfn) {
  Tensor out(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
  const int an = a.node();
  const Data ad = a.storage(), od = out.storage();
  finish(out, {&a}, [an, ad, od, dfn](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfn((*ad)[i], (*od)[i]);
  });
  return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return unary_op(a, [](double x) { return std::abs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor pow_const(const Tensor& a, double p) {
  return unary_op(a, [p](double x) { return std::pow(x, p); },
                  [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Tensor sign_guard(const Tensor& a, double eps) {
  return unary_op(a, [eps](double x) { return x + std::copysign(eps, x); },
                  [](double, double) { return 1.0; });
}

// ---- linear algebra ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2("matmul", a);
  check_rank2("matmul", b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  matmul_nn(a.data(), b.data(), out.data(), m, k, n, false);
  const int an = a.node(), bn = b.node();
  const Data ad = a.storage(), bd = b.storage();
  finish(out, {&a, &b}, [an, bn, ad, bd, m, k, n](Tape& t, const std::vector<double>& g) {
    if (an >= 0) matmul_nt_acc(g.data(), bd->data(), t.grad_buf(an).data(), m, n, k);
    if (bn >= 0) matmul_tn_acc(ad->data(), g.data(), t.grad_buf(bn).data(), m, k, n);
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  check_rank2("transpose", a);
  const int m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[static_cast<size_t>(j) * m + i] = a.at(i, j);
  const int an = a.node();
  finish(out, {&a}, [an, m, n](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  const int n = shape_numel(shape);
  if (n != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor out(std::move(shape), a.vec());
  const int an = a.node();
  finish(out, {&a}, [an](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g);
  });
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  check_rank2("softmax_rows", a);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double* xi = a.data() + static_cast<size_t>(i) * n;
    double* yi = out.data() + static_cast<size_t>(i) * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    for (int j = 0; j < n; ++j) yi[j] /= s;
  }
  const int an = a.node();
  const Data od = out.storage();
  finish(out, {&a}, [an, od, m, n](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (int i = 0; i < m; ++i) {
      const double* w = od->data() + static_cast<size_t>(i) * n;
      const double* gi = g.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += gi[j] * w[j];
      double* gai = ga.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) gai[j] += w[j] * (gi[j] - dot);
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& ids) {
  check_rank2("gather_rows", a);
  const int m = a.rows(), n = a.cols();
  const int k = static_cast<int>(ids.size());
  if (k == 0) throw ContractError("gather_rows: empty index list");
  for (int id : ids)
    if (id < 0 || id >= m)
      throw ContractError("gather_rows: index " + std::to_string(id) + " out of range [0," +
                          std::to_string(m) + ")");
  Tensor out({k, n});
  for (int i = 0; i < k; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * n,
                a.data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * n,
                sizeof(double) * static_cast<size_t>(n));
  const int an = a.node();
  finish(out, {&a}, [an, ids, n](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (size_t i = 0; i < ids.size(); ++i) {
      double* row = ga.data() + static_cast<size_t>(ids[i]) * n;
      const double* gi = g.data() + i * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) row[j] += gi[j];
    }
  });
  return out;
}

Tensor select_per_row(const Tensor& a, const std::vector<int>& ids) {
  check_rank2("select_per_row", a);
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(ids.size()) != m)
    throw ShapeError("select_per_row: need one index per row");
  for (int id : ids)
    if (id < 0 || id >= n)
      throw ContractError("select_per_row: column " + std::to_string(id) + " out of range");
  Tensor out({m, 1});
  for (int i = 0; i < m; ++i) out.data()[i] = a.at(i, ids[static_cast<size_t>(i)]);
  const int an = a.node();
  finish(out, {&a}, [an, ids, n](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (size_t i = 0; i < ids.size(); ++i)
      ga[i * static_cast<size_t>(n) + static_cast<size_t>(ids[i])] += g[i];
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int m = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    check_rank2("concat_cols", p);
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out({m, total});
  int off = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < m; ++i)
      std::memcpy(out.data() + static_cast<size_t>(i) * total + off,
                  p.data() + static_cast<size_t>(i) * p.cols(),
                  sizeof(double) * static_cast<size_t>(p.cols()));
    off += p.cols();
  }
  std::vector<int> nodes, widths;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  Tape* tp = nullptr;
  for (const Tensor& p : parts) {
    if (!p.tape()) continue;
    if (tp && tp != p.tape()) throw ContractError("operands recorded on different tapes");
    tp = p.tape();
  }
  if (tp) {
    std::vector<int> ins;
    for (int nid : nodes)
      if (nid >= 0) ins.push_back(nid);
    int on = tp->record(ins, out.numel(), [nodes, widths, m, total](Tape& t, const std::vector<double>& g) {
      int off2 = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const int w = widths[pi];
        if (nodes[pi] >= 0) {
          auto& ga = t.grad_buf(nodes[pi]);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              ga[static_cast<size_t>(i) * w + j] += g[static_cast<size_t>(i) * total + off2 + j];
        }
        off2 += w;
      }
    });
    out.bind(tp, on);
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check_rank2("slice_cols", a);
  const int m = a.rows(), n = a.cols();
  if (c0 < 0 || c1 > n || c0 >= c1)
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " + shape_str(a.shape()));
  const int w = c1 - c0;
  Tensor out({m, w});
  for (int i = 0; i < m; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * w,
                a.data() + static_cast<size_t>(i) * n + c0, sizeof(double) * static_cast<size_t>(w));
  const int an = a.node();
  finish(out, {&a}, [an, c0, w, n, m](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        ga[static_cast<size_t>(i) * n + c0 + j] += g[static_cast<size_t>(i) * w + j];
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const int n = parts[0].cols();
  int total = 0;
  for (const Tensor& p : parts) {
    check_rank2("concat_rows", p);
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  Tensor out({total, n});
  int off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.data() + static_cast<size_t>(off) * n, p.data(),
                sizeof(double) * static_cast<size_t>(p.numel()));
    off += p.rows();
  }
  Tape* tp = nullptr;
  for (const Tensor& p : parts) {
    if (!p.tape()) continue;
    if (tp && tp != p.tape()) throw ContractError("operands recorded on different tapes");
    tp = p.tape();
  }
  if (tp) {
    std::vector<int> nodes, heights;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      heights.push_back(p.rows());
    }
    std::vector<int> ins;
    for (int nid : nodes)
      if (nid >= 0) ins.push_back(nid);
    int on = tp->record(ins, out.numel(), [nodes, heights, n](Tape& t, const std::vector<double>& g) {
      size_t off2 = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const size_t count = static_cast<size_t>(heights[pi]) * n;
        if (nodes[pi] >= 0) {
          auto& ga = t.grad_buf(nodes[pi]);
          for (size_t j = 0; j < count; ++j) ga[j] += g[off2 + j];
        }
        off2 += count;
      }
    });
    out.bind(tp, on);
  }
  return out;
}

// ---- reductions ------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (int i = 0; i < a.numel(); ++i) s += a.data()[i];
  Tensor out = Tensor::scalar(s);
  const int an = a.node();
  finish(out, {&a}, [an](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (double& v : ga) v += g[0];
  });
  return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.numel()); }

Tensor sum_axis0(const Tensor& a) {
  check_rank2("sum_axis0", a);
  const int m = a.rows(), n = a.cols();
  Tensor out({1, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j] += a.at(i, j);
  const int an = a.node();
  finish(out, {&a}, [an, m, n](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j)];
  });
  return out;
}

Tensor mean_axis0(const Tensor& a) { return scale(sum_axis0(a), 1.0 / a.rows()); }

Tensor sum_axis1(const Tensor& a) {
  check_rank2("sum_axis1", a);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, 1});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += a.at(i, j);
    out.data()[i] = s;
  }
  const int an = a.node();
  finish(out, {&a}, [an, m, n](Tape& t, const std::vector<double>& g) {
    if (an < 0) return;
    auto& ga = t.grad_buf(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(i)];
  });
  return out;
}

Tensor mean_axis1(const Tensor& a) { return scale(sum_axis1(a), 1.0 / a.cols()); }

// ---- broadcasts -------------------------------------------------------------------

namespace {

void check_rowvec(const char* op, const Tensor& a, const Tensor& row) {
  const bool ok = (row.rank() == 1 && row.dim(0) == a.cols()) ||
                  (row.rank() == 2 && row.dim(0) == 1 && row.dim(1) == a.cols());
  if (!ok)
    throw ShapeError(std::string(op) + ": row vector " + shape_str(row.shape()) +
                     " does not match " + shape_str(a.shape()));
}

void check_colvec(const char* op, const Tensor& a, const Tensor& col) {
  const bool ok = col.rank() == 2 && col.dim(0) == a.rows() && col.dim(1) == 1;
  if (!ok)
    throw ShapeError(std::string(op) + ": column vector " + shape_str(col.shape()) +
                     " does not match " + shape_str(a.shape()));
}

}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  check_rank2("add_rowvec", a);
  check_rowvec("add_rowvec", a, row);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + row.data()[j];
  const int an = a.node(), rn = row.node();
  finish(out, {&a, &row}, [an, rn, m, n](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g);
    if (rn >= 0) {
      auto& gr = t.grad_buf(rn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gr[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * n + j];
    }
  });
  return out;
}

Tensor mul_rowvec(const Tensor& a, const Tensor& row) {
  check_rank2("mul_rowvec", a);
  check_rowvec("mul_rowvec", a, row);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) * row.data()[j];
  const int an = a.node(), rn = row.node();
  const Data ad = a.storage(), rd = row.storage();
  finish(out, {&a, &row}, [an, rn, ad, rd, m, n](Tape& t, const std::vector<double>& g) {
    if (an >= 0) {
      auto& ga = t.grad_buf(an);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(i) * n + j] * (*rd)[static_cast<size_t>(j)];
    }
    if (rn >= 0) {
      auto& gr = t.grad_buf(rn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gr[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * n + j] * (*ad)[static_cast<size_t>(i) * n + j];
    }
  });
  return out;
}

Tensor add_colvec(const Tensor& a, const Tensor& col) {
  check_rank2("add_colvec", a);
  check_colvec("add_colvec", a, col);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + col.data()[i];
  const int an = a.node(), cn = col.node();
  finish(out, {&a, &col}, [an, cn, m, n](Tape& t, const std::vector<double>& g) {
    if (an >= 0) axpy(t.grad_buf(an), g);
    if (cn >= 0) {
      auto& gc = t.grad_buf(cn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gc[static_cast<size_t>(i)] += g[static_cast<size_t>(i) * n + j];
    }
  });
  return out;
}

Tensor mul_colvec(const Tensor& a, const Tensor& col) {
  check_rank2("mul_colvec", a);
  check_colvec("mul_colvec", a, col);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) * col.data()[i];
  const int an = a.node(), cn = col.node();
  const Data ad = a.storage(), cd = col.storage();
  finish(out, {&a, &col}, [an, cn, ad, cd, m, n](Tape& t, const std::vector<double>& g) {
    if (an >= 0) {
      auto& ga = t.grad_buf(an);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(i) * n + j] * (*cd)[static_cast<size_t>(i)];
    }
    if (cn >= 0) {
      auto& gc = t.grad_buf(cn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gc[static_cast<size_t>(i)] += g[static_cast<size_t>(i) * n + j] * (*ad)[static_cast<size_t>(i) * n + j];
    }
  });
  return out;
}

Tensor div_colvec(const Tensor& a, const Tensor& col) {
  check_rank2("div_colvec", a);
  check_colvec("div_colvec", a, col);
  const int m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) / col.data()[i];
  const int an = a.node(), cn = col.node();
  const Data ad = a.storage(), cd = col.storage();
  finish(out, {&a, &col}, [an, cn, ad, cd, m, n](Tape& t, const std::vector<double>& g) {
    if (an >= 0) {
      auto& ga = t.grad_buf(an);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(i) * n + j] / (*cd)[static_cast<size_t>(i)];
    }
    if (cn >= 0) {
      auto& gc = t.grad_buf(cn);
      for (int i = 0; i < m; ++i) {
        const double c = (*cd)[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j)
          gc[static_cast<size_t>(i)] -= g[static_cast<size_t>(i) * n + j] *
                                        (*ad)[static_cast<size_t>(i) * n + j] / (c * c);
      }
    }
  });
  return out;
}

// ---- composites --------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_rank2("layer_norm", x);
  if (x.cols() < 2) throw ContractError("layer_norm: last axis must have length >= 2");
  Tensor centered = add_colvec(x, neg(mean_axis1(x)));
  Tensor var = mean_axis1(mul(centered, centered));
  Tensor stddev = sqrt(add_scalar(var, eps));
  Tensor normed = div_colvec(centered, stddev);
  return add_rowvec(mul_rowvec(normed, gain), bias);
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  Tensor norms = sqrt(sum_axis1(mul(x, x)));
  return div_colvec(x, add_scalar(norms, eps));
}

Tensor cosine(const Tensor& a, const Tensor& b, double eps) {
  if (a.numel() != b.numel()) throw ShapeError("cosine: lengths differ");
  Shape flat{1, a.numel()};
  Tensor fa = reshape(a, flat), fb = reshape(b, flat);
  Tensor dot = sum_all(mul(fa, fb));
  Tensor na = sqrt(sum_all(mul(fa, fa)));
  Tensor nb = sqrt(sum_all(mul(fb, fb)));
  return div(dot, add_scalar(mul(na, nb), eps));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor* add_mask, double scl) {
  Tensor scores = scale(matmul(q, transpose(k)), scl);
  if (add_mask) scores = add(scores, *add_mask);
  return matmul(softmax_rows(scores), v);
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool train) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  for (int i = 0; i < mask.numel(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
  return mul(x, mask);
}

}  // namespace xpro
