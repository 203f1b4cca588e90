// SPDX-License-Identifier: Apache-2.0
#include "emobev/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace emobev {

namespace {

int shape_product(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

void validate_shape(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 3)
    throw std::invalid_argument("tensor rank must be 1..3");
  shape_product(shape);
}

std::shared_ptr<detail::TensorNode> make_node(std::vector<int> shape, bool requires_grad) {
  validate_shape(shape);
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data.assign(static_cast<std::size_t>(shape_product(n->shape)), 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->data.size(), 0.0);
  return n;
}

struct BinaryArgs {
  // one of the two sides may be a scalar broadcast over the other
  bool x_scalar = false;
  bool y_scalar = false;
  std::vector<int> out_shape;
};

BinaryArgs binary_shape(const Tensor& x, const Tensor& y, const char* op) {
  BinaryArgs a;
  if (x.shape() == y.shape()) {
    a.out_shape = x.shape();
    return a;
  }
  if (x.size() == 1) {
    a.x_scalar = true;
    a.out_shape = y.shape();
    return a;
  }
  if (y.size() == 1) {
    a.y_scalar = true;
    a.out_shape = x.shape();
    return a;
  }
  throw std::invalid_argument(std::string(op) + ": shape mismatch (only scalar broadcast supported)");
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.vec().begin(), t.vec().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<int>(data.size()) != shape_product(shape))
    throw std::invalid_argument("from_data: product(shape) != data length");
  Tensor t = zeros(std::move(shape), requires_grad);
  t.vec() = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor is not a scalar");
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor make_op_output(Tape& tape, std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), requires_grad);
  n->tape = &tape;
  n->tape_epoch = tape.epoch();
  return Tensor(std::move(n));
}

void check_finite(const Tape& tape, const Tensor& t, const char* op_name) {
  if (!tape.finite_checks) return;
  for (double v : t.vec())
    if (!std::isfinite(v))
      throw NumericalError(std::string(op_name) + ": non-finite value in forward pass");
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  auto* n = loss.node();
  if (n->tape != this || n->tape_epoch != epoch_)
    throw std::invalid_argument("backward: loss is not on this tape (detached graph)");
  if (backward_done_)
    throw std::logic_error("backward: tape already replayed; clear() before the next pass");
  backward_done_ = true;
  if (!n->requires_grad) return;  // nothing upstream requires gradients
  n->grad.assign(1, 1.0);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

namespace {

// Helper shared by the elementwise binary ops. fwd(a,b) computes the value;
// bwd writes (dL/da, dL/db) given (a, b, dL/dout).
template <typename Fwd, typename Bwd>
Tensor binary_op(Tape& tape, const Tensor& x, const Tensor& y, const char* name, Fwd fwd,
                 Bwd bwd) {
  BinaryArgs ba = binary_shape(x, y, name);
  const bool rg = x.requires_grad() || y.requires_grad();
  Tensor out = make_op_output(tape, ba.out_shape, rg);
  const int n = out.size();
  const double* xd = x.data();
  const double* yd = y.data();
  double* od = out.data();
  for (int i = 0; i < n; ++i)
    od[i] = fwd(xd[ba.x_scalar ? 0 : i], yd[ba.y_scalar ? 0 : i]);
  check_finite(tape, out, name);
  if (rg) {
    auto xn = x.node();  // raw pointers are safe: the closure owns shared handles
    Tensor xs = x, ys = y, os = out;
    bool xsc = ba.x_scalar, ysc = ba.y_scalar;
    tape.record([xs, ys, os, xsc, ysc, bwd, n]() {
      const double* xd = xs.data();
      const double* yd = ys.data();
      const double* og = os.grad().data();
      double* xg = xs.requires_grad() ? xs.node()->grad.data() : nullptr;
      double* yg = ys.requires_grad() ? ys.node()->grad.data() : nullptr;
      for (int i = 0; i < n; ++i) {
        double da = 0.0, db = 0.0;
        bwd(xd[xsc ? 0 : i], yd[ysc ? 0 : i], og[i], da, db);
        if (xg) xg[xsc ? 0 : i] += da;
        if (yg) yg[ysc ? 0 : i] += db;
      }
    });
    (void)xn;
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(Tape& tape, const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  const bool rg = x.requires_grad();
  Tensor out = make_op_output(tape, x.shape(), rg);
  const int n = out.size();
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < n; ++i) od[i] = fwd(xd[i]);
  check_finite(tape, out, name);
  if (rg) {
    Tensor xs = x, os = out;
    tape.record([xs, os, bwd, n]() {
      const double* xd = xs.data();
      const double* od = os.data();
      const double* og = os.grad().data();
      double* xg = xs.node()->grad.data();
      for (int i = 0; i < n; ++i) xg[i] += bwd(xd[i], od[i]) * og[i];
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& x, const Tensor& y) {
  return binary_op(
      tape, x, y, "add", [](double a, double b) { return a + b; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(Tape& tape, const Tensor& x, const Tensor& y) {
  return binary_op(
      tape, x, y, "sub", [](double a, double b) { return a - b; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(Tape& tape, const Tensor& x, const Tensor& y) {
  return binary_op(
      tape, x, y, "mul", [](double a, double b) { return a * b; },
      [](double a, double b, double g, double& da, double& db) {
        da = g * b;
        db = g * a;
      });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, "relu", [](double a) { return a > 0.0 ? a : 0.0; },
      [](double a, double) { return a > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, "sigmoid",
      [](double a) { return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, "tanh", [](double a) { return std::tanh(a); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor prelu(Tape& tape, const Tensor& x, const Tensor& slope) {
  if (slope.size() != 1) throw std::invalid_argument("prelu: slope must be a scalar tensor");
  const bool rg = x.requires_grad() || slope.requires_grad();
  Tensor out = make_op_output(tape, x.shape(), rg);
  const int n = x.size();
  const double a = slope.data()[0];
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < n; ++i) od[i] = xd[i] > 0.0 ? xd[i] : a * xd[i];
  check_finite(tape, out, "prelu");
  if (rg) {
    Tensor xs = x, ss = slope, os = out;
    tape.record([xs, ss, os, n]() {
      const double a = ss.data()[0];
      const double* xd = xs.data();
      const double* og = os.grad().data();
      double* xg = xs.requires_grad() ? xs.node()->grad.data() : nullptr;
      double* sg = ss.requires_grad() ? ss.node()->grad.data() : nullptr;
      for (int i = 0; i < n; ++i) {
        if (xd[i] > 0.0) {
          if (xg) xg[i] += og[i];
        } else {
          if (xg) xg[i] += a * og[i];
          if (sg) sg[0] += xd[i] * og[i];
        }
      }
    });
  }
  return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: both operands must be rank 2");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw std::invalid_argument("matmul: inner dimensions disagree");
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = make_op_output(tape, {m, n}, rg);
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (int i = 0; i < m; ++i) {
    double* orow = od + i * n;
    for (int p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  check_finite(tape, out, "matmul");
  if (rg) {
    Tensor as = a, bs = b, os = out;
    tape.record([as, bs, os, m, k, n]() {
      const double* ad = as.data();
      const double* bd = bs.data();
      const double* og = os.grad().data();
      if (as.requires_grad()) {
        double* ag = as.node()->grad.data();
        // dA = dC * B^T
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = og + i * n;
            const double* brow = bd + p * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ag[i * k + p] += acc;
          }
      }
      if (bs.requires_grad()) {
        double* bg = bs.node()->grad.data();
        // dB = A^T * dC
        for (int i = 0; i < m; ++i) {
          const double* grow = og + i * n;
          for (int p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            double* brow = bg + p * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  const bool rg = x.requires_grad();
  Tensor out = make_op_output(tape, {1}, rg);
  double acc = 0.0;
  for (double v : x.vec()) acc += v;
  out.data()[0] = acc;
  check_finite(tape, out, "sum");
  if (rg) {
    Tensor xs = x, os = out;
    tape.record([xs, os]() {
      const double g = os.grad()[0];
      double* xg = xs.node()->grad.data();
      const int n = xs.size();
      for (int i = 0; i < n; ++i) xg[i] += g;
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape) {
  Tensor out = make_op_output(tape, std::move(shape), x.requires_grad());
  if (out.size() != x.size()) throw std::invalid_argument("reshape: element count mismatch");
  out.vec() = x.vec();
  if (x.requires_grad()) {
    Tensor xs = x, os = out;
    tape.record([xs, os]() {
      double* xg = xs.node()->grad.data();
      const double* og = os.grad().data();
      const int n = xs.size();
      for (int i = 0; i < n; ++i) xg[i] += og[i];
    });
  }
  return out;
}

Tensor concat_time(Tape& tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_time: empty input list");
  const int b = xs[0].shape()[0];
  const int c = xs[0].rank() == 3 ? xs[0].shape()[1] : 1;
  int total = 0;
  bool rg = false;
  for (const Tensor& t : xs) {
    if (t.rank() != 3 || t.shape()[0] != b || t.shape()[1] != c)
      throw std::invalid_argument("concat_time: inputs must be [B x C x L] with equal B, C");
    total += t.shape()[2];
    rg = rg || t.requires_grad();
  }
  Tensor out = make_op_output(tape, {b, c, total}, rg);
  double* od = out.data();
  int offset = 0;
  for (const Tensor& t : xs) {
    const int l = t.shape()[2];
    const double* td = t.data();
    for (int bi = 0; bi < b; ++bi)
      for (int ci = 0; ci < c; ++ci)
        std::copy(td + (bi * c + ci) * l, td + (bi * c + ci) * l + l,
                  od + (bi * c + ci) * total + offset);
    offset += l;
  }
  if (rg) {
    std::vector<Tensor> saved = xs;
    Tensor os = out;
    tape.record([saved, os, b, c, total]() {
      const double* og = os.grad().data();
      int offset = 0;
      for (const Tensor& t : saved) {
        const int l = t.shape()[2];
        if (t.requires_grad()) {
          double* tg = t.node()->grad.data();
          for (int bi = 0; bi < b; ++bi)
            for (int ci = 0; ci < c; ++ci) {
              const double* src = og + (bi * c + ci) * total + offset;
              double* dst = tg + (bi * c + ci) * l;
              for (int i = 0; i < l; ++i) dst[i] += src[i];
            }
        }
        offset += l;
      }
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                  double eps, int max_coords, std::uint64_t seed) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");
  // analytic gradient
  Tensor xv = Tensor::from_data(x.shape(), x.vec(), true);
  Tape tape;
  Tensor loss = f(tape, xv);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  tape.backward(loss);
  std::vector<double> analytic = xv.grad();

  std::vector<int> coords(static_cast<std::size_t>(x.size()));
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords > 0 && max_coords < x.size()) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(static_cast<std::size_t>(max_coords));
  }

  // central differences on a gradient-free clone
  Tensor xf = Tensor::from_data(x.shape(), x.vec(), false);
  double worst = 0.0;
  for (int i : coords) {
    const double orig = xf.data()[i];
    xf.data()[i] = orig + eps;
    Tape tp;
    const double lp = f(tp, xf).item();
    xf.data()[i] = orig - eps;
    Tape tm;
    const double lm = f(tm, xf).item();
    xf.data()[i] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace emobev
