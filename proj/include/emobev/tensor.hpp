// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-array engine with reverse-mode automatic differentiation.
// Rank <= 3, double precision, define-by-run: each forward pass records its
// operations on a Tape which replays them in reverse for gradients. The op
// set is exactly what the emotion/behavior networks need; there is no
// general broadcasting (scalar-with-tensor only) and no GPU path.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "emobev/common.hpp"

namespace emobev {

class Tape;

namespace detail {
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that produced this node, if any
  std::uint64_t tape_epoch = 0;
};
}  // namespace detail

/// Shared-handle tensor. Copying a Tensor aliases the same storage; trained
/// weights are therefore cheap to pass around and safe to share read-only
/// across concurrent inference calls.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int size() const { return static_cast<int>(node_->data.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& vec() { return node_->data; }
  const std::vector<double>& vec() const { return node_->data; }

  /// Value of a size-1 tensor.
  double item() const;

  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad();

  /// Low-level handle used by operation implementations.
  detail::TensorNode* node() const { return node_.get(); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;
  friend Tensor make_op_output(Tape&, std::vector<int>, bool);
};

/// Records one forward pass. Operations are appended in execution order,
/// which is a topological order by construction; backward() replays them
/// exactly once, in reverse. A tape belongs to a single training job.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) {
    if (recording) ops_.push_back(std::move(backward_fn));
  }

  /// Seeds d(loss)/d(loss)=1 and propagates through all recorded ops.
  /// Gradient accumulation across fan-out is additive.
  void backward(const Tensor& loss);

  /// Discards the recorded graph; the next forward pass starts fresh.
  void clear() {
    ops_.clear();
    ++epoch_;
    backward_done_ = false;
  }

  std::size_t num_ops() const { return ops_.size(); }
  std::uint64_t epoch() const { return epoch_; }

  /// When set, every op output is scanned for NaN/Inf and a NumericalError
  /// is thrown on the first hit.
  bool finite_checks = true;

  /// Inference-only passes can drop backward closures entirely. A tape with
  /// recording disabled must not be used for backward().
  bool recording = true;

 private:
  std::vector<std::function<void()>> ops_;
  std::uint64_t epoch_ = 1;
  bool backward_done_ = false;
};

/// Allocates an op-output tensor stamped with the tape's identity.
Tensor make_op_output(Tape& tape, std::vector<int> shape, bool requires_grad);

/// Throws NumericalError if t contains NaN/Inf (honours tape.finite_checks).
void check_finite(const Tape& tape, const Tensor& t, const char* op_name);

// --- elementwise operations -------------------------------------------------
// Binary ops accept equal shapes or a scalar (size-1) on either side.
Tensor add(Tape& tape, const Tensor& x, const Tensor& y);
Tensor sub(Tape& tape, const Tensor& x, const Tensor& y);
Tensor mul(Tape& tape, const Tensor& x, const Tensor& y);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh_op(Tape& tape, const Tensor& x);
/// PReLU with a learnable scalar slope: y = x for x>0, slope*x otherwise.
Tensor prelu(Tape& tape, const Tensor& x, const Tensor& slope);

// --- linear algebra ----------------------------------------------------------
/// Standard matrix product [m x k] * [k x n] -> [m x n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

/// Sum of all entries -> scalar.
Tensor sum(Tape& tape, const Tensor& x);

/// Copy with a new shape of identical element count.
Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape);

/// Concatenate rank-3 tensors [B x C x L_i] along the time axis.
Tensor concat_time(Tape& tape, const std::vector<Tensor>& xs);

// --- gradient verification ---------------------------------------------------
/// Central finite-difference check of a scalar-valued function against the
/// tape gradient. Returns max over checked coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
/// When max_coords > 0, a seeded random subset of coordinates is checked.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                  double eps, int max_coords = 0, std::uint64_t seed = 1234);

}  // namespace emobev
