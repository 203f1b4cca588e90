// SPDX-License-Identifier: Apache-2.0
//
// Adam, polynomial learning-rate decay, and the three training losses:
// MSE regression, 2-class cross-entropy, masked 5-behavior BCE-with-logits.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "emobev/tensor.hpp"

namespace emobev {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  /// One update with the given step-size (pass the scheduled lr when decay
  /// is in use). Reads each parameter's .grad; throws on non-finite grads.
  void step(double lr_t);

  void zero_grad();
  std::int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

/// lr(t) = floor_lr + (lr0 - floor_lr) * (1 - t/total_steps)^power,
/// clamped at floor_lr for t >= total_steps.
struct PolySchedule {
  double lr0 = 1e-4;
  int total_steps = 1;
  double power = 1.0;
  double floor_lr = 0.0;

  double lr_at(int t) const;
};

/// Mean over all B*6 entries of the squared difference.
Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target);

/// Mean of -log softmax(logits)[label] over the batch, log-sum-exp stabilised.
/// logits is [B x 2], labels in {0,1}.
Tensor cross_entropy_2class(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

struct MaskedBehaviorTarget {
  std::array<double, 5> labels{};  // binary
  std::array<bool, 5> mask{};      // true = behavior available
};

/// Stable per-element BCE-with-logits averaged over unmasked elements only.
/// Masked logits receive exactly zero gradient. Throws if no element in the
/// batch is unmasked.
Tensor masked_bce_logits(Tape& tape, const Tensor& logits,
                         const std::vector<MaskedBehaviorTarget>& targets);

}  // namespace emobev
