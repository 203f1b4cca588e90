// SPDX-License-Identifier: Apache-2.0
#include "emobev/optim.hpp"

#include <cmath>

namespace emobev {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
}

void Adam::step(double lr_t) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const std::vector<double>& g = p.grad();
    std::vector<double>& m = m_[pi];
    std::vector<double>& v = v_[pi];
    double* pd = p.data();
    const int n = p.size();
    for (int i = 0; i < n; ++i) {
      const double gi = g[static_cast<std::size_t>(i)];
      if (!std::isfinite(gi)) throw NumericalError("adam: non-finite gradient");
      m[static_cast<std::size_t>(i)] = cfg_.beta1 * m[static_cast<std::size_t>(i)] + (1.0 - cfg_.beta1) * gi;
      v[static_cast<std::size_t>(i)] = cfg_.beta2 * v[static_cast<std::size_t>(i)] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[static_cast<std::size_t>(i)] / bc1;
      const double vhat = v[static_cast<std::size_t>(i)] / bc2;
      pd[i] -= lr_t * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double PolySchedule::lr_at(int t) const {
  if (total_steps <= 0) throw std::invalid_argument("PolySchedule: total_steps must be > 0");
  if (t < 0) throw std::invalid_argument("PolySchedule: t must be >= 0");
  if (t >= total_steps) return floor_lr;
  return floor_lr + (lr0 - floor_lr) * std::pow(1.0 - static_cast<double>(t) / total_steps, power);
}

Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("mse_loss: shape mismatch");
  const int n = pred.size();
  const bool rg = pred.requires_grad() || target.requires_grad();
  Tensor out = make_op_output(tape, {1}, rg);
  const double* pd = pred.data();
  const double* td = target.data();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = pd[i] - td[i];
    acc += d * d;
  }
  out.data()[0] = acc / n;
  check_finite(tape, out, "mse_loss");
  if (rg) {
    Tensor ps = pred, ts = target, os = out;
    tape.record([ps, ts, os, n]() {
      const double g = os.grad()[0] * 2.0 / n;
      const double* pd = ps.data();
      const double* td = ts.data();
      double* pg = ps.requires_grad() ? ps.node()->grad.data() : nullptr;
      double* tg = ts.requires_grad() ? ts.node()->grad.data() : nullptr;
      for (int i = 0; i < n; ++i) {
        const double d = g * (pd[i] - td[i]);
        if (pg) pg[i] += d;
        if (tg) tg[i] -= d;
      }
    });
  }
  return out;
}

Tensor cross_entropy_2class(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.shape()[1] != 2)
    throw std::invalid_argument("cross_entropy_2class: logits must be [B x 2]");
  const int b = logits.shape()[0];
  if (static_cast<int>(labels.size()) != b)
    throw std::invalid_argument("cross_entropy_2class: label count mismatch");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("cross_entropy_2class: labels must be 0/1");
  const bool rg = logits.requires_grad();
  Tensor out = make_op_output(tape, {1}, rg);
  const double* xd = logits.data();
  double acc = 0.0;
  for (int i = 0; i < b; ++i) {
    const double a = xd[2 * i], c = xd[2 * i + 1];
    const double m = a > c ? a : c;
    const double lse = m + std::log(std::exp(a - m) + std::exp(c - m));
    acc += lse - xd[2 * i + labels[static_cast<std::size_t>(i)]];
  }
  out.data()[0] = acc / b;
  check_finite(tape, out, "cross_entropy");
  if (rg) {
    Tensor xs = logits, os = out;
    std::vector<int> ys = labels;
    tape.record([xs, os, ys, b]() {
      const double g = os.grad()[0] / b;
      const double* xd = xs.data();
      double* xg = xs.node()->grad.data();
      for (int i = 0; i < b; ++i) {
        const double a = xd[2 * i], c = xd[2 * i + 1];
        const double m = a > c ? a : c;
        const double ea = std::exp(a - m), ec = std::exp(c - m);
        const double z = ea + ec;
        xg[2 * i] += g * (ea / z - (ys[static_cast<std::size_t>(i)] == 0 ? 1.0 : 0.0));
        xg[2 * i + 1] += g * (ec / z - (ys[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor masked_bce_logits(Tape& tape, const Tensor& logits,
                         const std::vector<MaskedBehaviorTarget>& targets) {
  if (logits.rank() != 2 || logits.shape()[1] != 5)
    throw std::invalid_argument("masked_bce_logits: logits must be [B x 5]");
  const int b = logits.shape()[0];
  if (static_cast<int>(targets.size()) != b)
    throw std::invalid_argument("masked_bce_logits: target count mismatch");
  int count = 0;
  for (const auto& t : targets)
    for (bool m : t.mask) count += m ? 1 : 0;
  if (count == 0) throw std::invalid_argument("masked_bce_logits: batch has no unmasked element");

  const bool rg = logits.requires_grad();
  Tensor out = make_op_output(tape, {1}, rg);
  const double* xd = logits.data();
  double acc = 0.0;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < 5; ++j) {
      if (!targets[static_cast<std::size_t>(i)].mask[static_cast<std::size_t>(j)]) continue;
      const double x = xd[5 * i + j];
      const double y = targets[static_cast<std::size_t>(i)].labels[static_cast<std::size_t>(j)];
      // max(x,0) - x*y + log(1 + exp(-|x|))
      acc += (x > 0.0 ? x : 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
  out.data()[0] = acc / count;
  check_finite(tape, out, "masked_bce");
  if (rg) {
    Tensor xs = logits, os = out;
    std::vector<MaskedBehaviorTarget> ts = targets;
    tape.record([xs, os, ts, b, count]() {
      const double g = os.grad()[0] / count;
      const double* xd = xs.data();
      double* xg = xs.node()->grad.data();
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < 5; ++j) {
          if (!ts[static_cast<std::size_t>(i)].mask[static_cast<std::size_t>(j)]) continue;
          const double x = xd[5 * i + j];
          const double y = ts[static_cast<std::size_t>(i)].labels[static_cast<std::size_t>(j)];
          const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          xg[5 * i + j] += g * (sig - y);
        }
    });
  }
  return out;
}

}  // namespace emobev
