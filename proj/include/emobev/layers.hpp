// SPDX-License-Identifier: Apache-2.0
//
// The closed set of network layers used by the emotion and behavior models:
// 1D convolution, linear, GRU, adaptive max pooling, local average pooling
// and dropout, plus the receptive-field calculator for conv/pool stacks.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "emobev/tensor.hpp"

namespace emobev {

/// floor((L + 2*padding - kernel)/stride) + 1; throws if the result is < 1.
int output_length(int length, int kernel, int stride, int padding);

// --- primitive tape ops -------------------------------------------------------

/// Cross-correlation over time. x is [B x in_ch x L], weight
/// [out_ch x in_ch x kernel], bias [out_ch]; kernels span all input channels
/// per scan. Returns [B x out_ch x L_out].
Tensor conv1d_forward(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int stride, int padding);

/// y = x * W + b with x [B x in], W [in x out], b [out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Per-channel max over the whole time axis: [B x C x L] -> [B x C x 1].
/// Gradient flows only to the argmax position; ties break to the lowest
/// time index so backward is deterministic.
Tensor adaptive_max_pool(Tape& tape, const Tensor& x);

/// Local average pooling along time; trailing remainder frames are dropped.
Tensor avg_pool(Tape& tape, const Tensor& x, int kernel, int stride);

/// Inverted dropout: in train mode entries are zeroed with probability p and
/// survivors scaled by 1/(1-p); eval mode is the identity.
Tensor dropout(Tape& tape, const Tensor& x, double p, bool train, Rng& rng);

/// [B x C x 1] -> [B x C].
Tensor squeeze_time(Tape& tape, const Tensor& x);

// --- parameterised layers -----------------------------------------------------

struct Conv1d {
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, padding = 0;
  Tensor weight;  // [out_ch x in_ch x kernel]
  Tensor bias;    // [out_ch]

  Conv1d() = default;
  Conv1d(int in, int out, int k, int s, int p = 0);

  /// Uniform +-sqrt(1/fan_in) weights, zero bias. fan_in = in_ch * kernel.
  void init_params(Rng& rng, bool trainable);
  Tensor forward(Tape& tape, const Tensor& x) const {
    return conv1d_forward(tape, x, weight, bias, stride, padding);
  }
  int output_len(int l) const { return output_length(l, kernel, stride, padding); }
};

struct Dense {
  int in = 0, out = 0;
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Dense() = default;
  Dense(int in_, int out_) : in(in_), out(out_) {}
  void init_params(Rng& rng, bool trainable);
  Tensor forward(Tape& tape, const Tensor& x) const { return linear(tape, x, weight, bias); }
};

struct PReLULayer {
  Tensor slope;  // scalar, learnable
  void init_params(bool trainable, double initial = 0.25);
  Tensor forward(Tape& tape, const Tensor& x) const { return prelu(tape, x, slope); }
};

/// Multi-layer GRU. Gates use sigmoid, the candidate uses tanh, and the
/// reset gate is applied to the hidden state before the candidate
/// projection:
///   z_t = sigmoid(x W_z + h U_z + b_z)
///   r_t = sigmoid(x W_r + h U_r + b_r)
///   hc  = tanh(x W_n + (r_t . h) U_n + b_n)
///   h_t = (1 - z_t) . hc + z_t . h_{t-1}
struct GRU {
  struct CellParams {
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wn, un, bn;
  };
  int in_size = 0, hidden_size = 0, num_layers = 1;
  std::vector<CellParams> cells;

  GRU() = default;
  GRU(int in, int hidden, int layers);
  void init_params(Rng& rng, bool trainable);

  /// One step of layer `layer`: x [1 x in], h [1 x hidden] -> new h.
  Tensor step(Tape& tape, int layer, const Tensor& x, const Tensor& h) const;

  struct Result {
    std::vector<Tensor> outputs;  // last layer's output per step
    std::vector<Tensor> h_final;  // final hidden state per layer
  };
  /// xs: sequence of [1 x in] (rank-1 [in] accepted). h0 zeros when absent.
  Result forward(Tape& tape, const std::vector<Tensor>& xs,
                 const std::vector<Tensor>* h0 = nullptr) const;

  std::vector<Tensor> parameters() const;
};

// --- stack description ---------------------------------------------------------

struct LayerDesc {
  enum class Kind { conv, avg_pool, activation, dropout, adaptive_max_pool, linear, gru };
  Kind kind;
  // conv: in_ch/out_ch/kernel/stride/padding; avg_pool: kernel/stride;
  // dropout: p; linear: in_ch -> out_ch; gru: in_ch/out_ch(hidden)/num_layers
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, padding = 0;
  double p = 0.0;
  std::string activation;  // "relu" | "prelu"
  int num_layers = 1;

  static LayerDesc make_conv(int in, int out, int k, int s, int pad = 0);
  static LayerDesc make_avg_pool(int k, int s);
  static LayerDesc make_activation(std::string name);
  static LayerDesc make_dropout(double p);
  static LayerDesc make_adaptive_max_pool();
  static LayerDesc make_linear(int in, int out);
  static LayerDesc make_gru(int in, int hidden, int layers);
};

struct StackSpec {
  std::vector<LayerDesc> layers;

  /// Checks channel agreement between adjacent layers and that at most one
  /// adaptive max pool is present.
  void validate() const;

  /// Parses the one-layer-per-line text format used by the CLI, e.g.
  ///   conv 84 96 10 2 0
  ///   avgpool 2 2
  ///   adaptivemaxpool
  static StackSpec parse(const std::string& text);
};

struct ReceptiveField {
  int frames = 1;
  double seconds = 0.0;
};

/// Receptive field of the conv/pool prefix of a stack (layers up to the
/// adaptive max pool): RF += (k-1)*jump, jump *= stride, over layers in
/// order. seconds = frames * frame_shift_s.
ReceptiveField receptive_field(const StackSpec& stack, double frame_shift_s);

/// Per-layer cumulative receptive fields, for reporting.
std::vector<ReceptiveField> receptive_field_per_layer(const StackSpec& stack,
                                                      double frame_shift_s);

}  // namespace emobev
