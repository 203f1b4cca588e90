// SPDX-License-Identifier: Apache-2.0
#include "emobev/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace emobev {

int output_length(int length, int kernel, int stride, int padding) {
  if (kernel < 1 || stride < 1 || padding < 0)
    throw std::invalid_argument("output_length: kernel/stride must be >= 1, padding >= 0");
  const int padded = length + 2 * padding;
  if (padded < kernel)
    throw std::invalid_argument("output_length: input shorter than kernel after padding");
  return (padded - kernel) / stride + 1;
}

Tensor conv1d_forward(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
                      int stride, int padding) {
  if (x.rank() != 3) throw std::invalid_argument("conv1d: input must be [B x C x L]");
  if (weight.rank() != 3) throw std::invalid_argument("conv1d: weight must be [out x in x k]");
  const int b = x.shape()[0], in_ch = x.shape()[1], len = x.shape()[2];
  const int out_ch = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != in_ch) throw std::invalid_argument("conv1d: channel mismatch");
  if (bias.size() != out_ch) throw std::invalid_argument("conv1d: bias size mismatch");
  const int out_len = output_length(len, k, stride, padding);

  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor out = make_op_output(tape, {b, out_ch, out_len}, rg);

  const double* xd = x.data();
  const double* wd = weight.data();
  const double* bd = bias.data();
  double* od = out.data();
  for (int bi = 0; bi < b; ++bi) {
    for (int oc = 0; oc < out_ch; ++oc) {
      double* orow = od + (bi * out_ch + oc) * out_len;
      for (int t = 0; t < out_len; ++t) orow[t] = bd[oc];
      for (int ic = 0; ic < in_ch; ++ic) {
        const double* xrow = xd + (bi * in_ch + ic) * len;
        const double* wrow = wd + (oc * in_ch + ic) * k;
        for (int t = 0; t < out_len; ++t) {
          const int start = t * stride - padding;
          double acc = 0.0;
          const int k0 = std::max(0, -start);
          const int k1 = std::min(k, len - start);
          for (int kk = k0; kk < k1; ++kk) acc += wrow[kk] * xrow[start + kk];
          orow[t] += acc;
        }
      }
    }
  }
  check_finite(tape, out, "conv1d");

  if (rg) {
    Tensor xs = x, ws = weight, bs = bias, os = out;
    tape.record([xs, ws, bs, os, stride, padding]() {
      const int b = xs.shape()[0], in_ch = xs.shape()[1], len = xs.shape()[2];
      const int out_ch = ws.shape()[0], k = ws.shape()[2];
      const int out_len = os.shape()[2];
      const double* xd = xs.data();
      const double* wd = ws.data();
      const double* og = os.grad().data();
      double* xg = xs.requires_grad() ? xs.node()->grad.data() : nullptr;
      double* wg = ws.requires_grad() ? ws.node()->grad.data() : nullptr;
      double* bg = bs.requires_grad() ? bs.node()->grad.data() : nullptr;
      for (int bi = 0; bi < b; ++bi) {
        for (int oc = 0; oc < out_ch; ++oc) {
          const double* grow = og + (bi * out_ch + oc) * out_len;
          if (bg)
            for (int t = 0; t < out_len; ++t) bg[oc] += grow[t];
          for (int ic = 0; ic < in_ch; ++ic) {
            const double* xrow = xd + (bi * in_ch + ic) * len;
            const double* wrow = wd + (oc * in_ch + ic) * k;
            double* xgrow = xg ? xg + (bi * in_ch + ic) * len : nullptr;
            double* wgrow = wg ? wg + (oc * in_ch + ic) * k : nullptr;
            for (int t = 0; t < out_len; ++t) {
              const double g = grow[t];
              if (g == 0.0) continue;
              const int start = t * stride - padding;
              const int k0 = std::max(0, -start);
              const int k1 = std::min(k, len - start);
              for (int kk = k0; kk < k1; ++kk) {
                if (xgrow) xgrow[start + kk] += g * wrow[kk];
                if (wgrow) wgrow[kk] += g * xrow[start + kk];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2)
    throw std::invalid_argument("linear: x and weight must be rank 2");
  const int b = x.shape()[0], in = x.shape()[1];
  const int out = weight.shape()[1];
  if (weight.shape()[0] != in) throw std::invalid_argument("linear: weight shape mismatch");
  if (bias.size() != out) throw std::invalid_argument("linear: bias size mismatch");
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  Tensor y = make_op_output(tape, {b, out}, rg);
  const double* xd = x.data();
  const double* wd = weight.data();
  const double* bd = bias.data();
  double* yd = y.data();
  for (int i = 0; i < b; ++i) {
    double* yrow = yd + i * out;
    std::copy(bd, bd + out, yrow);
    const double* xrow = xd + i * in;
    for (int p = 0; p < in; ++p) {
      const double xv = xrow[p];
      if (xv == 0.0) continue;
      const double* wrow = wd + p * out;
      for (int j = 0; j < out; ++j) yrow[j] += xv * wrow[j];
    }
  }
  check_finite(tape, y, "linear");
  if (rg) {
    Tensor xs = x, ws = weight, bs = bias, ys = y;
    tape.record([xs, ws, bs, ys]() {
      const int b = xs.shape()[0], in = xs.shape()[1], out = ys.shape()[1];
      const double* xd = xs.data();
      const double* wd = ws.data();
      const double* yg = ys.grad().data();
      if (bs.requires_grad()) {
        double* bg = bs.node()->grad.data();
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < out; ++j) bg[j] += yg[i * out + j];
      }
      if (xs.requires_grad()) {
        double* xg = xs.node()->grad.data();
        for (int i = 0; i < b; ++i)
          for (int p = 0; p < in; ++p) {
            double acc = 0.0;
            const double* grow = yg + i * out;
            const double* wrow = wd + p * out;
            for (int j = 0; j < out; ++j) acc += grow[j] * wrow[j];
            xg[i * in + p] += acc;
          }
      }
      if (ws.requires_grad()) {
        double* wg = ws.node()->grad.data();
        for (int i = 0; i < b; ++i) {
          const double* xrow = xd + i * in;
          const double* grow = yg + i * out;
          for (int p = 0; p < in; ++p) {
            const double xv = xrow[p];
            if (xv == 0.0) continue;
            double* wrow = wg + p * out;
            for (int j = 0; j < out; ++j) wrow[j] += xv * grow[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor adaptive_max_pool(Tape& tape, const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("adaptive_max_pool: input must be [B x C x L]");
  const int b = x.shape()[0], c = x.shape()[1], len = x.shape()[2];
  if (len < 1) throw std::invalid_argument("adaptive_max_pool: empty time axis");
  const bool rg = x.requires_grad();
  Tensor out = make_op_output(tape, {b, c, 1}, rg);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(b) * c);
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < b * c; ++i) {
    const double* row = xd + i * len;
    int best = 0;
    for (int t = 1; t < len; ++t)
      if (row[t] > row[best]) best = t;  // strict '>' keeps the lowest index on ties
    (*argmax)[static_cast<std::size_t>(i)] = best;
    od[i] = row[best];
  }
  check_finite(tape, out, "adaptive_max_pool");
  if (rg) {
    Tensor xs = x, os = out;
    tape.record([xs, os, argmax, len]() {
      double* xg = xs.node()->grad.data();
      const double* og = os.grad().data();
      const int rows = static_cast<int>(argmax->size());
      for (int i = 0; i < rows; ++i) xg[i * len + (*argmax)[static_cast<std::size_t>(i)] ] += og[i];
    });
  }
  return out;
}

Tensor avg_pool(Tape& tape, const Tensor& x, int kernel, int stride) {
  if (x.rank() != 3) throw std::invalid_argument("avg_pool: input must be [B x C x L]");
  const int b = x.shape()[0], c = x.shape()[1], len = x.shape()[2];
  if (len < kernel) throw std::invalid_argument("avg_pool: input shorter than kernel");
  const int out_len = (len - kernel) / stride + 1;
  const bool rg = x.requires_grad();
  Tensor out = make_op_output(tape, {b, c, out_len}, rg);
  const double* xd = x.data();
  double* od = out.data();
  const double inv_k = 1.0 / kernel;
  for (int i = 0; i < b * c; ++i) {
    const double* row = xd + i * len;
    double* orow = od + i * out_len;
    for (int t = 0; t < out_len; ++t) {
      double acc = 0.0;
      for (int kk = 0; kk < kernel; ++kk) acc += row[t * stride + kk];
      orow[t] = acc * inv_k;
    }
  }
  check_finite(tape, out, "avg_pool");
  if (rg) {
    Tensor xs = x, os = out;
    tape.record([xs, os, kernel, stride, len, out_len]() {
      double* xg = xs.node()->grad.data();
      const double* og = os.grad().data();
      const int rows = xs.shape()[0] * xs.shape()[1];
      const double inv_k = 1.0 / kernel;
      for (int i = 0; i < rows; ++i) {
        double* xrow = xg + i * len;
        const double* grow = og + i * out_len;
        for (int t = 0; t < out_len; ++t) {
          const double g = grow[t] * inv_k;
          for (int kk = 0; kk < kernel; ++kk) xrow[t * stride + kk] += g;
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return x;  // identity, nothing recorded
  const int n = x.size();
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  const double scale = 1.0 / (1.0 - p);
  for (int i = 0; i < n; ++i) (*mask)[static_cast<std::size_t>(i)] = rng.uniform() < p ? 0.0 : scale;
  const bool rg = x.requires_grad();
  Tensor out = make_op_output(tape, x.shape(), rg);
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < n; ++i) od[i] = xd[i] * (*mask)[static_cast<std::size_t>(i)];
  check_finite(tape, out, "dropout");
  if (rg) {
    Tensor xs = x, os = out;
    tape.record([xs, os, mask, n]() {
      double* xg = xs.node()->grad.data();
      const double* og = os.grad().data();
      for (int i = 0; i < n; ++i) xg[i] += og[i] * (*mask)[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor squeeze_time(Tape& tape, const Tensor& x) {
  if (x.rank() != 3 || x.shape()[2] != 1)
    throw std::invalid_argument("squeeze_time: input must be [B x C x 1]");
  return reshape(tape, x, {x.shape()[0], x.shape()[1]});
}

Conv1d::Conv1d(int in, int out, int k, int s, int p)
    : in_ch(in), out_ch(out), kernel(k), stride(s), padding(p) {}

void Conv1d::init_params(Rng& rng, bool trainable) {
  const double bound = std::sqrt(1.0 / (in_ch * kernel));
  std::vector<double> w(static_cast<std::size_t>(out_ch) * in_ch * kernel);
  for (double& v : w) v = rng.uniform(-bound, bound);
  weight = Tensor::from_data({out_ch, in_ch, kernel}, std::move(w), trainable);
  bias = Tensor::zeros({out_ch}, trainable);
}

void Dense::init_params(Rng& rng, bool trainable) {
  const double bound = std::sqrt(1.0 / in);
  std::vector<double> w(static_cast<std::size_t>(in) * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  weight = Tensor::from_data({in, out}, std::move(w), trainable);
  bias = Tensor::zeros({out}, trainable);
}

void PReLULayer::init_params(bool trainable, double initial) {
  slope = Tensor::scalar(initial, trainable);
}

GRU::GRU(int in, int hidden, int layers) : in_size(in), hidden_size(hidden), num_layers(layers) {
  if (layers < 1) throw std::invalid_argument("GRU: num_layers must be >= 1");
}

void GRU::init_params(Rng& rng, bool trainable) {
  cells.clear();
  for (int l = 0; l < num_layers; ++l) {
    const int in = l == 0 ? in_size : hidden_size;
    auto init_mat = [&](int rows, int cols) {
      const double bound = std::sqrt(1.0 / rows);
      std::vector<double> w(static_cast<std::size_t>(rows) * cols);
      for (double& v : w) v = rng.uniform(-bound, bound);
      return Tensor::from_data({rows, cols}, std::move(w), trainable);
    };
    CellParams c;
    c.wz = init_mat(in, hidden_size);
    c.uz = init_mat(hidden_size, hidden_size);
    c.bz = Tensor::zeros({hidden_size}, trainable);
    c.wr = init_mat(in, hidden_size);
    c.ur = init_mat(hidden_size, hidden_size);
    c.br = Tensor::zeros({hidden_size}, trainable);
    c.wn = init_mat(in, hidden_size);
    c.un = init_mat(hidden_size, hidden_size);
    c.bn = Tensor::zeros({hidden_size}, trainable);
    cells.push_back(std::move(c));
  }
}

Tensor GRU::step(Tape& tape, int layer, const Tensor& x, const Tensor& h) const {
  const CellParams& c = cells.at(static_cast<std::size_t>(layer));
  Tensor z = sigmoid(tape, add(tape, linear(tape, x, c.wz, c.bz),
                               matmul(tape, h, c.uz)));
  Tensor r = sigmoid(tape, add(tape, linear(tape, x, c.wr, c.br),
                               matmul(tape, h, c.ur)));
  Tensor cand = tanh_op(tape, add(tape, linear(tape, x, c.wn, c.bn),
                                  matmul(tape, mul(tape, r, h), c.un)));
  Tensor one = Tensor::scalar(1.0);
  // h' = (1 - z) . cand + z . h
  return add(tape, mul(tape, sub(tape, one, z), cand), mul(tape, z, h));
}

GRU::Result GRU::forward(Tape& tape, const std::vector<Tensor>& xs,
                         const std::vector<Tensor>* h0) const {
  if (xs.empty()) throw std::invalid_argument("GRU: empty input sequence");
  std::vector<Tensor> h(static_cast<std::size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) {
    if (h0) {
      h[static_cast<std::size_t>(l)] = (*h0)[static_cast<std::size_t>(l)];
    } else {
      h[static_cast<std::size_t>(l)] = Tensor::zeros({1, hidden_size});
    }
  }
  Result res;
  res.outputs.reserve(xs.size());
  for (const Tensor& x_raw : xs) {
    Tensor x = x_raw;
    if (x.rank() == 1) x = reshape(tape, x, {1, x.size()});
    for (int l = 0; l < num_layers; ++l) {
      x = step(tape, l, x, h[static_cast<std::size_t>(l)]);
      h[static_cast<std::size_t>(l)] = x;
    }
    res.outputs.push_back(x);
  }
  res.h_final = h;
  return res;
}

std::vector<Tensor> GRU::parameters() const {
  std::vector<Tensor> ps;
  for (const CellParams& c : cells)
    for (const Tensor& t : {c.wz, c.uz, c.bz, c.wr, c.ur, c.br, c.wn, c.un, c.bn})
      ps.push_back(t);
  return ps;
}

LayerDesc LayerDesc::make_conv(int in, int out, int k, int s, int pad) {
  LayerDesc d;
  d.kind = Kind::conv;
  d.in_ch = in;
  d.out_ch = out;
  d.kernel = k;
  d.stride = s;
  d.padding = pad;
  return d;
}
LayerDesc LayerDesc::make_avg_pool(int k, int s) {
  LayerDesc d;
  d.kind = Kind::avg_pool;
  d.kernel = k;
  d.stride = s;
  return d;
}
LayerDesc LayerDesc::make_activation(std::string name) {
  LayerDesc d;
  d.kind = Kind::activation;
  d.activation = std::move(name);
  return d;
}
LayerDesc LayerDesc::make_dropout(double p) {
  LayerDesc d;
  d.kind = Kind::dropout;
  d.p = p;
  return d;
}
LayerDesc LayerDesc::make_adaptive_max_pool() {
  LayerDesc d;
  d.kind = Kind::adaptive_max_pool;
  return d;
}
LayerDesc LayerDesc::make_linear(int in, int out) {
  LayerDesc d;
  d.kind = Kind::linear;
  d.in_ch = in;
  d.out_ch = out;
  return d;
}
LayerDesc LayerDesc::make_gru(int in, int hidden, int layers) {
  LayerDesc d;
  d.kind = Kind::gru;
  d.in_ch = in;
  d.out_ch = hidden;
  d.num_layers = layers;
  return d;
}

void StackSpec::validate() const {
  int channels = -1;
  int n_adaptive = 0;
  for (const LayerDesc& d : layers) {
    switch (d.kind) {
      case LayerDesc::Kind::conv:
      case LayerDesc::Kind::linear:
      case LayerDesc::Kind::gru:
        if (channels >= 0 && d.in_ch != channels)
          throw std::invalid_argument("stack: adjacent channel counts disagree");
        channels = d.out_ch;
        break;
      case LayerDesc::Kind::adaptive_max_pool:
        ++n_adaptive;
        break;
      default:
        break;  // pooling along time / activation / dropout keep channels
    }
  }
  if (n_adaptive > 1) throw std::invalid_argument("stack: more than one adaptive max pool");
}

StackSpec StackSpec::parse(const std::string& text) {
  StackSpec spec;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind) || kind.empty() || kind[0] == '#') continue;
    if (kind == "conv") {
      int a, b, k, s, p = 0;
      if (!(ls >> a >> b >> k >> s)) throw DataError("stack parse: conv needs in out k s [pad]");
      ls >> p;
      spec.layers.push_back(LayerDesc::make_conv(a, b, k, s, p));
    } else if (kind == "avgpool") {
      int k, s;
      if (!(ls >> k >> s)) throw DataError("stack parse: avgpool needs k s");
      spec.layers.push_back(LayerDesc::make_avg_pool(k, s));
    } else if (kind == "relu" || kind == "prelu") {
      spec.layers.push_back(LayerDesc::make_activation(kind));
    } else if (kind == "dropout") {
      double p;
      if (!(ls >> p)) throw DataError("stack parse: dropout needs p");
      spec.layers.push_back(LayerDesc::make_dropout(p));
    } else if (kind == "adaptivemaxpool") {
      spec.layers.push_back(LayerDesc::make_adaptive_max_pool());
    } else if (kind == "linear") {
      int a, b;
      if (!(ls >> a >> b)) throw DataError("stack parse: linear needs in out");
      spec.layers.push_back(LayerDesc::make_linear(a, b));
    } else if (kind == "gru") {
      int a, h, l;
      if (!(ls >> a >> h >> l)) throw DataError("stack parse: gru needs in hidden layers");
      spec.layers.push_back(LayerDesc::make_gru(a, h, l));
    } else {
      throw DataError("stack parse: unknown layer kind '" + kind + "'");
    }
  }
  spec.validate();
  return spec;
}

std::vector<ReceptiveField> receptive_field_per_layer(const StackSpec& stack,
                                                      double frame_shift_s) {
  std::vector<ReceptiveField> out;
  long long rf = 1, jump = 1;
  for (const LayerDesc& d : stack.layers) {
    if (d.kind == LayerDesc::Kind::adaptive_max_pool) break;
    if (d.kind == LayerDesc::Kind::linear || d.kind == LayerDesc::Kind::gru)
      throw std::invalid_argument("receptive_field: stack must be conv/pool only before the max pool");
    if (d.kind == LayerDesc::Kind::conv || d.kind == LayerDesc::Kind::avg_pool) {
      rf += static_cast<long long>(d.kernel - 1) * jump;
      jump *= d.stride;
      out.push_back({static_cast<int>(rf), static_cast<double>(rf) * frame_shift_s});
    }
  }
  if (out.empty()) out.push_back({1, frame_shift_s});
  return out;
}

ReceptiveField receptive_field(const StackSpec& stack, double frame_shift_s) {
  return receptive_field_per_layer(stack, frame_shift_s).back();
}

}  // namespace emobev
