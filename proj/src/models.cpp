// SPDX-License-Identifier: Apache-2.0
#include "emobev/models.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace emobev {

namespace {

Tensor clone_tensor(const Tensor& t, bool requires_grad) {
  return Tensor::from_data(t.shape(), t.vec(), requires_grad);
}

Conv1d clone_conv(const Conv1d& c, bool trainable) {
  Conv1d out(c.in_ch, c.out_ch, c.kernel, c.stride, c.padding);
  out.weight = clone_tensor(c.weight, trainable);
  out.bias = clone_tensor(c.bias, trainable);
  return out;
}

std::array<Conv1d, 4> er_conv_specs() {
  return {Conv1d(84, 96, 10, 2, 0), Conv1d(96, 96, 5, 2, 0), Conv1d(96, 96, 5, 2, 0),
          Conv1d(96, 128, 3, 2, 0)};
}

std::array<Conv1d, 4> reduced_conv_specs() {
  return {Conv1d(128, 96, 3, 2, 0), Conv1d(96, 96, 3, 2, 0), Conv1d(96, 96, 3, 1, 0),
          Conv1d(96, 128, 3, 1, 0)};
}

/// [1 x 84 x frames] tensor from a feature window.
Tensor window_tensor(const FeatureMatrix& f, int start, int frames) {
  std::vector<double> data(static_cast<std::size_t>(f.dim) * frames);
  for (int d = 0; d < f.dim; ++d)
    for (int t = 0; t < frames; ++t)
      data[static_cast<std::size_t>(d) * frames + t] = f.at(d, start + t);
  return Tensor::from_data({1, f.dim, frames}, std::move(data));
}

/// [B x 84 x L] tensor from equally sized feature windows.
Tensor batch_tensor(const std::vector<const FeatureMatrix*>& ws) {
  const int b = static_cast<int>(ws.size());
  const int dim = ws[0]->dim, len = ws[0]->frames;
  std::vector<double> data(static_cast<std::size_t>(b) * dim * len);
  for (int i = 0; i < b; ++i) {
    if (ws[static_cast<std::size_t>(i)]->frames != len)
      throw std::invalid_argument("batch_tensor: unequal window lengths");
    for (int d = 0; d < dim; ++d)
      for (int t = 0; t < len; ++t)
        data[(static_cast<std::size_t>(i) * dim + d) * len + t] =
            ws[static_cast<std::size_t>(i)]->at(d, t);
  }
  return Tensor::from_data({b, dim, len}, std::move(data));
}

std::vector<std::vector<double>> snapshot_params(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(p.vec());
  return out;
}

void restore_params(std::vector<Tensor> params, const std::vector<std::vector<double>>& snap) {
  // handles share storage with the model, so writing through copies is fine
  for (std::size_t i = 0; i < params.size(); ++i) params[i].vec() = snap[i];
}

}  // namespace

std::uint64_t params_checksum(const std::vector<Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor& p : params) h = fnv1a(p.vec(), h);
  return h;
}

// --- ER -------------------------------------------------------------------

ERModel ERModel::create(std::uint64_t seed) {
  ERModel m;
  m.init_seed = seed;
  m.convs = er_conv_specs();
  Rng rng(seed);
  for (Conv1d& c : m.convs) c.init_params(rng, true);
  m.fc1.init_params(rng, true);
  m.fc2.init_params(rng, true);
  m.fc3.init_params(rng, true);
  return m;
}

Tensor ERModel::conv_map(Tape& tape, const Tensor& x, int upto) const {
  if (upto < 0 || upto > kConvLayers) throw std::invalid_argument("conv_map: layer out of range");
  Tensor h = x;
  for (int i = 0; i < upto; ++i) h = relu(tape, convs[static_cast<std::size_t>(i)].forward(tape, h));
  return h;
}

Tensor ERModel::embed(Tape& tape, const Tensor& x) const {
  return squeeze_time(tape, adaptive_max_pool(tape, conv_map(tape, x, kConvLayers)));
}

Tensor ERModel::forward(Tape& tape, const Tensor& x) const {
  Tensor h = embed(tape, x);
  h = relu(tape, fc1.forward(tape, h));
  h = relu(tape, fc2.forward(tape, h));
  return fc3.forward(tape, h);
}

std::vector<Tensor> ERModel::parameters() const {
  std::vector<Tensor> ps;
  for (const Conv1d& c : convs) {
    ps.push_back(c.weight);
    ps.push_back(c.bias);
  }
  for (const Dense* d : {&fc1, &fc2, &fc3}) {
    ps.push_back(d->weight);
    ps.push_back(d->bias);
  }
  return ps;
}

// --- EC -------------------------------------------------------------------

ECModel ECModel::create(const ERModel& er, int emotion, std::uint64_t seed) {
  if (emotion < 0 || emotion >= kNumEmotions)
    throw std::invalid_argument("ECModel: emotion index out of range");
  ECModel m;
  m.emotion = emotion;
  m.init_seed = seed;
  for (int i = 0; i < 4; ++i)
    m.convs[static_cast<std::size_t>(i)] = clone_conv(er.convs[static_cast<std::size_t>(i)], false);
  m.fc1.weight = clone_tensor(er.fc1.weight, false);
  m.fc1.bias = clone_tensor(er.fc1.bias, false);
  m.fc2.weight = clone_tensor(er.fc2.weight, false);
  m.fc2.bias = clone_tensor(er.fc2.bias, false);
  Rng rng(seed);
  m.g1.init_params(rng, true);
  m.g2.init_params(rng, true);
  m.g3.init_params(rng, true);
  m.act1.init_params(true);
  m.act2.init_params(true);
  return m;
}

Tensor ECModel::prefix_embed(Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (const Conv1d& c : convs) h = relu(tape, c.forward(tape, h));
  h = squeeze_time(tape, adaptive_max_pool(tape, h));
  h = relu(tape, fc1.forward(tape, h));
  return relu(tape, fc2.forward(tape, h));
}

Tensor ECModel::head(Tape& tape, const Tensor& prefix) const {
  Tensor h = act1.forward(tape, g1.forward(tape, prefix));
  h = act2.forward(tape, g2.forward(tape, h));
  return g3.forward(tape, h);
}

Tensor ECModel::forward(Tape& tape, const Tensor& x) const {
  return head(tape, prefix_embed(tape, x));
}

std::vector<Tensor> ECModel::trainable_parameters() const {
  return {g1.weight, g1.bias, g2.weight, g2.bias, g3.weight, g3.bias, act1.slope, act2.slope};
}

std::vector<Tensor> ECModel::frozen_parameters() const {
  std::vector<Tensor> ps;
  for (const Conv1d& c : convs) {
    ps.push_back(c.weight);
    ps.push_back(c.bias);
  }
  for (const Dense* d : {&fc1, &fc2}) {
    ps.push_back(d->weight);
    ps.push_back(d->bias);
  }
  return ps;
}

std::vector<Tensor> ECModel::all_parameters() const {
  std::vector<Tensor> ps = frozen_parameters();
  for (const Tensor& t : trainable_parameters()) ps.push_back(t);
  return ps;
}

// --- B-BP context model ------------------------------------------------------

BBPContextModel BBPContextModel::create(std::uint64_t seed) {
  BBPContextModel m;
  m.init_seed = seed;
  Rng rng(seed);
  m.gru.init_params(rng, true);
  m.h1.init_params(rng, true);
  m.h2.init_params(rng, true);
  return m;
}

Tensor BBPContextModel::forward(Tape& tape,
                                const std::vector<std::array<int, kNumEmotions>>& bbp) const {
  if (bbp.empty()) throw DataError("BBPContextModel: empty label sequence");
  std::vector<Tensor> xs;
  xs.reserve(bbp.size());
  for (const auto& e : bbp) {
    std::vector<double> v(kNumEmotions);
    for (int j = 0; j < kNumEmotions; ++j) v[static_cast<std::size_t>(j)] = e[static_cast<std::size_t>(j)];
    xs.push_back(Tensor::from_data({1, kNumEmotions}, std::move(v)));
  }
  auto res = gru.forward(tape, xs);
  Tensor h = relu(tape, h1.forward(tape, res.outputs.back()));
  return h2.forward(tape, h);
}

std::vector<Tensor> BBPContextModel::parameters() const {
  std::vector<Tensor> ps = gru.parameters();
  for (const Dense* d : {&h1, &h2}) {
    ps.push_back(d->weight);
    ps.push_back(d->bias);
  }
  return ps;
}

// --- E-BP context model ------------------------------------------------------

EBPContextModel EBPContextModel::create(const ERModel* er, int frozen_layers, std::uint64_t seed) {
  if (frozen_layers < 0 || frozen_layers > 4)
    throw std::invalid_argument("EBPContextModel: frozen_layers must be 0..4");
  if (frozen_layers > 0 && er == nullptr)
    throw std::invalid_argument("EBPContextModel: a pretrained model is required when l > 0");
  EBPContextModel m;
  m.frozen_layers = frozen_layers;
  m.init_seed = seed;
  Rng rng(seed);
  m.convs = er_conv_specs();
  for (int i = 0; i < 4; ++i) {
    const bool frozen = i < frozen_layers;
    if (er != nullptr) {
      // the whole stack starts from the pretrained weights; only layers past
      // l keep training
      m.convs[static_cast<std::size_t>(i)] = clone_conv(er->convs[static_cast<std::size_t>(i)], !frozen);
    } else {
      m.convs[static_cast<std::size_t>(i)].init_params(rng, true);  // from-scratch baseline
    }
  }
  m.gru.init_params(rng, true);
  m.h1.init_params(rng, true);
  m.h2.init_params(rng, true);
  return m;
}

Tensor EBPContextModel::embed_segment(Tape& tape, const Tensor& segment) const {
  Tensor h = segment;
  for (const Conv1d& c : convs) h = relu(tape, c.forward(tape, h));
  return squeeze_time(tape, adaptive_max_pool(tape, h));
}

Tensor EBPContextModel::embed_from_map(Tape& tape, const Tensor& map) const {
  Tensor h = map;
  for (int i = frozen_layers; i < 4; ++i)
    h = relu(tape, convs[static_cast<std::size_t>(i)].forward(tape, h));
  return squeeze_time(tape, adaptive_max_pool(tape, h));
}

Tensor EBPContextModel::forward_from_embeds(Tape& tape, const std::vector<Tensor>& embeds) const {
  if (embeds.empty()) throw DataError("EBPContextModel: empty embedding sequence");
  auto res = gru.forward(tape, embeds);
  Tensor h = relu(tape, h1.forward(tape, res.outputs.back()));
  return h2.forward(tape, h);
}

std::vector<Tensor> EBPContextModel::trainable_parameters() const {
  std::vector<Tensor> ps;
  for (int i = frozen_layers; i < 4; ++i) {
    ps.push_back(convs[static_cast<std::size_t>(i)].weight);
    ps.push_back(convs[static_cast<std::size_t>(i)].bias);
  }
  for (const Tensor& t : gru.parameters()) ps.push_back(t);
  for (const Dense* d : {&h1, &h2}) {
    ps.push_back(d->weight);
    ps.push_back(d->bias);
  }
  return ps;
}

std::vector<Tensor> EBPContextModel::frozen_parameters() const {
  std::vector<Tensor> ps;
  for (int i = 0; i < frozen_layers; ++i) {
    ps.push_back(convs[static_cast<std::size_t>(i)].weight);
    ps.push_back(convs[static_cast<std::size_t>(i)].bias);
  }
  return ps;
}

std::vector<Tensor> EBPContextModel::all_parameters() const {
  std::vector<Tensor> ps;
  for (const Conv1d& c : convs) {
    ps.push_back(c.weight);
    ps.push_back(c.bias);
  }
  for (const Tensor& t : gru.parameters()) ps.push_back(t);
  for (const Dense* d : {&h1, &h2}) {
    ps.push_back(d->weight);
    ps.push_back(d->bias);
  }
  return ps;
}

// --- reduced-context model ----------------------------------------------------

ReducedContextModel ReducedContextModel::create(const ERModel& er, int n_avg_pools,
                                                PoolPlacement placement, std::uint64_t seed) {
  if (n_avg_pools < 0 || n_avg_pools > 4)
    throw std::invalid_argument("ReducedContextModel: n_avg_pools must be 0..4");
  ReducedContextModel m;
  m.n_avg_pools = n_avg_pools;
  m.placement = placement;
  m.init_seed = seed;
  for (int i = 0; i < 4; ++i)
    m.frozen_convs[static_cast<std::size_t>(i)] = clone_conv(er.convs[static_cast<std::size_t>(i)], false);
  m.tconvs = reduced_conv_specs();
  Rng rng(seed);
  for (Conv1d& c : m.tconvs) c.init_params(rng, true);
  m.d1.init_params(rng, true);
  m.d2.init_params(rng, true);
  m.d3.init_params(rng, true);
  return m;
}

Tensor ReducedContextModel::prefix_map(Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (const Conv1d& c : frozen_convs) h = relu(tape, c.forward(tape, h));
  return h;
}

namespace {
int pools_after_conv(PoolPlacement placement, int n_pools, int conv_idx) {
  if (placement == PoolPlacement::front) return conv_idx == 0 ? n_pools : 0;
  return conv_idx < n_pools ? 1 : 0;
}
}  // namespace

Tensor ReducedContextModel::prepool_map(Tape& tape, const Tensor& map, bool train, Rng* rng) const {
  Tensor h = map;
  for (int i = 0; i < 4; ++i) {
    h = tconvs[static_cast<std::size_t>(i)].forward(tape, h);
    for (int p = 0; p < pools_after_conv(placement, n_avg_pools, i); ++p)
      h = avg_pool(tape, h, 2, 2);
    h = relu(tape, h);
    if (train) {
      if (!rng) throw std::invalid_argument("ReducedContextModel: train mode needs an rng");
      h = dropout(tape, h, dropout_p[static_cast<std::size_t>(i)], true, *rng);
    }
  }
  return h;
}

Tensor ReducedContextModel::head_from_pooled(Tape& tape, const Tensor& pooled) const {
  Tensor h = relu(tape, d1.forward(tape, pooled));
  h = relu(tape, d2.forward(tape, h));
  return d3.forward(tape, h);
}

Tensor ReducedContextModel::forward_from_prefix(Tape& tape, const Tensor& map, bool train,
                                                Rng* rng) const {
  Tensor h = prepool_map(tape, map, train, rng);
  h = squeeze_time(tape, adaptive_max_pool(tape, h));
  return head_from_pooled(tape, h);
}

long long ReducedContextModel::trainable_param_count() const {
  long long n = 0;
  for (const Tensor& p : trainable_parameters()) n += p.size();
  return n;
}

std::vector<Tensor> ReducedContextModel::trainable_parameters() const {
  std::vector<Tensor> ps;
  for (const Conv1d& c : tconvs) {
    ps.push_back(c.weight);
    ps.push_back(c.bias);
  }
  for (const Dense* d : {&d1, &d2, &d3}) {
    ps.push_back(d->weight);
    ps.push_back(d->bias);
  }
  return ps;
}

std::vector<Tensor> ReducedContextModel::frozen_parameters() const {
  std::vector<Tensor> ps;
  for (const Conv1d& c : frozen_convs) {
    ps.push_back(c.weight);
    ps.push_back(c.bias);
  }
  return ps;
}

std::vector<Tensor> ReducedContextModel::all_parameters() const {
  std::vector<Tensor> ps = frozen_parameters();
  for (const Tensor& t : trainable_parameters()) ps.push_back(t);
  return ps;
}

StackSpec ReducedContextModel::full_stack_spec() const {
  StackSpec s;
  for (const Conv1d& c : frozen_convs) {
    s.layers.push_back(LayerDesc::make_conv(c.in_ch, c.out_ch, c.kernel, c.stride, c.padding));
    s.layers.push_back(LayerDesc::make_activation("relu"));
  }
  for (int i = 0; i < 4; ++i) {
    const Conv1d& c = tconvs[static_cast<std::size_t>(i)];
    s.layers.push_back(LayerDesc::make_conv(c.in_ch, c.out_ch, c.kernel, c.stride, c.padding));
    for (int p = 0; p < pools_after_conv(placement, n_avg_pools, i); ++p)
      s.layers.push_back(LayerDesc::make_avg_pool(2, 2));
    s.layers.push_back(LayerDesc::make_activation("relu"));
    s.layers.push_back(LayerDesc::make_dropout(dropout_p[static_cast<std::size_t>(i)]));
  }
  s.layers.push_back(LayerDesc::make_adaptive_max_pool());
  return s;
}

int ReducedContextModel::min_input_frames() const {
  return receptive_field(full_stack_spec(), 0.010).frames;
}

// --- checkpoints ---------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'E', 'B', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      const std::vector<Tensor>& params) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  le::append<std::uint32_t>(out, kCheckpointVersion);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(meta.kind.size()));
  out += meta.kind;
  le::append<std::uint64_t>(out, meta.init_seed);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(meta.arch.size()));
  for (std::int64_t a : meta.arch) le::append<std::int64_t>(out, a);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(meta.config_snapshot.size()));
  out += meta.config_snapshot;
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(meta.history.size()));
  for (const TrainHistoryRow& r : meta.history) {
    le::append<std::int32_t>(out, r.epoch);
    le::append<double>(out, r.lr);
    le::append<double>(out, r.train_loss);
    le::append<double>(out, r.valid_loss);
    le::append<double>(out, r.valid_metric);
  }
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Tensor& p : params) {
    le::append<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape().size()));
    for (int d : p.shape()) le::append<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p.vec()) le::append<double>(out, v);
  }
  le::append<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f << out;
}

CheckpointMeta read_checkpoint(const std::string& path, const std::string& expected_kind,
                               std::vector<Tensor>& params_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string raw = ss.str();
  if (raw.size() < 16 || raw.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw DataError("checkpoint: bad magic: " + path);
  // integrity first: checksum over everything before the trailing hash
  std::size_t tail = raw.size() - 8;
  const std::uint64_t stored = [&] {
    std::size_t pos = tail;
    return le::read<std::uint64_t>(raw, pos);
  }();
  if (fnv1a(raw.data(), tail) != stored)
    throw DataError("checkpoint: checksum mismatch (corrupt or truncated): " + path);

  std::size_t pos = 4;
  const auto version = le::read<std::uint32_t>(raw, pos);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  CheckpointMeta meta;
  const auto kind_len = le::read<std::uint32_t>(raw, pos);
  meta.kind = raw.substr(pos, kind_len);
  pos += kind_len;
  if (!expected_kind.empty() && meta.kind != expected_kind)
    throw DataError("checkpoint: kind is '" + meta.kind + "', expected '" + expected_kind + "'");
  meta.init_seed = le::read<std::uint64_t>(raw, pos);
  const auto n_arch = le::read<std::uint32_t>(raw, pos);
  for (std::uint32_t i = 0; i < n_arch; ++i) meta.arch.push_back(le::read<std::int64_t>(raw, pos));
  const auto cfg_len = le::read<std::uint32_t>(raw, pos);
  meta.config_snapshot = raw.substr(pos, cfg_len);
  pos += cfg_len;
  const auto n_hist = le::read<std::uint32_t>(raw, pos);
  for (std::uint32_t i = 0; i < n_hist; ++i) {
    TrainHistoryRow r;
    r.epoch = le::read<std::int32_t>(raw, pos);
    r.lr = le::read<double>(raw, pos);
    r.train_loss = le::read<double>(raw, pos);
    r.valid_loss = le::read<double>(raw, pos);
    r.valid_metric = le::read<double>(raw, pos);
    meta.history.push_back(r);
  }
  const auto n_params = le::read<std::uint32_t>(raw, pos);
  params_out.clear();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const auto rank = le::read<std::uint32_t>(raw, pos);
    std::vector<int> shape;
    int count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(le::read<std::uint32_t>(raw, pos)));
      count *= shape.back();
    }
    std::vector<double> data(static_cast<std::size_t>(count));
    for (double& v : data) v = le::read<double>(raw, pos);
    params_out.push_back(Tensor::from_data(std::move(shape), std::move(data)));
  }
  return meta;
}

namespace {

void fill_params(std::vector<Tensor> dst, const std::vector<Tensor>& src,
                 const std::string& what) {
  if (dst.size() != src.size())
    throw DataError("checkpoint: " + what + ": parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape())
      throw DataError("checkpoint: " + what + ": parameter shape mismatch at index " +
                      std::to_string(i));
    dst[i].vec() = src[i].vec();
  }
}

}  // namespace

void save_er(const std::string& path, const ERModel& m, const CheckpointMeta& meta_in) {
  CheckpointMeta meta = meta_in;
  meta.kind = "er";
  meta.init_seed = m.init_seed;
  write_checkpoint(path, meta, m.parameters());
}

ERModel load_er(const std::string& path, CheckpointMeta* meta_out) {
  std::vector<Tensor> blobs;
  CheckpointMeta meta = read_checkpoint(path, "er", blobs);
  ERModel m = ERModel::create(meta.init_seed);
  fill_params(m.parameters(), blobs, "er");
  if (meta_out) *meta_out = meta;
  return m;
}

void save_ec(const std::string& path, const ECModel& m, const CheckpointMeta& meta_in) {
  CheckpointMeta meta = meta_in;
  meta.kind = "ec";
  meta.init_seed = m.init_seed;
  meta.arch = {m.emotion};
  write_checkpoint(path, meta, m.all_parameters());
}

ECModel load_ec(const std::string& path, CheckpointMeta* meta_out) {
  std::vector<Tensor> blobs;
  CheckpointMeta meta = read_checkpoint(path, "ec", blobs);
  if (meta.arch.size() != 1) throw DataError("checkpoint: ec: missing emotion index");
  ERModel shell = ERModel::create(0);
  ECModel m = ECModel::create(shell, static_cast<int>(meta.arch[0]), meta.init_seed);
  fill_params(m.all_parameters(), blobs, "ec");
  if (meta_out) *meta_out = meta;
  return m;
}

void save_bbp(const std::string& path, const BBPContextModel& m, const CheckpointMeta& meta_in) {
  CheckpointMeta meta = meta_in;
  meta.kind = "bbp";
  meta.init_seed = m.init_seed;
  write_checkpoint(path, meta, m.parameters());
}

BBPContextModel load_bbp(const std::string& path, CheckpointMeta* meta_out) {
  std::vector<Tensor> blobs;
  CheckpointMeta meta = read_checkpoint(path, "bbp", blobs);
  BBPContextModel m = BBPContextModel::create(meta.init_seed);
  fill_params(m.parameters(), blobs, "bbp");
  if (meta_out) *meta_out = meta;
  return m;
}

void save_ebp(const std::string& path, const EBPContextModel& m, const CheckpointMeta& meta_in) {
  CheckpointMeta meta = meta_in;
  meta.kind = "ebp";
  meta.init_seed = m.init_seed;
  meta.arch = {m.frozen_layers};
  write_checkpoint(path, meta, m.all_parameters());
}

EBPContextModel load_ebp(const std::string& path, CheckpointMeta* meta_out) {
  std::vector<Tensor> blobs;
  CheckpointMeta meta = read_checkpoint(path, "ebp", blobs);
  if (meta.arch.size() != 1) throw DataError("checkpoint: ebp: missing frozen layer count");
  const int l = static_cast<int>(meta.arch[0]);
  ERModel shell = ERModel::create(0);
  EBPContextModel m = EBPContextModel::create(l > 0 ? &shell : nullptr, l, meta.init_seed);
  fill_params(m.all_parameters(), blobs, "ebp");
  if (meta_out) *meta_out = meta;
  return m;
}

void save_reduced(const std::string& path, const ReducedContextModel& m,
                  const CheckpointMeta& meta_in) {
  CheckpointMeta meta = meta_in;
  meta.kind = "reduced";
  meta.init_seed = m.init_seed;
  meta.arch = {m.n_avg_pools, m.placement == PoolPlacement::front ? 0 : 1};
  write_checkpoint(path, meta, m.all_parameters());
}

ReducedContextModel load_reduced(const std::string& path, CheckpointMeta* meta_out) {
  std::vector<Tensor> blobs;
  CheckpointMeta meta = read_checkpoint(path, "reduced", blobs);
  if (meta.arch.size() != 2) throw DataError("checkpoint: reduced: missing architecture fields");
  ERModel shell = ERModel::create(0);
  ReducedContextModel m = ReducedContextModel::create(
      shell, static_cast<int>(meta.arch[0]),
      meta.arch[1] == 0 ? PoolPlacement::front : PoolPlacement::interleaved, meta.init_seed);
  fill_params(m.all_parameters(), blobs, "reduced");
  if (meta_out) *meta_out = meta;
  return m;
}

// --- ER training -----------------------------------------------------------------

namespace {

double er_validation_mse(const ERModel& model, const std::vector<LoadedUtterance>& valid) {
  if (valid.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const LoadedUtterance& u : valid) {
    const auto tiles = segment_utterance(u.features, kSegmentFrames, SegmentMode::tile_all, nullptr);
    std::vector<const FeatureMatrix*> ptrs;
    for (const auto& t : tiles) ptrs.push_back(&t);
    Tape tape;
    tape.recording = false;
    Tensor pred = model.forward(tape, batch_tensor(ptrs));
    // utterance prediction = mean over its tiles
    double err = 0.0;
    for (int e = 0; e < kNumEmotions; ++e) {
      double mean = 0.0;
      for (int r = 0; r < pred.shape()[0]; ++r) mean += pred.data()[r * kNumEmotions + e];
      mean /= pred.shape()[0];
      const double d = mean - u.rec.ratings[static_cast<std::size_t>(e)];
      err += d * d;
    }
    total += err / kNumEmotions;
  }
  return total / static_cast<double>(valid.size());
}

}  // namespace

ERTrainResult train_er(const std::vector<LoadedUtterance>& train,
                       const std::vector<LoadedUtterance>& valid, const TrainConfig& cfg) {
  if (train.empty()) throw DataError("train_er: empty training set");
  ERTrainResult res;
  res.model = ERModel::create(cfg.seed);
  auto params = res.model.parameters();
  Adam opt(params);
  Rng root(cfg.seed);
  Tape tape;

  auto best = snapshot_params(params);
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng = root.fork(static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    double loss_sum = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<FeatureMatrix> segs;
      std::vector<double> targets;
      for (std::size_t i = start; i < end; ++i) {
        const LoadedUtterance& u = train[static_cast<std::size_t>(order[i])];
        auto seg = segment_utterance(u.features, kSegmentFrames, SegmentMode::random_one, &erng);
        segs.push_back(std::move(seg[0]));
        for (double r : u.rec.ratings) targets.push_back(r);
      }
      std::vector<const FeatureMatrix*> ptrs;
      for (const auto& s : segs) ptrs.push_back(&s);
      tape.clear();
      Tensor pred = res.model.forward(tape, batch_tensor(ptrs));
      Tensor y = Tensor::from_data({static_cast<int>(segs.size()), kNumEmotions}, std::move(targets));
      Tensor loss = mse_loss(tape, pred, y);
      if (!std::isfinite(loss.item())) throw NumericalError("train_er: loss diverged");
      opt.zero_grad();
      tape.backward(loss);
      opt.step(cfg.lr);
      loss_sum += loss.item();
      ++n_batches;
    }
    const double train_loss = loss_sum / std::max(1, n_batches);
    double valid_mse = er_validation_mse(res.model, valid);
    if (!std::isfinite(valid_mse)) valid_mse = train_loss;  // no validation set
    res.history.push_back({epoch, cfg.lr, train_loss, valid_mse, valid_mse});
    if (cfg.verbose)
      std::fprintf(stderr, "[er] epoch %d train %.5f valid %.5f\n", epoch, train_loss, valid_mse);
    if (valid_mse < best_valid) {
      best_valid = valid_mse;
      best = snapshot_params(params);
      res.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  restore_params(params, best);
  res.best_valid_mse = best_valid;
  return res;
}

// --- EC training -------------------------------------------------------------------

namespace {

// embeddings of every tile of every utterance through the frozen prefix
std::vector<std::vector<std::vector<double>>> ec_tile_embeds(
    const ECModel& ec, const std::vector<LoadedUtterance>& data) {
  std::vector<std::vector<std::vector<double>>> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto tiles = segment_utterance(data[i].features, kSegmentFrames, SegmentMode::tile_all, nullptr);
    std::vector<const FeatureMatrix*> ptrs;
    for (const auto& t : tiles) ptrs.push_back(&t);
    Tape tape;
    tape.recording = false;
    Tensor e = ec.prefix_embed(tape, batch_tensor(ptrs));
    for (int r = 0; r < e.shape()[0]; ++r)
      out[i].emplace_back(e.data() + r * 128, e.data() + (r + 1) * 128);
  }
  return out;
}

int majority_vote(const std::vector<int>& bits) {
  int ones = 0;
  for (int b : bits) ones += b;
  return 2 * ones >= static_cast<int>(bits.size()) ? 1 : 0;  // ties predict 1
}

}  // namespace

ECTrainResult train_ec(const ERModel& er, int emotion, const std::vector<LoadedUtterance>& train,
                       const std::vector<LoadedUtterance>& valid, const TrainConfig& cfg) {
  if (train.empty()) throw DataError("train_ec: empty training set");
  ECTrainResult res;
  res.model = ECModel::create(er, emotion, cfg.seed);
  auto params = res.model.trainable_parameters();
  Adam opt(params);
  Rng root(cfg.seed);
  Tape tape;

  const auto train_embeds = ec_tile_embeds(res.model, train);
  const auto valid_embeds = ec_tile_embeds(res.model, valid);
  std::vector<int> labels(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    labels[i] = train[i].rec.ratings[static_cast<std::size_t>(emotion)] > 0.0 ? 1 : 0;
  std::vector<int> valid_labels(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i)
    valid_labels[i] = valid[i].rec.ratings[static_cast<std::size_t>(emotion)] > 0.0 ? 1 : 0;

  auto head_logits = [&](const std::vector<std::vector<double>>& embeds, Tape& t) {
    std::vector<double> flat;
    flat.reserve(embeds.size() * 128);
    for (const auto& e : embeds) flat.insert(flat.end(), e.begin(), e.end());
    Tensor x = Tensor::from_data({static_cast<int>(embeds.size()), 128}, std::move(flat));
    return res.model.head(t, x);
  };

  auto evaluate = [&](double* wa_out, double* loss_out) {
    // majority vote per utterance; WA on the utterance level
    ConfusionCounts counts;
    double loss_sum = 0.0;
    int loss_n = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
      Tape et;
      et.recording = false;
      Tensor logits = head_logits(valid_embeds[i], et);
      std::vector<int> bits;
      for (int r = 0; r < logits.shape()[0]; ++r)
        bits.push_back(logits.data()[2 * r + 1] >= logits.data()[2 * r] ? 1 : 0);
      const int pred = majority_vote(bits);
      const int truth = valid_labels[i];
      if (truth == 1 && pred == 1) ++counts.tp;
      if (truth == 1 && pred == 0) ++counts.fn;
      if (truth == 0 && pred == 0) ++counts.tn;
      if (truth == 0 && pred == 1) ++counts.fp;
      Tape lt;
      lt.recording = false;
      Tensor l = cross_entropy_2class(lt, logits, std::vector<int>(bits.size(), truth));
      loss_sum += l.item();
      ++loss_n;
    }
    *loss_out = loss_n ? loss_sum / loss_n : 0.0;
    *wa_out = (counts.positives() > 0 && counts.negatives() > 0) ? weighted_accuracy(counts)
                                                                 : plain_accuracy(counts);
  };

  auto best = snapshot_params(params);
  double best_wa = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng = root.fork(static_cast<std::uint64_t>(epoch));
    const auto batches = balance_batches(labels, cfg.batch_size, erng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      std::vector<std::vector<double>> embeds;
      std::vector<int> ys;
      for (int idx : batch) {
        const auto& tiles = train_embeds[static_cast<std::size_t>(idx)];
        embeds.push_back(tiles[erng.uniform_int(tiles.size())]);
        ys.push_back(labels[static_cast<std::size_t>(idx)]);
      }
      tape.clear();
      Tensor logits = head_logits(embeds, tape);
      Tensor loss = cross_entropy_2class(tape, logits, ys);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(cfg.lr);
      loss_sum += loss.item();
    }
    double wa = 0.0, vloss = 0.0;
    if (!valid.empty()) evaluate(&wa, &vloss);
    res.history.push_back({epoch, cfg.lr, loss_sum / std::max<std::size_t>(1, batches.size()),
                           vloss, wa});
    if (cfg.verbose)
      std::fprintf(stderr, "[ec %d] epoch %d train %.4f valid %.4f wa %.3f\n", emotion, epoch,
                   res.history.back().train_loss, vloss, wa);
    if (wa > best_wa) {
      best_wa = wa;
      best = snapshot_params(params);
      res.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  restore_params(params, best);
  res.best_valid_wa = best_wa;
  return res;
}

int predict_emotion_binary(const ECModel& ec, const FeatureMatrix& features) {
  const auto tiles = segment_utterance(features, kSegmentFrames, SegmentMode::tile_all, nullptr);
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& t : tiles) ptrs.push_back(&t);
  Tape tape;
  tape.recording = false;
  Tensor logits = ec.forward(tape, batch_tensor(ptrs));
  std::vector<int> bits;
  for (int r = 0; r < logits.shape()[0]; ++r)
    bits.push_back(logits.data()[2 * r + 1] >= logits.data()[2 * r] ? 1 : 0);
  return majority_vote(bits);
}

std::vector<std::array<int, kNumEmotions>> extract_bbp(const std::vector<ECModel>& ecs,
                                                       const FeatureMatrix& session_features) {
  if (ecs.size() != kNumEmotions) throw std::invalid_argument("extract_bbp: need 6 classifiers");
  const int n_windows = session_features.frames / kSegmentFrames;
  if (n_windows < 1) throw DataError("extract_bbp: session shorter than one 1 s window");
  // all classifiers share the pretrained prefix, so embed each window once
  std::vector<FeatureMatrix> windows;
  for (int wdw = 0; wdw < n_windows; ++wdw) {
    FeatureMatrix m(session_features.dim, kSegmentFrames);
    for (int d = 0; d < session_features.dim; ++d)
      for (int t = 0; t < kSegmentFrames; ++t) m.at(d, t) = session_features.at(d, wdw * kSegmentFrames + t);
    windows.push_back(std::move(m));
  }
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  Tape tape;
  tape.recording = false;
  Tensor prefix = ecs[0].prefix_embed(tape, batch_tensor(ptrs));
  std::vector<std::array<int, kNumEmotions>> out(static_cast<std::size_t>(n_windows));
  for (int e = 0; e < kNumEmotions; ++e) {
    Tensor logits = ecs[static_cast<std::size_t>(e)].head(tape, prefix);
    for (int wdw = 0; wdw < n_windows; ++wdw)
      out[static_cast<std::size_t>(wdw)][static_cast<std::size_t>(e)] =
          logits.data()[2 * wdw + 1] >= logits.data()[2 * wdw] ? 1 : 0;
  }
  return out;
}

Tensor extract_ebp_map(Tape& tape, const ERModel& er, int l, const Tensor& segment) {
  if (l < 1 || l > 4) throw std::invalid_argument("extract_ebp_map: l must be 1..4");
  return er.conv_map(tape, segment, l);
}

Tensor extract_ebp_pooled(Tape& tape, const ERModel& er, const Tensor& segment) {
  return er.embed(tape, segment);
}

// --- behavior experiments -------------------------------------------------------

namespace {

struct SessionPrimitives {
  std::vector<std::vector<std::array<int, kNumEmotions>>> bbp;
  std::vector<std::vector<Tensor>> embeds;   // ebp l=4: [1 x 128] per window
  std::vector<Tensor> prefix_maps;           // reduced: [1 x 128 x M]
};

std::vector<Tensor> session_windows(const FeatureMatrix& f) {
  const int n = f.frames / kSegmentFrames;
  if (n < 1) throw DataError("behavior training: session shorter than one 1 s window");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int w = 0; w < n; ++w) out.push_back(window_tensor(f, w * kSegmentFrames, kSegmentFrames));
  return out;
}

SessionPrimitives build_primitives(BehaviorModelKind kind,
                                   const std::vector<LoadedSession>& sessions, const ERModel* er,
                                   const std::vector<ECModel>* ecs,
                                   const BehaviorTrainConfig& cfg) {
  SessionPrimitives prims;
  switch (kind) {
    case BehaviorModelKind::bbp: {
      if (!ecs) throw std::invalid_argument("bbp experiment needs the six classifiers");
      for (const LoadedSession& s : sessions) prims.bbp.push_back(extract_bbp(*ecs, s.features));
      break;
    }
    case BehaviorModelKind::ebp: {
      if (cfg.ebp_layer == 4) {
        if (!er) throw std::invalid_argument("ebp experiment needs the pretrained model");
        for (const LoadedSession& s : sessions) {
          std::vector<Tensor> embeds;
          Tape tape;
          tape.recording = false;
          for (Tensor& w : session_windows(s.features))
            embeds.push_back(extract_ebp_pooled(tape, *er, w));
          prims.embeds.push_back(std::move(embeds));
        }
      }
      // l < 4 keeps the conv path trainable, so windows are rebuilt per step
      break;
    }
    case BehaviorModelKind::reduced: {
      if (!er) throw std::invalid_argument("reduced experiment needs the pretrained model");
      // the frozen prefix is fixed, so session maps are computed once; the
      // minimum length covers the largest receptive field in the sweep
      ReducedContextModel probe = ReducedContextModel::create(*er, cfg.n_avg_pools, cfg.placement, 0);
      const int min_frames = probe.min_input_frames();
      for (const LoadedSession& s : sessions) {
        FeatureMatrix padded = s.features;
        if (padded.frames < min_frames) {
          std::fprintf(stderr,
                       "[reduced] warning: session %s (%d frames) shorter than the receptive "
                       "field (%d); zero-padding\n",
                       s.rec.id.c_str(), padded.frames, min_frames);
          FeatureMatrix grown(padded.dim, min_frames);
          for (int d = 0; d < padded.dim; ++d)
            for (int t = 0; t < padded.frames; ++t) grown.at(d, t) = padded.at(d, t);
          padded = std::move(grown);
        }
        Tape tape;
        tape.recording = false;
        prims.prefix_maps.push_back(probe.prefix_map(tape, window_tensor(padded, 0, padded.frames)));
      }
      break;
    }
  }
  return prims;
}

MaskedBehaviorTarget target_of(const SessionRecord& rec) {
  MaskedBehaviorTarget t;
  for (int b = 0; b < kNumBehaviors; ++b) {
    t.mask[static_cast<std::size_t>(b)] = rec.mask[static_cast<std::size_t>(b)];
    t.labels[static_cast<std::size_t>(b)] =
        static_cast<double>(rec.binary_labels[static_cast<std::size_t>(b)]);
  }
  return t;
}

struct FoldSets {
  std::vector<int> train, valid, test;
};

FoldSets resolve_fold(const std::vector<LoadedSession>& sessions, const Fold& fold) {
  FoldSets sets;
  auto contains = [](const std::vector<std::string>& v, const std::string& c) {
    return std::binary_search(v.begin(), v.end(), c);
  };
  for (int i = 0; i < static_cast<int>(sessions.size()); ++i) {
    const std::string& c = sessions[static_cast<std::size_t>(i)].rec.couple_id;
    if (contains(fold.test_couples, c))
      sets.test.push_back(i);
    else if (contains(fold.valid_couples, c))
      sets.valid.push_back(i);
    else if (contains(fold.train_couples, c))
      sets.train.push_back(i);
  }
  if (sets.train.empty() || sets.test.empty())
    throw DataError("behavior training: fold with empty train or test set");
  return sets;
}

class BehaviorNet {
 public:
  BehaviorNet(BehaviorModelKind kind, const ERModel* er, const std::vector<ECModel>* ecs,
              const BehaviorTrainConfig& cfg, std::uint64_t seed)
      : kind_(kind) {
    switch (kind) {
      case BehaviorModelKind::bbp:
        bbp_ = BBPContextModel::create(seed);
        break;
      case BehaviorModelKind::ebp:
        ebp_ = EBPContextModel::create(cfg.ebp_layer > 0 ? er : nullptr, cfg.ebp_layer, seed);
        break;
      case BehaviorModelKind::reduced:
        reduced_ = ReducedContextModel::create(*er, cfg.n_avg_pools, cfg.placement, seed);
        break;
    }
    (void)ecs;
  }

  Tensor forward(Tape& tape, const LoadedSession& session, const SessionPrimitives& prims,
                 int idx, bool train, Rng* rng) const {
    switch (kind_) {
      case BehaviorModelKind::bbp:
        return bbp_.forward(tape, prims.bbp[static_cast<std::size_t>(idx)]);
      case BehaviorModelKind::ebp: {
        if (ebp_.frozen_layers == 4)
          return ebp_.forward_from_embeds(tape, prims.embeds[static_cast<std::size_t>(idx)]);
        std::vector<Tensor> embeds;
        for (Tensor& w : session_windows(session.features))
          embeds.push_back(ebp_.embed_segment(tape, w));
        return ebp_.forward_from_embeds(tape, embeds);
      }
      case BehaviorModelKind::reduced:
        return reduced_.forward_from_prefix(tape, prims.prefix_maps[static_cast<std::size_t>(idx)],
                                            train, rng);
    }
    throw std::logic_error("unreachable");
  }

  std::vector<Tensor> trainable_parameters() const {
    switch (kind_) {
      case BehaviorModelKind::bbp:
        return bbp_.parameters();
      case BehaviorModelKind::ebp:
        return ebp_.trainable_parameters();
      case BehaviorModelKind::reduced:
        return reduced_.trainable_parameters();
    }
    throw std::logic_error("unreachable");
  }

  std::vector<Tensor> frozen_parameters() const {
    switch (kind_) {
      case BehaviorModelKind::bbp:
        return {};
      case BehaviorModelKind::ebp:
        return ebp_.frozen_parameters();
      case BehaviorModelKind::reduced:
        return reduced_.frozen_parameters();
    }
    throw std::logic_error("unreachable");
  }

  void save(const std::string& path, const CheckpointMeta& meta) const {
    switch (kind_) {
      case BehaviorModelKind::bbp:
        save_bbp(path, bbp_, meta);
        return;
      case BehaviorModelKind::ebp:
        save_ebp(path, ebp_, meta);
        return;
      case BehaviorModelKind::reduced:
        save_reduced(path, reduced_, meta);
        return;
    }
  }

 private:
  BehaviorModelKind kind_;
  BBPContextModel bbp_;
  EBPContextModel ebp_;
  ReducedContextModel reduced_;
};

FoldResult train_behavior_fold(BehaviorModelKind kind, const std::vector<LoadedSession>& sessions,
                               const Fold& fold, int fold_idx, const ERModel* er,
                               const std::vector<ECModel>* ecs, const SessionPrimitives& prims,
                               const BehaviorTrainConfig& cfg, const std::string& out_dir) {
  FoldResult res;
  res.fold = fold_idx;
  const FoldSets sets = resolve_fold(sessions, fold);

  Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(fold_idx) + 1);
  const std::uint64_t model_seed = rng.next_u64();
  BehaviorNet net(kind, er, ecs, cfg, model_seed);
  auto params = net.trainable_parameters();
  Adam opt(params);
  const std::uint64_t frozen_before = params_checksum(net.frozen_parameters());

  const int steps_per_epoch =
      std::max(1, static_cast<int>(sets.train.size()) / std::max(1, cfg.batch_size));
  PolySchedule schedule{cfg.lr, std::max(1, cfg.epochs * steps_per_epoch), cfg.poly_power,
                        cfg.floor_lr};

  auto evaluate = [&](const std::vector<int>& idx, double* loss_out, double* acc_out) {
    double loss_sum = 0.0;
    long long correct = 0, total = 0;
    for (int i : idx) {
      Tape tape;
      tape.recording = false;
      const LoadedSession& s = sessions[static_cast<std::size_t>(i)];
      Tensor logits = net.forward(tape, s, prims, i, false, nullptr);
      const MaskedBehaviorTarget t = target_of(s.rec);
      Tensor loss = masked_bce_logits(tape, logits, {t});
      loss_sum += loss.item();
      for (int b = 0; b < kNumBehaviors; ++b) {
        if (!t.mask[static_cast<std::size_t>(b)]) continue;
        const int pred = logits.data()[b] > 0.0 ? 1 : 0;
        correct += pred == s.rec.binary_labels[static_cast<std::size_t>(b)] ? 1 : 0;
        ++total;
      }
    }
    *loss_out = idx.empty() ? 0.0 : loss_sum / static_cast<double>(idx.size());
    *acc_out = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  };

  Tape tape;
  auto best = snapshot_params(params);
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int global_step = 0;
  std::vector<int> order = sets.train;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double train_loss_sum = 0.0;
    int sessions_done = 0;
    double lr_t = schedule.lr_at(global_step);
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t batch_end =
          std::min(order.size(), cursor + static_cast<std::size_t>(std::max(1, cfg.batch_size)));
      const double inv = 1.0 / static_cast<double>(batch_end - cursor);
      lr_t = schedule.lr_at(global_step);
      opt.zero_grad();
      for (std::size_t k = cursor; k < batch_end; ++k) {
        const int i = order[k];
        const LoadedSession& s = sessions[static_cast<std::size_t>(i)];
        tape.clear();
        Tensor logits = net.forward(tape, s, prims, i, true, &rng);
        Tensor loss = masked_bce_logits(tape, logits, {target_of(s.rec)});
        if (!std::isfinite(loss.item())) throw NumericalError("behavior training: loss diverged");
        Tensor scaled = mul(tape, loss, Tensor::scalar(inv));
        tape.backward(scaled);
        train_loss_sum += loss.item();
        ++sessions_done;
      }
      opt.step(lr_t);
      ++global_step;
      cursor = batch_end;
    }
    double vloss = 0.0, vacc = 0.0;
    if (!sets.valid.empty())
      evaluate(sets.valid, &vloss, &vacc);
    else
      vloss = train_loss_sum / std::max(1, sessions_done);
    res.history.push_back({epoch, lr_t, train_loss_sum / std::max(1, sessions_done), vloss, vacc});
    if (cfg.verbose)
      std::fprintf(stderr, "[%s fold %d] epoch %d lr %.2e train %.4f valid %.4f acc %.3f\n",
                   kind == BehaviorModelKind::bbp      ? "bbp"
                   : kind == BehaviorModelKind::ebp    ? "ebp"
                                                       : "reduced",
                   fold_idx, epoch, lr_t, res.history.back().train_loss, vloss, vacc);
    if (vloss < best_valid) {
      best_valid = vloss;
      best = snapshot_params(params);
      res.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  restore_params(params, best);

  const std::uint64_t frozen_after = params_checksum(net.frozen_parameters());
  if (frozen_before != frozen_after)
    throw std::logic_error("behavior training: frozen prefix changed during training");

  // test predictions with the best model
  long long correct = 0, total = 0;
  for (int i : sets.test) {
    Tape et;
    et.recording = false;
    const LoadedSession& s = sessions[static_cast<std::size_t>(i)];
    Tensor logits = net.forward(et, s, prims, i, false, nullptr);
    for (int b = 0; b < kNumBehaviors; ++b) {
      if (!s.rec.mask[static_cast<std::size_t>(b)]) continue;
      PredictionRecord r;
      r.session_id = s.rec.id;
      r.behavior = b;
      r.label = s.rec.binary_labels[static_cast<std::size_t>(b)];
      r.logit = logits.data()[b];
      r.fold = fold_idx;
      correct += (r.predicted() == r.label) ? 1 : 0;
      ++total;
      res.predictions.push_back(std::move(r));
    }
  }
  res.test_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

  if (!out_dir.empty()) {
    CheckpointMeta meta;
    meta.history = res.history;
    meta.arch = {};
    net.save(out_dir + "/fold_" + std::to_string(fold_idx) + ".ckpt", meta);
    std::ofstream hist(out_dir + "/fold_" + std::to_string(fold_idx) + "_history.csv");
    hist << history_to_csv(res.history);
  }
  return res;
}

}  // namespace

std::vector<FoldResult> run_behavior_experiment(
    BehaviorModelKind kind, const std::vector<LoadedSession>& sessions,
    const std::vector<Fold>& folds, const ERModel* er, const std::vector<ECModel>* ecs,
    const BehaviorTrainConfig& cfg, int jobs, const std::string& out_dir, int max_folds) {
  if (sessions.empty()) throw DataError("run_behavior_experiment: no sessions");
  const SessionPrimitives prims = build_primitives(kind, sessions, er, ecs, cfg);
  const int n_folds = max_folds > 0 ? std::min<int>(max_folds, static_cast<int>(folds.size()))
                                    : static_cast<int>(folds.size());
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::vector<FoldResult> results(static_cast<std::size_t>(n_folds));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (;;) {
      const int f = next.fetch_add(1);
      if (f >= n_folds) return;
      try {
        results[static_cast<std::size_t>(f)] =
            train_behavior_fold(kind, sessions, folds[static_cast<std::size_t>(f)], f, er, ecs,
                                prims, cfg, out_dir);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min(jobs, n_folds));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  if (!out_dir.empty()) {
    std::vector<PredictionRecord> all;
    for (const FoldResult& r : results)
      all.insert(all.end(), r.predictions.begin(), r.predictions.end());
    std::ofstream pred(out_dir + "/predictions.csv");
    pred << predictions_to_csv(all);
  }
  return results;
}

BehaviorAccuracyTable experiment_accuracy(const std::vector<FoldResult>& folds) {
  std::vector<PredictionRecord> all;
  for (const FoldResult& r : folds)
    all.insert(all.end(), r.predictions.begin(), r.predictions.end());
  return aggregate_folds(all);
}

std::string history_to_csv(const std::vector<TrainHistoryRow>& history) {
  std::ostringstream out;
  out.precision(12);
  out << "epoch,lr,train_loss,valid_loss,valid_metric\n";
  for (const TrainHistoryRow& r : history)
    out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.valid_loss << ','
        << r.valid_metric << '\n';
  return out.str();
}

}  // namespace emobev
