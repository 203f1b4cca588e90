// SPDX-License-Identifier: Apache-2.0
//
// The five networks and their training pipelines: the multi-emotion
// regression CNN (ER), the per-emotion classifiers built on its frozen
// prefix (EC), the B-BP label-sequence GRU, the E-BP embedding-sequence
// GRU with a partially frozen conv stack, and the reduced-context model
// whose only temporal context is its convolutional receptive field.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "emobev/corpus.hpp"
#include "emobev/layers.hpp"
#include "emobev/metrics.hpp"
#include "emobev/optim.hpp"

namespace emobev {

/// FNV-1a over the raw bytes of all parameter payloads, in order. Used to
/// verify that frozen prefixes stay bitwise unchanged through training.
std::uint64_t params_checksum(const std::vector<Tensor>& params);

// --- ER: multi-emotion regression network --------------------------------------
// conv stack 84-96(k10 s2) / 96-96(k5 s2) / 96-96(k5 s2) / 96-128(k3 s2),
// ReLU throughout, adaptive max pool, dense 128-128-128-6.
class ERModel {
 public:
  static constexpr int kConvLayers = 4;
  std::array<Conv1d, 4> convs;
  Dense fc1{128, 128}, fc2{128, 128}, fc3{128, 6};
  std::uint64_t init_seed = 0;

  static ERModel create(std::uint64_t seed);

  /// Applies the first `upto` conv layers (with ReLU): the E-BP_l map.
  Tensor conv_map(Tape& tape, const Tensor& x, int upto) const;
  /// Full conv stack + adaptive max pool: [B x 84 x L] -> [B x 128].
  Tensor embed(Tape& tape, const Tensor& x) const;
  Tensor forward(Tape& tape, const Tensor& x) const;  // -> [B x 6]

  std::vector<Tensor> parameters() const;  // trainable, fixed order
};

// --- EC: single-emotion binary classifier ---------------------------------------
// Frozen ER prefix through the second dense layer; trainable head
// 128-64 (PReLU), 64-64 (PReLU), 64-2.
class ECModel {
 public:
  int emotion = 0;
  std::array<Conv1d, 4> convs;  // frozen copies of the trained ER stack
  Dense fc1{128, 128}, fc2{128, 128};
  Dense g1{128, 64}, g2{64, 64}, g3{64, 2};
  PReLULayer act1, act2;
  std::uint64_t init_seed = 0;

  static ECModel create(const ERModel& er, int emotion, std::uint64_t seed);

  /// Frozen path: conv stack + pool + two dense layers -> [B x 128].
  Tensor prefix_embed(Tape& tape, const Tensor& x) const;
  Tensor head(Tape& tape, const Tensor& prefix) const;  // -> [B x 2]
  Tensor forward(Tape& tape, const Tensor& x) const;

  std::vector<Tensor> trainable_parameters() const;
  std::vector<Tensor> frozen_parameters() const;
  std::vector<Tensor> all_parameters() const;
};

// --- B-BP context model ----------------------------------------------------------
// GRU(in 6, hidden 128, 2 layers) over the per-second binary emotion
// vectors; dense 128-64 (ReLU) - 5 on the final hidden state.
class BBPContextModel {
 public:
  GRU gru{kNumEmotions, 128, 2};
  Dense h1{128, 64}, h2{64, 5};
  std::uint64_t init_seed = 0;

  static BBPContextModel create(std::uint64_t seed);
  Tensor forward(Tape& tape, const std::vector<std::array<int, kNumEmotions>>& bbp) const;
  std::vector<Tensor> parameters() const;
};

// --- E-BP context model ----------------------------------------------------------
// Per-segment: ER conv stack with the first l layers frozen (initialised
// from the pretrained ER; l = 0 is the from-scratch baseline), adaptive max
// pool to a 128-dim embedding; GRU(128,128,2) over the session's segment
// embeddings; dense 128-64 (ReLU) - 5.
class EBPContextModel {
 public:
  int frozen_layers = 4;
  std::array<Conv1d, 4> convs;
  GRU gru{128, 128, 2};
  Dense h1{128, 64}, h2{64, 5};
  std::uint64_t init_seed = 0;

  /// er may be null only for l = 0 (random init).
  static EBPContextModel create(const ERModel* er, int frozen_layers, std::uint64_t seed);

  /// [1 x 84 x 100] segment -> [1 x 128] embedding (through all 4 convs + pool).
  Tensor embed_segment(Tape& tape, const Tensor& segment) const;
  /// Embedding path from a cached frozen map at layer `frozen_layers`.
  Tensor embed_from_map(Tape& tape, const Tensor& map) const;
  Tensor forward_from_embeds(Tape& tape, const std::vector<Tensor>& embeds) const;

  std::vector<Tensor> trainable_parameters() const;
  std::vector<Tensor> frozen_parameters() const;
  std::vector<Tensor> all_parameters() const;
};

// --- reduced-context model --------------------------------------------------------
// Frozen full ER conv stack over the whole session, then four trainable
// convs (128-96 k3 s2, 96-96 k3 s2, 96-96 k3 s1, 96-128 k3 s1) with 0..4
// AvgPool(2,2) insertions, ReLU + dropout(0.4/0.4/0.4/0.5), one adaptive max
// pool and dense 128-128-64-5. The pools carry no parameters, so the
// trainable parameter count is identical across receptive-field settings.
enum class PoolPlacement {
  front,        // all inserted pools directly after the first trainable conv
  interleaved,  // pool i after trainable conv i
};

class ReducedContextModel {
 public:
  std::array<Conv1d, 4> frozen_convs;
  std::array<Conv1d, 4> tconvs;
  int n_avg_pools = 0;
  PoolPlacement placement = PoolPlacement::front;
  std::array<double, 4> dropout_p{0.4, 0.4, 0.4, 0.5};
  Dense d1{128, 128}, d2{128, 64}, d3{64, 5};
  std::uint64_t init_seed = 0;

  static ReducedContextModel create(const ERModel& er, int n_avg_pools, PoolPlacement placement,
                                    std::uint64_t seed);

  /// Frozen stack over the session features: [1 x 84 x T] -> [1 x 128 x M].
  Tensor prefix_map(Tape& tape, const Tensor& x) const;
  /// Trainable convs/pools up to (not including) the adaptive max pool.
  Tensor prepool_map(Tape& tape, const Tensor& map, bool train, Rng* rng) const;
  Tensor head_from_pooled(Tape& tape, const Tensor& pooled) const;  // [1 x 128] -> [1 x 5]
  Tensor forward_from_prefix(Tape& tape, const Tensor& map, bool train, Rng* rng) const;

  long long trainable_param_count() const;
  std::vector<Tensor> trainable_parameters() const;
  std::vector<Tensor> frozen_parameters() const;
  std::vector<Tensor> all_parameters() const;

  /// Full conv/pool stack description (frozen prefix + trainable part).
  StackSpec full_stack_spec() const;
  /// Input frames needed for one output position = the receptive field.
  int min_input_frames() const;
};

// --- checkpoints -------------------------------------------------------------------
// Versioned binary format, little-endian 64-bit parameter blobs, FNV-1a
// checksummed. Save -> load -> forward is bitwise identical.

struct TrainHistoryRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_metric = 0.0;  // task metric: WA (EC), accuracy (behavior), MSE (ER)
};

struct CheckpointMeta {
  std::string kind;  // er | ec | bbp | ebp | reduced
  std::uint64_t init_seed = 0;
  std::vector<std::int64_t> arch;
  std::string config_snapshot;
  std::vector<TrainHistoryRow> history;
};

void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      const std::vector<Tensor>& params);
CheckpointMeta read_checkpoint(const std::string& path, const std::string& expected_kind,
                               std::vector<Tensor>& params_out);

void save_er(const std::string& path, const ERModel& m, const CheckpointMeta& meta);
ERModel load_er(const std::string& path, CheckpointMeta* meta_out = nullptr);
void save_ec(const std::string& path, const ECModel& m, const CheckpointMeta& meta);
ECModel load_ec(const std::string& path, CheckpointMeta* meta_out = nullptr);
void save_bbp(const std::string& path, const BBPContextModel& m, const CheckpointMeta& meta);
BBPContextModel load_bbp(const std::string& path, CheckpointMeta* meta_out = nullptr);
void save_ebp(const std::string& path, const EBPContextModel& m, const CheckpointMeta& meta);
EBPContextModel load_ebp(const std::string& path, CheckpointMeta* meta_out = nullptr);
void save_reduced(const std::string& path, const ReducedContextModel& m,
                  const CheckpointMeta& meta);
ReducedContextModel load_reduced(const std::string& path, CheckpointMeta* meta_out = nullptr);

// --- training ----------------------------------------------------------------------

struct TrainConfig {
  std::uint64_t seed = 1;
  double lr = 1e-5;
  int epochs = 100;
  int batch_size = 16;
  int patience = 20;  // epochs without improvement before early stop; 0 = off
  bool verbose = false;
};

struct ERTrainResult {
  ERModel model;
  std::vector<TrainHistoryRow> history;
  int best_epoch = 0;
  double best_valid_mse = 0.0;
};

/// Table-6 protocol: per-utterance random 1 s segment each epoch, batch 16,
/// Adam, MSE over all six ratings; best checkpoint by validation MSE
/// (ties to the earlier epoch).
ERTrainResult train_er(const std::vector<LoadedUtterance>& train,
                       const std::vector<LoadedUtterance>& valid, const TrainConfig& cfg);

struct ECTrainResult {
  ECModel model;
  std::vector<TrainHistoryRow> history;
  int best_epoch = 0;
  double best_valid_wa = 0.0;
};

/// Table-7 protocol: frozen prefix, per-batch class balancing on the
/// binarized labels, cross-entropy; model selection by validation weighted
/// accuracy under segment-majority voting.
ECTrainResult train_ec(const ERModel& er, int emotion, const std::vector<LoadedUtterance>& train,
                       const std::vector<LoadedUtterance>& valid, const TrainConfig& cfg);

/// Tile into 1 s segments, classify each, majority vote; ties predict 1.
int predict_emotion_binary(const ECModel& ec, const FeatureMatrix& features);

/// Per non-overlapping 1 s window, the 6 classifiers' bits in session order
/// (the classifiers share one pretrained prefix, computed once per window).
/// A session shorter than one window is an error.
std::vector<std::array<int, kNumEmotions>> extract_bbp(const std::vector<ECModel>& ecs,
                                                       const FeatureMatrix& session_features);

/// E-BP_l feature map of one segment: output of the l-th pretrained conv
/// layer, [1 x C_l x L_l].
Tensor extract_ebp_map(Tape& tape, const ERModel& er, int l, const Tensor& segment);

/// E-BP_4 pooled embedding for one 1 s segment: [1 x 128].
Tensor extract_ebp_pooled(Tape& tape, const ERModel& er, const Tensor& segment);

// Behavior experiments -----------------------------------------------------------

enum class BehaviorModelKind { bbp, ebp, reduced };

struct BehaviorTrainConfig {
  std::uint64_t seed = 1;
  double lr = 1e-4;        // Table 8; Table 9 uses 1e-5, Table 10 1e-4
  int epochs = 40;
  int batch_size = 1;      // sessions per optimizer step
  double poly_power = 1.0;
  double floor_lr = 0.0;
  int patience = 0;
  int ebp_layer = 4;
  int n_avg_pools = 0;
  PoolPlacement placement = PoolPlacement::front;
  bool verbose = false;
};

struct FoldResult {
  int fold = 0;
  std::vector<TrainHistoryRow> history;
  std::vector<PredictionRecord> predictions;  // test predictions of the best model
  int best_epoch = 0;
  double test_accuracy = 0.0;  // pooled over unmasked behaviors
};

/// Trains one model per fold and collects test predictions (logit > 0).
/// Folds run in parallel across `jobs` threads; every fold derives its own
/// random stream so results are independent of scheduling. When out_dir is
/// non-empty, per-fold checkpoints, history CSVs and a predictions CSV are
/// written there. max_folds > 0 limits the run to the first folds.
std::vector<FoldResult> run_behavior_experiment(
    BehaviorModelKind kind, const std::vector<LoadedSession>& sessions,
    const std::vector<Fold>& folds, const ERModel* er, const std::vector<ECModel>* ecs,
    const BehaviorTrainConfig& cfg, int jobs = 1, const std::string& out_dir = "",
    int max_folds = 0);

/// Pooled accuracy over all folds' test predictions.
BehaviorAccuracyTable experiment_accuracy(const std::vector<FoldResult>& folds);

std::string history_to_csv(const std::vector<TrainHistoryRow>& history);

}  // namespace emobev
