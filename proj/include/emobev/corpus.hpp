// SPDX-License-Identifier: Apache-2.0
//
// Corpus handling: manifests, label binarization, segmentation, batching,
// leave-k-couples-out cross-validation splits, and the synthetic corpus
// generators used for desk-scale experiments.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emobev/common.hpp"

namespace emobev {

constexpr int kNumEmotions = 6;           // anger, disgust, fear, happy, sad, surprise
constexpr int kNumBehaviors = 5;          // acceptance, blame, positivity, negativity, sadness
constexpr int kFeatureDim = 84;
constexpr int kSegmentFrames = 100;       // 1 second at a 10 ms frame shift

constexpr std::array<const char*, 6> kEmotionNames = {"anger", "disgust", "fear",
                                                      "happy",  "sad",    "surprise"};

/// Row-major [dim x frames] feature block; stored on disk as float32 but
/// promoted to double in memory for the networks.
struct FeatureMatrix {
  int dim = 0;
  int frames = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(int d, int f) : dim(d), frames(f), data(static_cast<std::size_t>(d) * f, 0.0f) {}
  float& at(int d, int t) { return data[static_cast<std::size_t>(d) * frames + t]; }
  float at(int d, int t) const { return data[static_cast<std::size_t>(d) * frames + t]; }
  bool empty() const { return data.empty(); }
};

// Feature file format: 16-byte header (magic "EBF1", u32 version, u32 dim,
// u32 frames) followed by little-endian float32 data, row-major dim x frames.
void write_feature_file(const std::string& path, const FeatureMatrix& m);
FeatureMatrix read_feature_file(const std::string& path);

struct UtteranceRecord {
  std::string id;
  std::string feature_path;   // one of feature_path/waveform_path must be set
  std::string waveform_path;
  std::array<double, kNumEmotions> ratings{};  // [0,3] Likert
  std::string split;  // train | valid | test
};

struct SessionSegment {
  std::string feature_path;
  double duration_s = 0.0;
};

struct SessionRecord {
  std::string id;
  std::string couple_id;
  std::string speaker_gender;  // "m" | "f"
  std::vector<SessionSegment> segments;  // time-ordered
  std::array<double, kNumBehaviors> behavior_ratings{};  // 1..9 Likert
  std::array<int, kNumBehaviors> binary_labels{};        // valid iff mask bit set
  std::array<bool, kNumBehaviors> mask{};
};

// Manifests are JSON-object-per-line files with a versioned header line:
//   {"format":"emobev-manifest","version":1,"kind":"utterance"}
// Validation rejects duplicate ids, out-of-range ratings and (optionally)
// missing feature files.
std::vector<UtteranceRecord> load_utterance_manifest(const std::string& path,
                                                     bool check_files = true);
std::vector<SessionRecord> load_session_manifest(const std::string& path,
                                                 bool check_files = true);
void save_utterance_manifest(const std::string& path, const std::vector<UtteranceRecord>& recs);
void save_session_manifest(const std::string& path, const std::vector<SessionRecord>& recs);

/// bit j = 1 iff rating_j > 0 (strict).
std::array<int, kNumEmotions> binarize_emotions(const std::array<double, kNumEmotions>& ratings);

/// Assigns binary labels for one behavior from the rating extremes: the
/// n_extreme lowest-rated sessions (per gender when per_gender) get label 0,
/// the n_extreme highest get 1, and everything in between is masked out for
/// that behavior. Ties at a cut boundary break by session id. When a group
/// has fewer than 2*n_extreme sessions the split falls back to a balanced
/// median split. Classes come out exactly balanced either way.
void binarize_behaviors(std::vector<SessionRecord>& sessions, int behavior, int n_extreme,
                        bool per_gender);

/// Splits record indices into batches with equal class counts. Sampling is
/// without replacement within an epoch where possible; the smaller class
/// cycles (reshuffled) once exhausted.
std::vector<std::vector<int>> balance_batches(const std::vector<int>& labels, int batch_size,
                                              Rng& rng);

enum class SegmentMode { random_one, tile_all };

/// 1-second (100-frame) segmentation. random_one picks one uniformly-placed
/// window (wrap-padded when the sequence is shorter); tile_all produces
/// non-overlapping windows with the last window right-aligned so every frame
/// is covered.
std::vector<FeatureMatrix> segment_utterance(const FeatureMatrix& features, int seg_frames,
                                             SegmentMode mode, Rng* rng);

struct Fold {
  std::vector<std::string> test_couples;
  std::vector<std::string> valid_couples;
  std::vector<std::string> train_couples;
};

/// Leave-k-couples-out: test folds partition all couples into groups of
/// <= k_couples_out; within each fold, n_valid_couples of the remaining
/// couples are reassigned to validation.
std::vector<Fold> cv_split(const std::vector<SessionRecord>& sessions, int k_couples_out,
                           int n_valid_couples, std::uint64_t seed);

// --- synthetic corpora ---------------------------------------------------------

struct SynthEmotionSpec {
  int min_frames = 100;
  int max_frames = 140;
  double noise_sigma = 0.3;
  double amplitude = 1.0;
  double presence_prob = 0.35;  // probability each emotion is present
};

/// Utterance with its features in memory (synthesised or loaded from disk).
struct LoadedUtterance {
  UtteranceRecord rec;
  FeatureMatrix features;
};
using SyntheticUtterance = LoadedUtterance;

/// Each emotion controls the amplitude of a fixed signature over a disjoint
/// 14-dimension block; ratings are stored as ground truth. Deterministic in
/// (spec, n, seed).
std::vector<LoadedUtterance> synth_emotion_corpus(const SynthEmotionSpec& spec, int n,
                                                  std::uint64_t seed);

/// Reads an utterance manifest and its feature files.
std::vector<LoadedUtterance> load_utterances(const std::string& manifest_path);

/// The per-emotion signature pattern (unit block layout), exposed for tests.
std::vector<double> emotion_signature(int emotion);

struct SyntheticRuleSpec {
  enum class Kind { order_dependent, bag_based };
  Kind kind = Kind::bag_based;
  int emotion_a = 0;            // pattern emotion (precedence pair first element)
  int emotion_b = 3;            // second element of the precedence pair
  double theta = 0.3;           // bag_based frequency threshold
  double noise_sigma = 0.3;     // feature noise level
  int min_session_s = 20;
  int max_session_s = 32;
  int blocks = 4;               // order_dependent: number of alternating blocks
  int behavior_index = 0;       // which behavior bit the rule drives
};

struct SyntheticSession {
  SessionRecord rec;
  std::vector<FeatureMatrix> segment_features;  // one block per segment
  std::vector<int> second_emotions;             // per 1 s window: emotion id or -1
};

/// Sessions of 1 s windows drawn from the emotion signatures, labeled by the
/// rule. order_dependent sessions alternate equal-length blocks of the two
/// pattern emotions so positive and negative classes have identical
/// per-emotion histograms and differ only in order.
std::vector<SyntheticSession> synth_behavior_corpus(const SyntheticRuleSpec& rule, int n_sessions,
                                                    std::uint64_t seed);

/// Applies the rule to a per-second emotion sequence; the generators label
/// sessions through this function.
int rule_label(const SyntheticRuleSpec& rule, const std::vector<int>& second_emotions);

struct HistogramAudit {
  std::array<double, kNumEmotions> positive_rate{};  // presence rate per emotion, label 1
  std::array<double, kNumEmotions> negative_rate{};
  double max_divergence = 0.0;
};

/// Presence-rate comparison between classes; order_dependent corpora must
/// come out below 1% divergence.
HistogramAudit audit_histograms(const std::vector<SyntheticSession>& sessions);

/// In-memory session ready for training: concatenated features in session
/// time order.
struct LoadedSession {
  SessionRecord rec;
  FeatureMatrix features;
};

LoadedSession concat_session(const SyntheticSession& s);
LoadedSession load_session(const SessionRecord& rec);

/// Deterministically permutes the label/mask sets among sessions (the
/// label-shuffled control for chance-level checks).
void shuffle_session_labels(std::vector<LoadedSession>& sessions, std::uint64_t seed);

}  // namespace emobev
