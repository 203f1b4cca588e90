// SPDX-License-Identifier: Apache-2.0
#include "emobev/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace emobev {

namespace {

using nlohmann::json;

constexpr char kFeatureMagic[4] = {'E', 'B', 'F', '1'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr int kManifestVersion = 1;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

}  // namespace

void write_feature_file(const std::string& path, const FeatureMatrix& m) {
  if (m.dim <= 0 || m.frames <= 0) throw DataError("write_feature_file: empty matrix");
  std::string out;
  out.reserve(16 + m.data.size() * 4);
  out.append(kFeatureMagic, 4);
  le::append<std::uint32_t>(out, kFeatureVersion);
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim));
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(m.frames));
  for (float v : m.data) le::append<float>(out, v);
  write_text_file(path, out);
}

FeatureMatrix read_feature_file(const std::string& path) {
  const std::string raw = read_text_file(path);
  if (raw.size() < 16 || raw.compare(0, 4, kFeatureMagic, 4) != 0)
    throw DataError("feature file: bad magic: " + path);
  std::size_t pos = 4;
  const auto version = le::read<std::uint32_t>(raw, pos);
  if (version != kFeatureVersion) throw DataError("feature file: unsupported version");
  const auto dim = le::read<std::uint32_t>(raw, pos);
  const auto frames = le::read<std::uint32_t>(raw, pos);
  const std::size_t expect = 16 + static_cast<std::size_t>(dim) * frames * 4;
  if (raw.size() != expect) throw DataError("feature file: size mismatch: " + path);
  FeatureMatrix m(static_cast<int>(dim), static_cast<int>(frames));
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = le::read<float>(raw, pos);
  return m;
}

namespace {

json manifest_header(const char* kind) {
  return json{{"format", "emobev-manifest"}, {"version", kManifestVersion}, {"kind", kind}};
}

std::vector<json> parse_manifest_lines(const std::string& path, const char* kind) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::vector<json> rows;
  bool saw_header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad json: " + e.what());
    }
    if (!saw_header) {
      if (j.value("format", "") != "emobev-manifest")
        throw DataError(path + ": missing manifest header line");
      if (j.value("version", -1) != kManifestVersion)
        throw DataError(path + ": unsupported manifest version");
      if (j.value("kind", "") != kind)
        throw DataError(path + ": manifest kind is '" + j.value("kind", "") + "', expected '" +
                        kind + "'");
      saw_header = true;
      continue;
    }
    rows.push_back(std::move(j));
  }
  if (!saw_header) throw DataError(path + ": empty manifest (no header line)");
  return rows;
}

}  // namespace

std::vector<UtteranceRecord> load_utterance_manifest(const std::string& path, bool check_files) {
  std::vector<UtteranceRecord> out;
  std::set<std::string> ids;
  for (const json& j : parse_manifest_lines(path, "utterance")) {
    UtteranceRecord r;
    r.id = j.at("id").get<std::string>();
    if (!ids.insert(r.id).second) throw DataError(path + ": duplicate id '" + r.id + "'");
    r.feature_path = j.value("feature_path", "");
    r.waveform_path = j.value("waveform_path", "");
    if (r.feature_path.empty() && r.waveform_path.empty())
      throw DataError(path + ": record '" + r.id + "' has neither feature nor waveform path");
    const auto ratings = j.at("ratings");
    if (!ratings.is_array() || ratings.size() != kNumEmotions)
      throw DataError(path + ": record '" + r.id + "' needs 6 ratings");
    for (int e = 0; e < kNumEmotions; ++e) {
      const double v = ratings[static_cast<std::size_t>(e)].get<double>();
      if (v < 0.0 || v > 3.0)
        throw DataError(path + ": record '" + r.id + "' rating out of [0,3]: " + std::to_string(v));
      r.ratings[static_cast<std::size_t>(e)] = v;
    }
    r.split = j.value("split", "");
    if (r.split != "train" && r.split != "valid" && r.split != "test")
      throw DataError(path + ": record '" + r.id + "' has no valid split");
    if (check_files && !r.feature_path.empty() && !std::filesystem::exists(r.feature_path))
      throw DataError(path + ": missing feature file '" + r.feature_path + "'");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SessionRecord> load_session_manifest(const std::string& path, bool check_files) {
  std::vector<SessionRecord> out;
  std::set<std::string> ids;
  for (const json& j : parse_manifest_lines(path, "session")) {
    SessionRecord r;
    r.id = j.at("id").get<std::string>();
    if (!ids.insert(r.id).second) throw DataError(path + ": duplicate id '" + r.id + "'");
    r.couple_id = j.at("couple_id").get<std::string>();
    if (r.couple_id.empty()) throw DataError(path + ": record '" + r.id + "' missing couple_id");
    r.speaker_gender = j.value("speaker_gender", "m");
    for (const auto& seg : j.at("segments")) {
      SessionSegment s;
      s.feature_path = seg.at("feature_path").get<std::string>();
      s.duration_s = seg.at("duration_s").get<double>();
      if (check_files && !std::filesystem::exists(s.feature_path))
        throw DataError(path + ": missing feature file '" + s.feature_path + "'");
      r.segments.push_back(std::move(s));
    }
    if (r.segments.empty()) throw DataError(path + ": record '" + r.id + "' has no segments");
    const auto ratings = j.at("behavior_ratings");
    if (!ratings.is_array() || ratings.size() != kNumBehaviors)
      throw DataError(path + ": record '" + r.id + "' needs 5 behavior ratings");
    for (int b = 0; b < kNumBehaviors; ++b) {
      const double v = ratings[static_cast<std::size_t>(b)].get<double>();
      if (v < 1.0 || v > 9.0)
        throw DataError(path + ": record '" + r.id + "' behavior rating out of [1,9]");
      r.behavior_ratings[static_cast<std::size_t>(b)] = v;
    }
    r.mask.fill(false);
    r.binary_labels.fill(0);
    if (j.contains("binary_labels")) {
      const auto& labels = j.at("binary_labels");
      for (int b = 0; b < kNumBehaviors; ++b) {
        const auto& v = labels[static_cast<std::size_t>(b)];
        if (v.is_null()) continue;
        r.binary_labels[static_cast<std::size_t>(b)] = v.get<int>();
        r.mask[static_cast<std::size_t>(b)] = true;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

void save_utterance_manifest(const std::string& path, const std::vector<UtteranceRecord>& recs) {
  std::ostringstream out;
  out << manifest_header("utterance").dump() << '\n';
  for (const UtteranceRecord& r : recs) {
    json j{{"id", r.id}, {"ratings", r.ratings}, {"split", r.split}};
    if (!r.feature_path.empty()) j["feature_path"] = r.feature_path;
    if (!r.waveform_path.empty()) j["waveform_path"] = r.waveform_path;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

void save_session_manifest(const std::string& path, const std::vector<SessionRecord>& recs) {
  std::ostringstream out;
  out << manifest_header("session").dump() << '\n';
  for (const SessionRecord& r : recs) {
    json segs = json::array();
    for (const SessionSegment& s : r.segments)
      segs.push_back({{"feature_path", s.feature_path}, {"duration_s", s.duration_s}});
    json labels = json::array();
    for (int b = 0; b < kNumBehaviors; ++b) {
      if (r.mask[static_cast<std::size_t>(b)])
        labels.push_back(r.binary_labels[static_cast<std::size_t>(b)]);
      else
        labels.push_back(nullptr);
    }
    json j{{"id", r.id},
           {"couple_id", r.couple_id},
           {"speaker_gender", r.speaker_gender},
           {"segments", segs},
           {"behavior_ratings", r.behavior_ratings},
           {"binary_labels", labels}};
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

std::array<int, kNumEmotions> binarize_emotions(const std::array<double, kNumEmotions>& ratings) {
  std::array<int, kNumEmotions> bits{};
  for (int e = 0; e < kNumEmotions; ++e)
    bits[static_cast<std::size_t>(e)] = ratings[static_cast<std::size_t>(e)] > 0.0 ? 1 : 0;
  return bits;
}

void binarize_behaviors(std::vector<SessionRecord>& sessions, int behavior, int n_extreme,
                        bool per_gender) {
  if (behavior < 0 || behavior >= kNumBehaviors)
    throw std::invalid_argument("binarize_behaviors: behavior index out of range");
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(sessions.size()); ++i)
    groups[per_gender ? sessions[static_cast<std::size_t>(i)].speaker_gender : std::string("all")]
        .push_back(i);
  const auto bi = static_cast<std::size_t>(behavior);
  for (auto& [gender, idx] : groups) {
    // sort by rating, ties broken by session id for determinism
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      const auto& sa = sessions[static_cast<std::size_t>(a)];
      const auto& sb = sessions[static_cast<std::size_t>(b)];
      if (sa.behavior_ratings[bi] != sb.behavior_ratings[bi])
        return sa.behavior_ratings[bi] < sb.behavior_ratings[bi];
      return sa.id < sb.id;
    });
    const int n = static_cast<int>(idx.size());
    int take = n_extreme;
    if (n < 2 * n_extreme) take = n / 2;  // balanced median-split fallback
    if (take < 1)
      throw DataError("binarize_behaviors: too few sessions in group '" + gender + "'");
    for (int k = 0; k < n; ++k) {
      SessionRecord& s = sessions[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
      if (k < take) {
        s.binary_labels[bi] = 0;
        s.mask[bi] = true;
      } else if (k >= n - take) {
        s.binary_labels[bi] = 1;
        s.mask[bi] = true;
      } else {
        s.binary_labels[bi] = 0;
        s.mask[bi] = false;
      }
    }
  }
}

std::vector<std::vector<int>> balance_batches(const std::vector<int>& labels, int batch_size,
                                              Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw std::invalid_argument("balance_batches: batch_size must be even and >= 2");
  std::vector<int> pos, neg;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    (labels[static_cast<std::size_t>(i)] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw DataError("balance_batches: one class is empty");
  rng.shuffle(pos);
  rng.shuffle(neg);
  const int half = batch_size / 2;
  const int n_batches = static_cast<int>(std::max(pos.size(), neg.size())) / half;
  std::vector<std::vector<int>> batches;
  std::size_t pi = 0, ni = 0;
  for (int b = 0; b < std::max(n_batches, 1); ++b) {
    std::vector<int> batch;
    for (int k = 0; k < half; ++k) {
      if (pi == pos.size()) {  // smaller class cycles, reshuffled
        rng.shuffle(pos);
        pi = 0;
      }
      batch.push_back(pos[pi++]);
    }
    for (int k = 0; k < half; ++k) {
      if (ni == neg.size()) {
        rng.shuffle(neg);
        ni = 0;
      }
      batch.push_back(neg[ni++]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

FeatureMatrix window_of(const FeatureMatrix& f, int start, int frames) {
  FeatureMatrix w(f.dim, frames);
  for (int d = 0; d < f.dim; ++d)
    for (int t = 0; t < frames; ++t)
      w.at(d, t) = f.at(d, (start + t) % f.frames);  // wrap padding for short inputs
  return w;
}

}  // namespace

std::vector<FeatureMatrix> segment_utterance(const FeatureMatrix& features, int seg_frames,
                                             SegmentMode mode, Rng* rng) {
  if (features.empty()) throw DataError("segment_utterance: empty feature sequence");
  std::vector<FeatureMatrix> out;
  if (features.frames <= seg_frames) {
    out.push_back(window_of(features, 0, seg_frames));  // wrap-pad
    return out;
  }
  if (mode == SegmentMode::random_one) {
    if (!rng) throw std::invalid_argument("segment_utterance: random_one needs an rng");
    const int start = static_cast<int>(rng->uniform_int(
        static_cast<std::uint64_t>(features.frames - seg_frames + 1)));
    out.push_back(window_of(features, start, seg_frames));
    return out;
  }
  int start = 0;
  while (start + seg_frames <= features.frames) {
    out.push_back(window_of(features, start, seg_frames));
    start += seg_frames;
  }
  if (start < features.frames)  // right-aligned remainder window
    out.push_back(window_of(features, features.frames - seg_frames, seg_frames));
  return out;
}

std::vector<Fold> cv_split(const std::vector<SessionRecord>& sessions, int k_couples_out,
                           int n_valid_couples, std::uint64_t seed) {
  std::set<std::string> couple_set;
  for (const SessionRecord& s : sessions) couple_set.insert(s.couple_id);
  std::vector<std::string> couples(couple_set.begin(), couple_set.end());
  if (static_cast<int>(couples.size()) < k_couples_out + n_valid_couples + 1)
    throw DataError("cv_split: too few couples for the requested split");
  Rng rng(seed);
  rng.shuffle(couples);
  std::vector<Fold> folds;
  for (std::size_t start = 0; start < couples.size(); start += static_cast<std::size_t>(k_couples_out)) {
    Fold f;
    const std::size_t end = std::min(couples.size(), start + static_cast<std::size_t>(k_couples_out));
    f.test_couples.assign(couples.begin() + static_cast<std::ptrdiff_t>(start),
                          couples.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < couples.size(); ++i)
      if (i < start || i >= end) rest.push_back(couples[i]);
    Rng fold_rng = rng.fork(start);
    fold_rng.shuffle(rest);
    f.valid_couples.assign(rest.begin(), rest.begin() + n_valid_couples);
    f.train_couples.assign(rest.begin() + n_valid_couples, rest.end());
    std::sort(f.test_couples.begin(), f.test_couples.end());
    std::sort(f.valid_couples.begin(), f.valid_couples.end());
    std::sort(f.train_couples.begin(), f.train_couples.end());
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<double> emotion_signature(int emotion) {
  if (emotion < 0 || emotion >= kNumEmotions)
    throw std::invalid_argument("emotion_signature: bad emotion index");
  // fixed per-emotion pattern over its private 14-dim block; independent of
  // any corpus seed so signatures are stable across datasets
  Rng rng(0x51C7u + static_cast<std::uint64_t>(emotion) * 7919u);
  std::vector<double> sig(kFeatureDim, 0.0);
  const int block = kFeatureDim / kNumEmotions;  // 14
  for (int d = 0; d < block; ++d)
    sig[static_cast<std::size_t>(emotion * block + d)] = rng.uniform(0.5, 1.0);
  return sig;
}

namespace {

// features for one window: noise + sum_j rating_j * amplitude * sig_j with a
// mild temporal modulation so the signature is a time-frequency pattern, not
// a DC offset
void fill_emotion_features(FeatureMatrix& f, int t0, int frames,
                           const std::array<double, kNumEmotions>& ratings, double amplitude,
                           double noise_sigma, Rng& rng) {
  std::vector<std::vector<double>> sigs;
  for (int e = 0; e < kNumEmotions; ++e) sigs.push_back(emotion_signature(e));
  for (int t = t0; t < t0 + frames; ++t) {
    for (int d = 0; d < f.dim; ++d) {
      double v = noise_sigma * rng.gaussian();
      for (int e = 0; e < kNumEmotions; ++e) {
        const double r = ratings[static_cast<std::size_t>(e)];
        if (r <= 0.0) continue;
        const double mod = 1.0 + 0.3 * std::sin(0.13 * (t - t0) + 0.9 * e);
        v += r * amplitude * sigs[static_cast<std::size_t>(e)][static_cast<std::size_t>(d)] * mod;
      }
      f.at(d, t) = static_cast<float>(v);
    }
  }
}

}  // namespace

std::vector<LoadedUtterance> synth_emotion_corpus(const SynthEmotionSpec& spec, int n,
                                                  std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("synth_emotion_corpus: n must be > 0");
  std::vector<LoadedUtterance> out;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    LoadedUtterance u;
    u.rec.id = "emo_" + std::to_string(i);
    const double split_draw = rng.uniform();
    u.rec.split = split_draw < 0.70 ? "train" : (split_draw < 0.85 ? "valid" : "test");
    for (int e = 0; e < kNumEmotions; ++e)
      u.rec.ratings[static_cast<std::size_t>(e)] =
          rng.uniform() < spec.presence_prob ? rng.uniform(0.5, 3.0) : 0.0;
    const int frames = spec.min_frames +
                       static_cast<int>(rng.uniform_int(
                           static_cast<std::uint64_t>(spec.max_frames - spec.min_frames + 1)));
    u.features = FeatureMatrix(kFeatureDim, frames);
    fill_emotion_features(u.features, 0, frames, u.rec.ratings, spec.amplitude, spec.noise_sigma,
                          rng);
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<LoadedUtterance> load_utterances(const std::string& manifest_path) {
  std::vector<LoadedUtterance> out;
  for (UtteranceRecord& rec : load_utterance_manifest(manifest_path)) {
    if (rec.feature_path.empty())
      throw DataError("load_utterances: record '" + rec.id + "' has no feature file yet");
    LoadedUtterance u;
    u.features = read_feature_file(rec.feature_path);
    u.rec = std::move(rec);
    out.push_back(std::move(u));
  }
  return out;
}

int rule_label(const SyntheticRuleSpec& rule, const std::vector<int>& second_emotions) {
  if (second_emotions.empty()) throw DataError("rule_label: empty session");
  if (rule.kind == SyntheticRuleSpec::Kind::bag_based) {
    int present = 0;
    for (int e : second_emotions) present += e == rule.emotion_a ? 1 : 0;
    const double frac = static_cast<double>(present) / static_cast<double>(second_emotions.size());
    return frac >= rule.theta ? 1 : 0;
  }
  // order_dependent: label 1 iff the first pattern block is emotion_a, i.e.
  // the a-block precedes the b-block
  for (int e : second_emotions) {
    if (e == rule.emotion_a) return 1;
    if (e == rule.emotion_b) return 0;
  }
  return 0;
}

namespace {

FeatureMatrix make_segment_features(const std::vector<int>& emotions_per_second,
                                    double noise_sigma, Rng& rng) {
  FeatureMatrix f(kFeatureDim, static_cast<int>(emotions_per_second.size()) * kSegmentFrames);
  for (std::size_t s = 0; s < emotions_per_second.size(); ++s) {
    std::array<double, kNumEmotions> ratings{};
    if (emotions_per_second[s] >= 0)
      ratings[static_cast<std::size_t>(emotions_per_second[s])] = rng.uniform(2.0, 3.0);
    fill_emotion_features(f, static_cast<int>(s) * kSegmentFrames, kSegmentFrames, ratings, 1.0,
                          noise_sigma, rng);
  }
  return f;
}

}  // namespace

std::vector<SyntheticSession> synth_behavior_corpus(const SyntheticRuleSpec& rule, int n_sessions,
                                                    std::uint64_t seed) {
  if (rule.emotion_a == rule.emotion_b)
    throw std::invalid_argument("synth_behavior_corpus: pattern emotions must differ");
  if (rule.kind == SyntheticRuleSpec::Kind::order_dependent && rule.blocks % 2 != 0)
    throw std::invalid_argument("synth_behavior_corpus: order rule needs an even block count");
  std::vector<SyntheticSession> out;
  Rng rng(seed);
  for (int i = 0; i < n_sessions; ++i) {
    SyntheticSession s;
    s.rec.id = "beh_" + std::to_string(i);
    s.rec.couple_id = "couple_" + std::to_string(i / 2);  // two sessions per couple
    s.rec.speaker_gender = i % 2 == 0 ? "m" : "f";
    const bool positive = rng.uniform() < 0.5;

    std::vector<std::vector<int>> blocks;  // per block: emotion per second
    if (rule.kind == SyntheticRuleSpec::Kind::order_dependent) {
      // equal-length alternating blocks; the positive class starts with
      // emotion_a, the negative class with emotion_b. Per-session emotion
      // histograms match exactly between the classes.
      const int total_s = rule.min_session_s +
                          static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                              rule.max_session_s - rule.min_session_s + 1)));
      const int block_s = std::max(1, total_s / rule.blocks);
      for (int b = 0; b < rule.blocks; ++b) {
        const bool a_block = positive ? (b % 2 == 0) : (b % 2 == 1);
        blocks.emplace_back(static_cast<std::size_t>(block_s),
                            a_block ? rule.emotion_a : rule.emotion_b);
      }
    } else {
      // bag_based: positives carry contiguous runs of the pattern emotion
      // above the threshold; negatives carry isolated singletons below it
      const int total_s = rule.min_session_s +
                          static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                              rule.max_session_s - rule.min_session_s + 1)));
      std::vector<int> seconds(static_cast<std::size_t>(total_s), -1);
      if (positive) {
        const double target = rng.uniform(rule.theta + 0.15, std::min(0.95, rule.theta + 0.35));
        int want = std::max(1, static_cast<int>(std::lround(target * total_s)));
        int cursor = static_cast<int>(rng.uniform_int(3));
        while (want > 0 && cursor < total_s) {
          const int run = std::min({want, 3 + static_cast<int>(rng.uniform_int(4)), total_s - cursor});
          for (int k = 0; k < run; ++k) seconds[static_cast<std::size_t>(cursor + k)] = rule.emotion_a;
          want -= run;
          cursor += run + 2 + static_cast<int>(rng.uniform_int(3));
        }
      } else {
        const double target = rng.uniform(0.04, std::max(0.05, rule.theta - 0.15));
        const int want = std::max(1, static_cast<int>(std::lround(target * total_s)));
        int placed = 0;
        int cursor = 1 + static_cast<int>(rng.uniform_int(4));
        while (placed < want && cursor < total_s) {
          seconds[static_cast<std::size_t>(cursor)] = rule.emotion_a;
          ++placed;
          cursor += 3 + static_cast<int>(rng.uniform_int(5));  // isolated singletons
        }
      }
      // split the second stream into talk-turn style blocks of 4..8 s
      std::size_t pos = 0;
      while (pos < seconds.size()) {
        const std::size_t len = std::min<std::size_t>(4 + rng.uniform_int(5), seconds.size() - pos);
        blocks.emplace_back(seconds.begin() + static_cast<std::ptrdiff_t>(pos),
                            seconds.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
      }
    }

    for (const auto& block : blocks) {
      s.second_emotions.insert(s.second_emotions.end(), block.begin(), block.end());
      s.segment_features.push_back(make_segment_features(block, rule.noise_sigma, rng));
      SessionSegment seg;
      seg.duration_s = static_cast<double>(block.size());
      s.rec.segments.push_back(std::move(seg));  // feature_path filled when written to disk
    }

    const int label = rule_label(rule, s.second_emotions);
    const auto bi = static_cast<std::size_t>(rule.behavior_index);
    s.rec.mask.fill(false);
    s.rec.mask[bi] = true;
    s.rec.binary_labels.fill(0);
    s.rec.binary_labels[bi] = label;
    s.rec.behavior_ratings.fill(5.0);
    s.rec.behavior_ratings[bi] = label ? 8.0 : 2.0;
    out.push_back(std::move(s));
  }
  return out;
}

HistogramAudit audit_histograms(const std::vector<SyntheticSession>& sessions) {
  HistogramAudit a;
  std::array<long long, kNumEmotions> pos_count{}, neg_count{};
  long long pos_total = 0, neg_total = 0;
  for (const SyntheticSession& s : sessions) {
    int behavior = -1;
    for (int b = 0; b < kNumBehaviors; ++b)
      if (s.rec.mask[static_cast<std::size_t>(b)]) behavior = b;
    if (behavior < 0) continue;
    const bool positive = s.rec.binary_labels[static_cast<std::size_t>(behavior)] == 1;
    for (int e : s.second_emotions) {
      (positive ? pos_total : neg_total) += 1;
      if (e >= 0) (positive ? pos_count : neg_count)[static_cast<std::size_t>(e)] += 1;
    }
  }
  for (int e = 0; e < kNumEmotions; ++e) {
    a.positive_rate[static_cast<std::size_t>(e)] =
        pos_total ? static_cast<double>(pos_count[static_cast<std::size_t>(e)]) / pos_total : 0.0;
    a.negative_rate[static_cast<std::size_t>(e)] =
        neg_total ? static_cast<double>(neg_count[static_cast<std::size_t>(e)]) / neg_total : 0.0;
    a.max_divergence = std::max(a.max_divergence,
                                std::abs(a.positive_rate[static_cast<std::size_t>(e)] -
                                         a.negative_rate[static_cast<std::size_t>(e)]));
  }
  return a;
}

LoadedSession concat_session(const SyntheticSession& s) {
  LoadedSession out;
  out.rec = s.rec;
  int total = 0;
  for (const FeatureMatrix& f : s.segment_features) total += f.frames;
  out.features = FeatureMatrix(kFeatureDim, total);
  int offset = 0;
  for (const FeatureMatrix& f : s.segment_features) {
    for (int d = 0; d < kFeatureDim; ++d)
      for (int t = 0; t < f.frames; ++t) out.features.at(d, offset + t) = f.at(d, t);
    offset += f.frames;
  }
  return out;
}

LoadedSession load_session(const SessionRecord& rec) {
  LoadedSession out;
  out.rec = rec;
  std::vector<FeatureMatrix> parts;
  int total = 0;
  for (const SessionSegment& seg : rec.segments) {
    parts.push_back(read_feature_file(seg.feature_path));
    if (parts.back().dim != kFeatureDim)
      throw DataError("load_session: feature dim mismatch in '" + seg.feature_path + "'");
    total += parts.back().frames;
  }
  out.features = FeatureMatrix(kFeatureDim, total);
  int offset = 0;
  for (const FeatureMatrix& f : parts) {
    for (int d = 0; d < kFeatureDim; ++d)
      for (int t = 0; t < f.frames; ++t) out.features.at(d, offset + t) = f.at(d, t);
    offset += f.frames;
  }
  return out;
}

void shuffle_session_labels(std::vector<LoadedSession>& sessions, std::uint64_t seed) {
  std::vector<std::size_t> perm(sessions.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::array<int, kNumBehaviors>> labels;
  std::vector<std::array<bool, kNumBehaviors>> masks;
  labels.reserve(sessions.size());
  for (const LoadedSession& s : sessions) {
    labels.push_back(s.rec.binary_labels);
    masks.push_back(s.rec.mask);
  }
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    sessions[i].rec.binary_labels = labels[perm[i]];
    sessions[i].rec.mask = masks[perm[i]];
  }
}

}  // namespace emobev
