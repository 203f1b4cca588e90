// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "emobev/dsp.hpp"

using namespace emobev;

namespace {

constexpr double kPi = 3.14159265358979323846;

Waveform tone(double hz, double seconds, int sr = 16000, double amp = 0.6) {
  Waveform w;
  w.sample_rate_hz = sr;
  const int n = static_cast<int>(seconds * sr);
  w.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w.samples[static_cast<std::size_t>(i)] = amp * std::sin(2.0 * kPi * hz * i / sr);
  return w;
}

// O(n^2) reference DFT, independent of the radix-2 implementation
std::vector<double> naive_dft_mag2(const std::vector<double>& frame, int n) {
  std::vector<double> out(static_cast<std::size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < frame.size(); ++t) {
      const double ang = -2.0 * kPi * k * static_cast<double>(t) / n;
      re += frame[t] * std::cos(ang);
      im += frame[t] * std::sin(ang);
    }
    out[static_cast<std::size_t>(k)] = re * re + im * im;
  }
  return out;
}

// O(n^2) orthonormal DCT-II oracle
std::vector<double> naive_dct(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += v[static_cast<std::size_t>(i)] * std::cos(kPi * (2.0 * i + 1.0) * k / (2.0 * n));
    out[static_cast<std::size_t>(k)] = acc * (k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n));
  }
  return out;
}

}  // namespace

TEST_CASE("framing arithmetic") {
  FrameSpec spec;
  Waveform w = tone(100.0, 1.0);
  const auto frames = frame_signal(w, spec);
  CHECK(frames.size() == 98);  // floor((16000-400)/160)+1
  CHECK(frames[0].size() == 400);

  Waveform zero;
  zero.sample_rate_hz = 16000;
  zero.samples.assign(400, 0.0);
  const auto one = frame_signal(zero, spec);
  CHECK(one.size() == 1);  // 25 ms -> exactly one frame
  for (double v : one[0]) CHECK(v == 0.0);

  zero.samples.resize(399);
  CHECK_THROWS_AS(frame_signal(zero, spec), DataError);
}

TEST_CASE("fft of an impulse is flat") {
  std::vector<double> impulse(64, 0.0);
  impulse[0] = 1.0;
  const auto spec = fft_mag2(impulse, 64);
  for (double v : spec) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fft concentrates a bin-aligned sine") {
  const int n = 512;
  // Hamming-windowed sine at exactly bin 32
  std::vector<double> frame(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double ham = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
    frame[static_cast<std::size_t>(i)] = ham * std::sin(2.0 * kPi * 32.0 * i / n);
  }
  const auto spec = fft_mag2(frame, n);
  double total = 0.0, near = 0.0;
  for (int k = 0; k <= n / 2; ++k) {
    total += spec[static_cast<std::size_t>(k)];
    if (std::abs(k - 32) <= 2) near += spec[static_cast<std::size_t>(k)];  // Hamming leakage
  }
  CHECK(near / total > 0.99);
}

TEST_CASE("fft matches the naive DFT oracle") {
  Rng rng(404);
  for (int n : {64, 128, 256, 512}) {
    std::vector<double> frame(static_cast<std::size_t>(n));
    for (double& v : frame) v = rng.uniform(-1.0, 1.0);
    const auto fast = fft_mag2(frame, n);
    const auto slow = naive_dft_mag2(frame, n);
    double scale = 0.0;
    for (double v : slow) scale = std::max(scale, v);
    for (std::size_t k = 0; k < fast.size(); ++k)
      CHECK(std::abs(fast[k] - slow[k]) / scale < 1e-8);
  }
  CHECK_THROWS_AS(fft_mag2(std::vector<double>(100, 0.0), 100), std::invalid_argument);
}

TEST_CASE("mel filterbank shape invariants") {
  const auto fb = MelFilterbank::make(40, 512, 16000);
  REQUIRE(fb.weights.size() == 40);
  // every filter non-negative, every in-band bin covered
  std::vector<double> coverage(257, 0.0);
  for (const auto& filt : fb.weights)
    for (std::size_t k = 0; k < filt.size(); ++k) {
      CHECK(filt[k] >= 0.0);
      coverage[k] += filt[k];
    }
  for (int k = 1; k < 256; ++k) {
    const double hz = k * 16000.0 / 512.0;
    if (hz > fb.center_hz(0) && hz < fb.center_hz(39)) CHECK(coverage[static_cast<std::size_t>(k)] > 0.0);
  }
}

TEST_CASE("log mel filterbank energies") {
  const auto fb = MelFilterbank::make(40, 512, 16000);
  std::vector<double> zero(257, 0.0);
  for (double v : log_mfb(zero, fb)) CHECK(v == doctest::Approx(std::log(1e-10)));

  // tone at filter 20's center lands its argmax on filter 20
  const double hz = fb.center_hz(20);
  std::vector<double> spec(257, 0.0);
  const int bin = static_cast<int>(std::lround(hz * 512.0 / 16000.0));
  spec[static_cast<std::size_t>(bin)] = 1.0;
  const auto e = log_mfb(spec, fb);
  const int argmax = static_cast<int>(std::max_element(e.begin(), e.end()) - e.begin());
  CHECK(argmax == 20);

  // scaling the spectrum by c shifts every output by log c, exactly
  std::vector<double> spec2(spec);
  for (double& v : spec2) v *= 42.0;
  const auto e2 = log_mfb(spec2, fb);
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (spec[static_cast<std::size_t>(bin)] == 0.0) continue;
    if (e[i] > std::log(1e-10))  // floored entries do not shift
      CHECK(e2[i] - e[i] == doctest::Approx(std::log(42.0)).epsilon(1e-12));
  }
}

TEST_CASE("mfcc is an orthonormal DCT-II") {
  // constant input c -> coefficient 0 = c*sqrt(40), rest 0
  std::vector<double> c(40, 2.0);
  const auto coeffs = mfcc(c);
  CHECK(coeffs[0] == doctest::Approx(2.0 * std::sqrt(40.0)).epsilon(1e-12));
  for (std::size_t k = 1; k < 40; ++k) CHECK(coeffs[k] == doctest::Approx(0.0).epsilon(1e-12));

  Rng rng(7);
  std::vector<double> v(40);
  for (double& x : v) x = rng.uniform(-3.0, 3.0);
  const auto fwd = mfcc(v);
  const auto oracle = naive_dct(v);
  for (std::size_t k = 0; k < 40; ++k) CHECK(std::abs(fwd[k] - oracle[k]) < 1e-10);
  const auto back = idct(fwd);
  for (std::size_t k = 0; k < 40; ++k) CHECK(std::abs(back[k] - v[k]) < 1e-10);
}

TEST_CASE("nccf on periodic, noise and silent frames") {
  // perfectly periodic frame with period 100 samples
  std::vector<double> periodic(400);
  for (int i = 0; i < 400; ++i)
    periodic[static_cast<std::size_t>(i)] = std::sin(2.0 * kPi * (i % 100) / 100.0);
  const NccfResult r = nccf(periodic, 32, 320);
  CHECK(r.best_lag == 100);
  CHECK(r.value > 0.99);

  // white noise stays below the voicing threshold most of the time
  int below = 0;
  const int trials = 30;
  for (int s = 0; s < trials; ++s) {
    Rng rng(1000 + static_cast<std::uint64_t>(s));
    std::vector<double> noise(400);
    for (double& v : noise) v = rng.uniform(-1.0, 1.0);
    if (nccf(noise, 32, 320).value < 0.6) ++below;
  }
  CHECK(below >= trials * 2 / 3);

  const NccfResult silent = nccf(std::vector<double>(400, 0.0), 32, 320);
  CHECK(silent.best_lag == 0);
  CHECK(silent.value == 0.0);
}

TEST_CASE("pitch tracking on tones across the band") {
  for (double hz : {80.0, 120.0, 220.0, 300.0, 400.0}) {
    const Waveform w = tone(hz, 1.0);
    const PitchTrack track = pitch_track(w, FrameSpec{});
    std::vector<double> voiced;
    for (double f : track.f0)
      if (f > 0.0) voiced.push_back(f);
    REQUIRE(voiced.size() > track.f0.size() / 2);
    std::sort(voiced.begin(), voiced.end());
    const double median = voiced[voiced.size() / 2];
    const double lag_quantum = hz * hz / 16000.0;
    CHECK(std::abs(median - hz) <= std::max(5.0, lag_quantum));
  }
}

TEST_CASE("pitch of silence is zero and constant tones have near-zero delta") {
  Waveform silence;
  silence.sample_rate_hz = 16000;
  silence.samples.assign(16000, 0.0);
  const PitchTrack track = pitch_track(silence, FrameSpec{});
  for (double f : track.f0) CHECK(f == 0.0);

  const PitchTrack steady = pitch_track(tone(220.0, 1.0), FrameSpec{});
  for (std::size_t t = 5; t + 5 < steady.df0.size(); ++t)
    CHECK(std::abs(steady.df0[t]) < 2.0);
}

TEST_CASE("feature extraction layout and shapes") {
  const Waveform w = tone(220.0, 1.0);
  const FeatureMatrix f = extract_features(w);
  CHECK(f.dim == 84);
  CHECK(f.frames == 98);

  // silence: log-MFBs at the floor, f0 and NCCF zero
  Waveform silence;
  silence.sample_rate_hz = 16000;
  silence.samples.assign(8000, 0.0);
  const FeatureMatrix fs = extract_features(silence);
  for (int t = 0; t < fs.frames; ++t) {
    for (int d = 0; d < 40; ++d)
      CHECK(fs.at(d, t) == doctest::Approx(std::log(1e-10)));
    CHECK(fs.at(kFeatF0, t) == 0.0f);
    CHECK(fs.at(kFeatNccf, t) == 0.0f);
    CHECK(fs.at(kFeatEnergy, t) == doctest::Approx(std::log(1e-10)));
  }
}

TEST_CASE("amplitude scaling shifts log features and leaves pitch alone") {
  const Waveform w = tone(220.0, 1.0, 16000, 0.3);
  Waveform scaled = w;
  for (double& s : scaled.samples) s *= 2.0;
  const FeatureMatrix a = extract_features(w);
  const FeatureMatrix b = extract_features(scaled);
  const double shift = std::log(4.0);  // power scales by c^2
  for (int t = 0; t < a.frames; ++t) {
    for (int d = 0; d < 40; ++d)
      CHECK(b.at(d, t) - a.at(d, t) == doctest::Approx(shift).epsilon(1e-4));
    CHECK(b.at(kFeatEnergy, t) - a.at(kFeatEnergy, t) == doctest::Approx(shift).epsilon(1e-4));
    CHECK(b.at(kFeatF0, t) == doctest::Approx(a.at(kFeatF0, t)).epsilon(1e-6));
    CHECK(b.at(kFeatNccf, t) == doctest::Approx(a.at(kFeatNccf, t)).epsilon(1e-5));
  }
}

TEST_CASE("wav round trip") {
  const Waveform w = tone(220.0, 0.25);
  const std::string path = (std::filesystem::temp_directory_path() / "emobev_test_tone.wav").string();
  write_wav(path, w);
  const Waveform r = read_wav(path);
  CHECK(r.sample_rate_hz == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); i += 137)
    CHECK(r.samples[i] == doctest::Approx(w.samples[i]).epsilon(1e-3));
  std::remove(path.c_str());
}
