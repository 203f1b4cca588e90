// SPDX-License-Identifier: Apache-2.0
//
// Acoustic front end: 25 ms / 10 ms framing, power spectra, 40 log-Mel
// filterbank energies, 40 MFCCs, log energy and NCCF-based pitch tracking,
// assembled into the 84-dimensional per-frame feature layout
//   [log-MFB 0..39, MFCC 0..39, energy, f0, delta-f0, NCCF].
#pragma once

#include <utility>
#include <vector>

#include "emobev/corpus.hpp"

namespace emobev {

struct Waveform {
  std::vector<double> samples;  // [-1, 1]
  int sample_rate_hz = 16000;
};

struct FrameSpec {
  double window_s = 0.025;
  double shift_s = 0.010;

  int window_samples(int sample_rate) const { return static_cast<int>(window_s * sample_rate + 0.5); }
  int shift_samples(int sample_rate) const { return static_cast<int>(shift_s * sample_rate + 0.5); }
  /// Next power of two >= window samples.
  int fft_size(int sample_rate) const;
};

/// Frames at 10 ms hops with a Hamming window applied; the trailing partial
/// frame is dropped. Throws if the waveform is shorter than one window.
std::vector<std::vector<double>> frame_signal(const Waveform& w, const FrameSpec& spec);

/// Squared-magnitude spectrum of the real FFT: fft_size/2 + 1 bins.
/// fft_size must be a power of two; the frame is zero-padded up to it.
std::vector<double> fft_mag2(const std::vector<double>& frame, int fft_size);

/// In-place iterative radix-2 FFT over interleaved complex data
/// (re0, im0, re1, im1, ...). Exposed for the DFT-oracle tests.
void fft_radix2(std::vector<double>& interleaved);

struct MelFilterbank {
  int n_filters = 40;
  int fft_size = 512;
  int sample_rate = 16000;
  double low_hz = 20.0;
  std::vector<std::vector<double>> weights;  // [n_filters][fft_size/2+1]

  static MelFilterbank make(int n_filters, int fft_size, int sample_rate, double low_hz = 20.0);
  /// Peak (center) frequency of filter k in Hz.
  double center_hz(int filter) const;
};

/// log(max(filter . power_spectrum, 1e-10)) per filter.
std::vector<double> log_mfb(const std::vector<double>& power_spectrum, const MelFilterbank& fb);

/// Orthonormal DCT-II of the 40-dim log-MFB vector; all coefficients kept.
std::vector<double> mfcc(const std::vector<double>& log_mfb_vec);

/// Inverse of the orthonormal DCT-II (DCT-III); used by round-trip checks.
std::vector<double> idct(const std::vector<double>& coeffs);

struct NccfResult {
  int best_lag = 0;   // 0 = unvoiced
  double value = 0.0;
};

/// NCCF(lag) = sum x_t x_{t+lag} / sqrt(sum x_t^2 * sum x_{t+lag}^2) over the
/// frame, maximised over [min_lag, max_lag]. A silent frame returns (0, 0).
NccfResult nccf(const std::vector<double>& frame, int min_lag, int max_lag);

struct PitchTrack {
  std::vector<double> f0;    // Hz; 0 = unvoiced
  std::vector<double> df0;   // delta of f0, central difference
  std::vector<double> nccf;  // correlation evidence per frame
};

/// Frame-level pitch: f0 = sample_rate / best_lag where NCCF >= 0.6, else 0,
/// 5-point median smoothing across frames, delta by central difference.
/// The 50..500 Hz search band maps to lags [sample_rate/500, sample_rate/50].
PitchTrack pitch_track(const Waveform& w, const FrameSpec& spec);

constexpr double kLogFloor = 1e-10;
constexpr double kVoicingThreshold = 0.6;

/// Full 84 x n_frames feature extraction in the declared layout. Energy is
/// the floored log of the raw (unwindowed) per-frame sum of squares.
FeatureMatrix extract_features(const Waveform& w, const FrameSpec& spec = {});

// Feature layout indices.
constexpr int kFeatEnergy = 80;
constexpr int kFeatF0 = 81;
constexpr int kFeatDf0 = 82;
constexpr int kFeatNccf = 83;

// Single-channel WAV IO (PCM16 or IEEE float32), for the CLI front end and
// synthetic-tone tests.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace emobev
