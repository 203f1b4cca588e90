// SPDX-License-Identifier: Apache-2.0
#include "emobev/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace emobev {

namespace {
constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }
}  // namespace

int FrameSpec::fft_size(int sample_rate) const {
  int n = 1;
  while (n < window_samples(sample_rate)) n <<= 1;
  return n;
}

std::vector<std::vector<double>> frame_signal(const Waveform& w, const FrameSpec& spec) {
  const int win = spec.window_samples(w.sample_rate_hz);
  const int shift = spec.shift_samples(w.sample_rate_hz);
  if (shift > win) throw std::invalid_argument("frame_signal: shift exceeds window");
  const int n = static_cast<int>(w.samples.size());
  if (n < win) throw DataError("frame_signal: waveform shorter than one analysis window");
  const int n_frames = (n - win) / shift + 1;
  std::vector<std::vector<double>> frames;
  frames.reserve(static_cast<std::size_t>(n_frames));
  std::vector<double> hamming(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i)
    hamming[static_cast<std::size_t>(i)] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (win - 1));
  for (int f = 0; f < n_frames; ++f) {
    std::vector<double> frame(static_cast<std::size_t>(win));
    const int start = f * shift;
    for (int i = 0; i < win; ++i)
      frame[static_cast<std::size_t>(i)] =
          w.samples[static_cast<std::size_t>(start + i)] * hamming[static_cast<std::size_t>(i)];
    frames.push_back(std::move(frame));
  }
  return frames;
}

void fft_radix2(std::vector<double>& a) {
  const std::size_t n = a.size() / 2;
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_radix2: length must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(a[2 * i], a[2 * j]);
      std::swap(a[2 * i + 1], a[2 * j + 1]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t u = i + k, v = i + k + len / 2;
        const double vr = a[2 * v] * cr - a[2 * v + 1] * ci;
        const double vi = a[2 * v] * ci + a[2 * v + 1] * cr;
        a[2 * v] = a[2 * u] - vr;
        a[2 * v + 1] = a[2 * u + 1] - vi;
        a[2 * u] += vr;
        a[2 * u + 1] += vi;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

std::vector<double> fft_mag2(const std::vector<double>& frame, int fft_size) {
  if (static_cast<int>(frame.size()) > fft_size)
    throw std::invalid_argument("fft_mag2: frame longer than fft_size");
  std::vector<double> buf(static_cast<std::size_t>(fft_size) * 2, 0.0);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[2 * i] = frame[i];
  fft_radix2(buf);
  std::vector<double> out(static_cast<std::size_t>(fft_size / 2 + 1));
  for (int k = 0; k <= fft_size / 2; ++k) {
    const double re = buf[static_cast<std::size_t>(2 * k)];
    const double im = buf[static_cast<std::size_t>(2 * k + 1)];
    out[static_cast<std::size_t>(k)] = re * re + im * im;
  }
  return out;
}

MelFilterbank MelFilterbank::make(int n_filters, int fft_size, int sample_rate, double low_hz) {
  MelFilterbank fb;
  fb.n_filters = n_filters;
  fb.fft_size = fft_size;
  fb.sample_rate = sample_rate;
  fb.low_hz = low_hz;
  const int n_bins = fft_size / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_lo = hz_to_mel(low_hz), mel_hi = hz_to_mel(nyquist);
  // n_filters + 2 equally spaced mel edge points
  std::vector<double> edges(static_cast<std::size_t>(n_filters) + 2);
  for (int i = 0; i < n_filters + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_filters + 1));
  fb.weights.assign(static_cast<std::size_t>(n_filters),
                    std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
  for (int m = 0; m < n_filters; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < n_bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / fft_size;
      double wgt = 0.0;
      if (hz >= left && hz <= center && center > left)
        wgt = (hz - left) / (center - left);
      else if (hz > center && hz <= right && right > center)
        wgt = (right - hz) / (right - center);
      fb.weights[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = wgt;
    }
  }
  return fb;
}

double MelFilterbank::center_hz(int filter) const {
  const double mel_lo = hz_to_mel(low_hz), mel_hi = hz_to_mel(sample_rate / 2.0);
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (filter + 1) / (n_filters + 1));
}

std::vector<double> log_mfb(const std::vector<double>& power_spectrum, const MelFilterbank& fb) {
  if (static_cast<int>(power_spectrum.size()) != fb.fft_size / 2 + 1)
    throw std::invalid_argument("log_mfb: spectrum length does not match filterbank");
  std::vector<double> out(static_cast<std::size_t>(fb.n_filters));
  for (int m = 0; m < fb.n_filters; ++m) {
    double acc = 0.0;
    const auto& w = fb.weights[static_cast<std::size_t>(m)];
    for (std::size_t k = 0; k < power_spectrum.size(); ++k) acc += w[k] * power_spectrum[k];
    out[static_cast<std::size_t>(m)] = std::log(std::max(acc, kLogFloor));
  }
  return out;
}

std::vector<double> mfcc(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += v[static_cast<std::size_t>(i)] * std::cos(kPi / n * (i + 0.5) * k);
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    out[static_cast<std::size_t>(k)] = scale * acc;
  }
  return out;
}

std::vector<double> idct(const std::vector<double>& c) {
  const int n = static_cast<int>(c.size());
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = std::sqrt(1.0 / n) * c[0];
    for (int k = 1; k < n; ++k)
      acc += std::sqrt(2.0 / n) * c[static_cast<std::size_t>(k)] * std::cos(kPi / n * (i + 0.5) * k);
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

namespace {

// per-lag normalized cross-correlation; NaN marks silent/undefined lags
std::vector<double> nccf_curve(const std::vector<double>& frame, int min_lag, int max_lag) {
  const int n = static_cast<int>(frame.size());
  std::vector<double> curve(static_cast<std::size_t>(max_lag - min_lag + 1),
                            std::numeric_limits<double>::quiet_NaN());
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    double num = 0.0, e0 = 0.0, e1 = 0.0;
    const int m = n - lag;
    for (int t = 0; t < m; ++t) {
      num += frame[static_cast<std::size_t>(t)] * frame[static_cast<std::size_t>(t + lag)];
      e0 += frame[static_cast<std::size_t>(t)] * frame[static_cast<std::size_t>(t)];
      e1 += frame[static_cast<std::size_t>(t + lag)] * frame[static_cast<std::size_t>(t + lag)];
    }
    if (e0 <= 0.0 || e1 <= 0.0) continue;
    curve[static_cast<std::size_t>(lag - min_lag)] = num / std::sqrt(e0 * e1);
  }
  return curve;
}

}  // namespace

NccfResult nccf(const std::vector<double>& frame, int min_lag, int max_lag) {
  if (min_lag < 1 || max_lag <= min_lag)
    throw std::invalid_argument("nccf: need 1 <= min_lag < max_lag");
  const int n = static_cast<int>(frame.size());
  if (max_lag >= n) throw std::invalid_argument("nccf: max_lag must be below the frame length");
  const auto curve = nccf_curve(frame, min_lag, max_lag);
  NccfResult best;
  bool found = false;
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    const double v = curve[static_cast<std::size_t>(lag - min_lag)];
    if (std::isnan(v)) continue;
    if (!found || v > best.value) {  // ties keep the lowest lag
      best.value = v;
      best.best_lag = lag;
      found = true;
    }
  }
  if (!found) return {0, 0.0};  // silent frame -> unvoiced
  return best;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

PitchTrack pitch_track(const Waveform& w, const FrameSpec& spec) {
  const int sr = w.sample_rate_hz;
  const int win = spec.window_samples(sr);
  const int shift = spec.shift_samples(sr);
  const int n = static_cast<int>(w.samples.size());
  if (n < win) throw DataError("pitch_track: waveform shorter than one analysis window");
  const int n_frames = (n - win) / shift + 1;
  const int min_lag = std::max(1, sr / 500);
  const int max_lag = std::min(win - 1, sr / 50);

  PitchTrack track;
  track.f0.resize(static_cast<std::size_t>(n_frames), 0.0);
  track.nccf.resize(static_cast<std::size_t>(n_frames), 0.0);
  for (int f = 0; f < n_frames; ++f) {
    // rectangular (unwindowed) frame: tapering biases the lag correlation
    std::vector<double> frame(w.samples.begin() + f * shift,
                              w.samples.begin() + f * shift + win);
    const auto curve = nccf_curve(frame, min_lag, max_lag);
    double vmax = 0.0;
    bool voiced_any = false;
    for (double v : curve)
      if (!std::isnan(v) && (!voiced_any || v > vmax)) {
        vmax = v;
        voiced_any = true;
      }
    if (!voiced_any) continue;
    track.nccf[static_cast<std::size_t>(f)] = vmax;
    if (vmax < kVoicingThreshold) continue;
    // octave disambiguation: integer lag multiples of the period correlate
    // as well as the period itself, so take the smallest lag within 1% of
    // the peak rather than the raw argmax
    int lag = 0;
    for (int l = min_lag; l <= max_lag; ++l) {
      const double v = curve[static_cast<std::size_t>(l - min_lag)];
      if (!std::isnan(v) && v >= vmax - 0.01) {
        lag = l;
        break;
      }
    }
    track.f0[static_cast<std::size_t>(f)] = static_cast<double>(sr) / lag;
  }

  // 5-point median smoothing (window shrinks at the edges)
  std::vector<double> smoothed(track.f0.size());
  for (int f = 0; f < n_frames; ++f) {
    const int lo = std::max(0, f - 2), hi = std::min(n_frames - 1, f + 2);
    smoothed[static_cast<std::size_t>(f)] = median_of(std::vector<double>(
        track.f0.begin() + lo, track.f0.begin() + hi + 1));
  }
  track.f0 = std::move(smoothed);

  track.df0.resize(track.f0.size(), 0.0);
  for (int f = 0; f < n_frames; ++f) {
    const int lo = std::max(0, f - 1), hi = std::min(n_frames - 1, f + 1);
    if (hi > lo)
      track.df0[static_cast<std::size_t>(f)] =
          (track.f0[static_cast<std::size_t>(hi)] - track.f0[static_cast<std::size_t>(lo)]) / (hi - lo);
  }
  return track;
}

FeatureMatrix extract_features(const Waveform& w, const FrameSpec& spec) {
  const int sr = w.sample_rate_hz;
  const int win = spec.window_samples(sr);
  const int shift = spec.shift_samples(sr);
  const int fft_n = spec.fft_size(sr);
  const auto frames = frame_signal(w, spec);  // Hamming-windowed, for spectra
  const int n_frames = static_cast<int>(frames.size());
  const MelFilterbank fb = MelFilterbank::make(40, fft_n, sr);
  const PitchTrack pitch = pitch_track(w, spec);

  FeatureMatrix f(kFeatureDim, n_frames);
  for (int t = 0; t < n_frames; ++t) {
    const auto spectrum = fft_mag2(frames[static_cast<std::size_t>(t)], fft_n);
    const auto mfb = log_mfb(spectrum, fb);
    const auto ceps = mfcc(mfb);
    for (int d = 0; d < 40; ++d) {
      f.at(d, t) = static_cast<float>(mfb[static_cast<std::size_t>(d)]);
      f.at(40 + d, t) = static_cast<float>(ceps[static_cast<std::size_t>(d)]);
    }
    // raw (unwindowed) log energy
    double energy = 0.0;
    const int start = t * shift;
    for (int i = 0; i < win; ++i) {
      const double s = w.samples[static_cast<std::size_t>(start + i)];
      energy += s * s;
    }
    f.at(kFeatEnergy, t) = static_cast<float>(std::log(std::max(energy, kLogFloor)));
    f.at(kFeatF0, t) = static_cast<float>(pitch.f0[static_cast<std::size_t>(t)]);
    f.at(kFeatDf0, t) = static_cast<float>(pitch.df0[static_cast<std::size_t>(t)]);
    f.at(kFeatNccf, t) = static_cast<float>(pitch.nccf[static_cast<std::size_t>(t)]);
  }
  return f;
}

// --- WAV ------------------------------------------------------------------

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav: " + path);
  char tag[5] = {0};
  in.read(tag, 4);
  if (std::string(tag, 4) != "RIFF") throw DataError("not a RIFF file: " + path);
  read_u32(in);  // riff size
  in.read(tag, 4);
  if (std::string(tag, 4) != "WAVE") throw DataError("not a WAVE file: " + path);

  Waveform w;
  std::uint16_t format = 0, channels = 0, bits = 0;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const std::uint32_t chunk_size = read_u32(in);
    const std::string chunk(tag, 4);
    if (chunk == "fmt ") {
      format = read_u16(in);
      channels = read_u16(in);
      w.sample_rate_hz = static_cast<int>(read_u32(in));
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (chunk_size > 16) in.ignore(chunk_size - 16);
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw DataError("wav: data chunk before fmt: " + path);
      if (channels != 1) throw DataError("wav: only single-channel files are supported: " + path);
      if (format == 1 && bits == 16) {
        const std::size_t n = chunk_size / 2;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint16_t raw = read_u16(in);
          w.samples[i] = static_cast<double>(static_cast<std::int16_t>(raw)) / 32768.0;
        }
      } else if (format == 3 && bits == 32) {
        const std::size_t n = chunk_size / 4;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint32_t raw = read_u32(in);
          float v;
          std::memcpy(&v, &raw, 4);
          w.samples[i] = static_cast<double>(v);
        }
      } else {
        throw DataError("wav: unsupported encoding (need PCM16 or float32): " + path);
      }
      return w;
    } else {
      in.ignore(chunk_size + (chunk_size & 1));
    }
  }
  throw DataError("wav: no data chunk: " + path);
}

void write_wav(const std::string& path, const Waveform& w) {
  std::string out;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out += "RIFF";
  le::append<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  le::append<std::uint32_t>(out, 16);
  le::append<std::uint16_t>(out, 1);  // PCM
  le::append<std::uint16_t>(out, 1);  // mono
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  le::append<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate_hz * 2));
  le::append<std::uint16_t>(out, 2);
  le::append<std::uint16_t>(out, 16);
  out += "data";
  le::append<std::uint32_t>(out, data_bytes);
  for (double s : w.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    le::append<std::int16_t>(out, static_cast<std::int16_t>(std::lrint(clamped * 32767.0)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write wav: " + path);
  f << out;
}

}  // namespace emobev
