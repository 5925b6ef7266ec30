#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "zeroavsr/common.hpp"
#include "zeroavsr/mat.hpp"

namespace zeroavsr::frontend {

struct SampleRateMismatch : Error {
  explicit SampleRateMismatch(int got, int want)
      : Error("sample rate " + std::to_string(got) + ", expected " + std::to_string(want)) {}
};
struct LengthMismatch : Error {
  LengthMismatch(int ta, int tv)
      : Error("audio/video frame counts differ too much: " + std::to_string(ta) + " vs " +
              std::to_string(tv)),
        t_audio(ta),
        t_video(tv) {}
  int t_audio, t_video;
};
struct SilentNoise : Error {
  SilentNoise() : Error("noise signal has zero power") {}
};
struct DegenerateSignal : Error {
  DegenerateSignal() : Error("clean signal has zero power; SNR undefined") {}
};
struct BadDimensions : Error {
  explicit BadDimensions(const std::string& msg) : Error("bad dimensions: " + msg) {}
};

struct AudioWave {
  std::vector<float> samples;
  int sample_rate = 16000;
};

struct FeatureSequence {
  Mat<float> frames;  // T x D
  float frame_rate = 25.0f;
};

// Feature extraction constants (log filterbank at 100 fps, 4-stacked to
// 25 fps). The filterbank size and stacking factor are config here, not a
// published constant; defaults follow the AV-HuBERT convention.
struct FbankConfig {
  int sample_rate = 16000;
  int win_samples = 400;  // 25 ms
  int hop_samples = 160;  // 10 ms
  int n_fft = 512;
  int n_mels = 26;
  int stack = 4;
  double floor_eps = 1e-10;
};

namespace detail {

// Iterative radix-2 FFT, double precision. Sizes are powers of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n <= 1) return;
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over the power spectrum, rows = mel bands.
inline Mat<float> mel_filterbank(const FbankConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const double fmax = cfg.sample_rate / 2.0;
  const double mlo = hz_to_mel(0.0), mhi = hz_to_mel(fmax);
  std::vector<double> centers(size_t(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    centers[size_t(i)] = mel_to_hz(mlo + (mhi - mlo) * i / double(cfg.n_mels + 1));
  Mat<float> fb(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = centers[size_t(m)], mid = centers[size_t(m) + 1], hi = centers[size_t(m) + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = double(b) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb(m, b) = float(w);
    }
  }
  return fb;
}

}  // namespace detail

// Log mel filterbank features, 4-stacked. One frame per hop (zero padding
// past the signal end), so 1.0 s of 16 kHz audio yields 100 base frames and
// 25 stacked frames of width 4 * n_mels.
inline FeatureSequence extract_audio_features(const AudioWave& wave, const FbankConfig& cfg = {}) {
  if (wave.sample_rate != cfg.sample_rate)
    throw SampleRateMismatch(wave.sample_rate, cfg.sample_rate);

  const int n_base = int(wave.samples.size()) / cfg.hop_samples;
  static thread_local Mat<float> fb;
  static thread_local int fb_key = -1;
  const int key = cfg.n_mels * 100000 + cfg.n_fft;
  if (fb_key != key) {
    fb = detail::mel_filterbank(cfg);
    fb_key = key;
  }

  std::vector<double> window(size_t(cfg.win_samples));
  for (int i = 0; i < cfg.win_samples; ++i)
    window[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (cfg.win_samples - 1));

  const int bins = cfg.n_fft / 2 + 1;
  Mat<float> base(n_base, cfg.n_mels);
  std::vector<std::complex<double>> buf(size_t(cfg.n_fft));
  for (int t = 0; t < n_base; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0, 0));
    const int start = t * cfg.hop_samples;
    for (int i = 0; i < cfg.win_samples; ++i) {
      const int s = start + i;
      const double x = (s < int(wave.samples.size())) ? double(wave.samples[size_t(s)]) : 0.0;
      buf[size_t(i)] = x * window[size_t(i)];
    }
    detail::fft_inplace(buf);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      const float* w = fb.row(m);
      for (int b = 0; b < bins; ++b) {
        if (w[b] == 0.0f) continue;
        const double p = std::norm(buf[size_t(b)]);
        acc += double(w[b]) * p;
      }
      base(t, m) = float(std::log(acc + cfg.floor_eps));
    }
  }

  const int t_out = n_base / cfg.stack;
  FeatureSequence out;
  out.frame_rate = float(cfg.sample_rate) / float(cfg.hop_samples * cfg.stack);
  out.frames = Mat<float>(t_out, cfg.n_mels * cfg.stack);
  for (int t = 0; t < t_out; ++t)
    for (int s = 0; s < cfg.stack; ++s)
      for (int m = 0; m < cfg.n_mels; ++m)
        out.frames(t, s * cfg.n_mels + m) = base(t * cfg.stack + s, m);
  return out;
}

// Truncate both streams to the shorter length; a discrepancy beyond two
// frames indicates a preprocessing fault rather than rounding.
inline std::pair<FeatureSequence, FeatureSequence> sync_lengths(const FeatureSequence& f_a,
                                                                const FeatureSequence& f_v) {
  const int ta = f_a.frames.rows, tv = f_v.frames.rows;
  if (std::abs(ta - tv) > 2) throw LengthMismatch(ta, tv);
  const int t = std::min(ta, tv);
  auto cut = [t](const FeatureSequence& f) {
    FeatureSequence out;
    out.frame_rate = f.frame_rate;
    out.frames = Mat<float>(t, f.frames.cols);
    std::copy(f.frames.v.begin(), f.frames.v.begin() + ptrdiff_t(t) * f.frames.cols,
              out.frames.v.begin());
    return out;
  };
  return {cut(f_a), cut(f_v)};
}

// Additive noise at an exact target SNR. The noise is tiled/cropped to the
// clean length starting at a seeded offset, then scaled so that
// 10*log10(P_clean / P_noise) == snr_db over the mixed segment.
inline AudioWave mix_noise(const AudioWave& clean, const AudioWave& noise, double snr_db,
                           uint64_t seed) {
  if (clean.sample_rate != noise.sample_rate)
    throw SampleRateMismatch(noise.sample_rate, clean.sample_rate);
  if (noise.samples.empty()) throw SilentNoise();

  double p_clean = 0.0;
  for (float x : clean.samples) p_clean += double(x) * x;
  p_clean /= std::max<size_t>(clean.samples.size(), 1);
  if (p_clean == 0.0) throw DegenerateSignal();

  Rng rng(seed);
  const size_t offset = size_t(rng.next_u64() % noise.samples.size());
  std::vector<float> seg(clean.samples.size());
  for (size_t i = 0; i < seg.size(); ++i)
    seg[i] = noise.samples[(offset + i) % noise.samples.size()];

  double p_noise = 0.0;
  for (float x : seg) p_noise += double(x) * x;
  p_noise /= std::max<size_t>(seg.size(), 1);
  if (p_noise == 0.0) throw SilentNoise();

  const double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  AudioWave out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(clean.samples.size());
  for (size_t i = 0; i < seg.size(); ++i)
    out.samples[i] = clean.samples[i] + float(scale * double(seg[i]));
  return out;
}

struct VideoFrames {
  int t = 0, h = 0, w = 0;
  std::vector<float> data;  // t * h * w
  float& at(int f, int y, int x) { return data[(size_t(f) * h + y) * size_t(w) + x]; }
  float at(int f, int y, int x) const { return data[(size_t(f) * h + y) * size_t(w) + x]; }
};

// One crop offset and one flip decision per utterance; per-frame jitter would
// destroy lip-motion coherence. Eval uses the center crop and never flips.
inline VideoFrames augment_video(const VideoFrames& frames, bool train_mode, uint64_t seed) {
  constexpr int kIn = 96, kOut = 88;
  if (frames.h != kIn || frames.w != kIn)
    throw BadDimensions("expected 96x96 frames, got " + std::to_string(frames.h) + "x" +
                        std::to_string(frames.w));
  int ox = (kIn - kOut) / 2, oy = (kIn - kOut) / 2;
  bool flip = false;
  if (train_mode) {
    Rng rng(seed);
    oy = int(rng.uniform_int(0, kIn - kOut));
    ox = int(rng.uniform_int(0, kIn - kOut));
    flip = rng.bernoulli(0.5);
  }
  VideoFrames out;
  out.t = frames.t;
  out.h = out.w = kOut;
  out.data.resize(size_t(frames.t) * kOut * kOut);
  for (int f = 0; f < frames.t; ++f)
    for (int y = 0; y < kOut; ++y)
      for (int x = 0; x < kOut; ++x) {
        const int sx = flip ? (kOut - 1 - x) : x;
        out.at(f, y, x) = frames.at(f, y + oy, sx + ox);
      }
  return out;
}

// ---------------- feature-space noise (synthetic corpora) -----------------
//
// Synthetic utterances are emitted directly as feature matrices, so the noise
// sweep perturbs features with the same power-ratio definition of SNR used
// for waveforms. Stand-ins for the natural/babble/music/speech categories.
enum class NoiseKind { White, Pink, Competing };

inline const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return "white";
    case NoiseKind::Pink: return "pink";
    case NoiseKind::Competing: return "competing";
  }
  return "?";
}

inline Mat<float> make_feature_noise(NoiseKind kind, int t, int d, Rng& rng,
                                     const std::vector<const Mat<float>*>& pool = {}) {
  Mat<float> n(t, d);
  switch (kind) {
    case NoiseKind::White:
      for (auto& x : n.v) x = float(rng.gauss());
      break;
    case NoiseKind::Pink: {
      // One-pole lowpass over time per channel; spectrum falls off with f.
      std::vector<double> state(size_t(d), 0.0);
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) {
          state[size_t(j)] = 0.9 * state[size_t(j)] + 0.437 * rng.gauss();
          n(i, j) = float(state[size_t(j)]);
        }
      break;
    }
    case NoiseKind::Competing: {
      if (pool.empty()) throw Error("competing noise needs a pool of utterance features");
      const Mat<float>& src = *pool[size_t(rng.next_u64() % pool.size())];
      if (src.rows == 0) throw SilentNoise();
      const int off = int(rng.next_u64() % uint64_t(src.rows));
      for (int i = 0; i < t; ++i) {
        const float* r = src.row((off + i) % src.rows);
        for (int j = 0; j < d; ++j) n(i, j) = r[j % src.cols];
      }
      break;
    }
  }
  return n;
}

inline Mat<float> mix_feature_noise(const Mat<float>& clean, const Mat<float>& noise,
                                    double snr_db) {
  if (!clean.same_shape(noise))
    throw BadDimensions("noise features must match clean features");
  const double p_clean = mean_square(clean);
  if (p_clean == 0.0) throw DegenerateSignal();
  const double p_noise = mean_square(noise);
  if (p_noise == 0.0) throw SilentNoise();
  const double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  Mat<float> out = clean;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += float(scale * double(noise.v[i]));
  return out;
}

// ----------------------------- WAV ingestion ------------------------------

// Minimal RIFF reader for 16-bit PCM mono.
inline AudioWave read_wav_pcm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open wav: " + path);
  auto read_u32 = [&in]() {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto read_u16 = [&in]() {
    uint16_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 2);
    return v;
  };
  char tag[5] = {0};
  in.read(tag, 4);
  if (std::string(tag) != "RIFF") throw Error("not a RIFF file: " + path);
  read_u32();
  in.read(tag, 4);
  if (std::string(tag) != "WAVE") throw Error("not a WAVE file: " + path);

  AudioWave wave;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const uint32_t chunk = read_u32();
    if (std::string(tag) == "fmt ") {
      const uint16_t format = read_u16();
      const uint16_t channels = read_u16();
      wave.sample_rate = int(read_u32());
      read_u32();  // byte rate
      read_u16();  // block align
      const uint16_t bits = read_u16();
      if (format != 1 || channels != 1 || bits != 16)
        throw Error("unsupported wav format (want PCM16 mono): " + path);
      if (chunk > 16) in.seekg(chunk - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::string(tag) == "data") {
      if (!have_fmt) throw Error("wav data before fmt chunk: " + path);
      std::vector<int16_t> raw(chunk / 2);
      in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(chunk));
      wave.samples.resize(raw.size());
      for (size_t i = 0; i < raw.size(); ++i) wave.samples[i] = float(raw[i]) / 32768.0f;
      return wave;
    } else {
      in.seekg(chunk + (chunk & 1), std::ios::cur);
    }
  }
  throw Error("wav has no data chunk: " + path);
}

inline void write_wav_pcm16(const std::string& path, const AudioWave& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write wav: " + path);
  auto w32 = [&out](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto w16 = [&out](uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  const uint32_t data_bytes = uint32_t(wave.samples.size() * 2);
  out.write("RIFF", 4);
  w32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  w32(16);
  w16(1);
  w16(1);
  w32(uint32_t(wave.sample_rate));
  w32(uint32_t(wave.sample_rate) * 2);
  w16(2);
  w16(16);
  out.write("data", 4);
  w32(data_bytes);
  for (float x : wave.samples) {
    const int v = int(std::lround(std::clamp(x, -1.0f, 1.0f) * 32767.0f));
    const int16_t s = int16_t(v);
    out.write(reinterpret_cast<const char*>(&s), 2);
  }
}

}  // namespace zeroavsr::frontend
