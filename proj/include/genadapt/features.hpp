#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "genadapt/wav.hpp"

namespace genadapt::features {

struct FeatureConfig {
  int n_mels = 80;
  int n_mfcc = 13;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  int fft_size = 512;
  double fmin = 20.0;
  double fmax = 0.0;  // 0 -> Nyquist at extraction time
  double log_floor = 1e-10;
  double preemphasis = 0.97;

  void validate(int sample_rate) const;
  double resolved_fmax(int sample_rate) const;
  std::string fingerprint() const;
};

struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // row-major frames x dim
  std::string config_fingerprint;

  double at(std::size_t t, std::size_t d) const { return data[t * dim + d]; }
};

// frame count for a signal of `samples` at the config's framing; throws
// InputTooShortError below one frame
std::size_t frame_count(std::size_t samples, int sample_rate, const FeatureConfig& cfg);

// radix-2 FFT, n a power of two; in-place on the buffer
void fft_inplace(std::vector<std::complex<double>>& buf);

// triangular mel filterbank [n_mels x (fft_size/2 + 1)]
std::vector<double> mel_filterbank(const FeatureConfig& cfg, int sample_rate);
std::vector<double> mel_center_freqs(const FeatureConfig& cfg, int sample_rate);

FeatureMatrix log_mel_fbank(const Waveform& w, const FeatureConfig& cfg);
FeatureMatrix mfcc(const Waveform& w, const FeatureConfig& cfg);

// per-utterance mean/variance normalization over time, variance floor 1e-8
FeatureMatrix cmvn(const FeatureMatrix& f);

// "GAFM" cache file: magic, u32 frames, u32 dim, float64 row-major, little-endian
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& f);
FeatureMatrix read_feature_file(const std::filesystem::path& path);

}  // namespace genadapt::features
