#include "genadapt/features.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "genadapt/errors.hpp"
#include "genadapt/kernels.hpp"
#include "genadapt/rng.hpp"

namespace genadapt::features {

namespace {

constexpr double kPi = std::numbers::pi;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::size_t frame_len_samples(int sr, const FeatureConfig& cfg) {
  return static_cast<std::size_t>(std::lround(cfg.frame_length_ms * sr / 1000.0));
}

std::size_t frame_shift_samples(int sr, const FeatureConfig& cfg) {
  return static_cast<std::size_t>(std::lround(cfg.frame_shift_ms * sr / 1000.0));
}

}  // namespace

void FeatureConfig::validate(int sample_rate) const {
  if (n_mels < 1) throw ValidationError("features: n_mels must be >= 1");
  if (n_mfcc < 1 || n_mfcc > n_mels)
    throw ValidationError("features: n_mfcc must be in [1, n_mels]");
  if (frame_shift_ms > frame_length_ms)
    throw ValidationError("features: frame_shift must be <= frame_length");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0)
    throw ValidationError("features: fft_size must be a power of two");
  if (frame_len_samples(sample_rate, *this) > static_cast<std::size_t>(fft_size))
    throw ValidationError("features: frame longer than fft_size");
  const double fm = resolved_fmax(sample_rate);
  if (!(fmin < fm) || fm > sample_rate / 2.0)
    throw ValidationError("features: need fmin < fmax <= sample_rate/2");
  if (log_floor <= 0.0) throw ValidationError("features: log_floor must be positive");
}

double FeatureConfig::resolved_fmax(int sample_rate) const {
  return fmax > 0.0 ? fmax : sample_rate / 2.0;
}

std::string FeatureConfig::fingerprint() const {
  std::ostringstream os;
  os << "fbank:" << n_mels << ":" << n_mfcc << ":" << frame_length_ms << ":"
     << frame_shift_ms << ":" << fft_size << ":" << fmin << ":" << fmax << ":"
     << log_floor << ":" << preemphasis;
  std::ostringstream hex;
  hex << std::hex << fnv1a64(os.str());
  return hex.str();
}

std::size_t frame_count(std::size_t samples, int sample_rate, const FeatureConfig& cfg) {
  const std::size_t flen = frame_len_samples(sample_rate, cfg);
  const std::size_t fshift = frame_shift_samples(sample_rate, cfg);
  if (samples < flen)
    throw InputTooShortError("features: " + std::to_string(samples) +
                             " samples, need at least " + std::to_string(flen));
  return (samples - flen) / fshift + 1;
}

void fft_inplace(std::vector<std::complex<double>>& buf) {
  const std::size_t n = buf.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ContractError("fft: size must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = buf[i + k];
        const std::complex<double> v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> mel_center_freqs(const FeatureConfig& cfg, int sample_rate) {
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.resolved_fmax(sample_rate));
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
  for (int i = 0; i < cfg.n_mels; ++i) {
    const double m = mel_lo + (mel_hi - mel_lo) * (i + 1) / (cfg.n_mels + 1);
    centers[static_cast<std::size_t>(i)] = mel_to_hz(m);
  }
  return centers;
}

std::vector<double> mel_filterbank(const FeatureConfig& cfg, int sample_rate) {
  const std::size_t bins = static_cast<std::size_t>(cfg.fft_size) / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.resolved_fmax(sample_rate));
  // edge frequencies: n_mels + 2 points uniform in mel
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      (cfg.n_mels + 1));
  std::vector<double> weights(static_cast<std::size_t>(cfg.n_mels) * bins, 0.0);
  for (int f = 0; f < cfg.n_mels; ++f) {
    const double lo = edges[static_cast<std::size_t>(f)];
    const double mid = edges[static_cast<std::size_t>(f) + 1];
    const double hi = edges[static_cast<std::size_t>(f) + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double freq = static_cast<double>(b) * sample_rate / cfg.fft_size;
      double w = 0.0;
      if (freq > lo && freq < mid)
        w = (freq - lo) / (mid - lo);
      else if (freq >= mid && freq < hi)
        w = (hi - freq) / (hi - mid);
      weights[static_cast<std::size_t>(f) * bins + b] = w;
    }
  }
  return weights;
}

namespace {

// shared framing + power spectrum; rows of `powers` are |FFT|^2 per frame
std::vector<double> power_spectra(const Waveform& w, const FeatureConfig& cfg,
                                  std::size_t& frames_out) {
  if (w.samples.empty()) throw InputTooShortError("features: empty waveform");
  if (w.sample_rate <= 0) throw ValidationError("features: sample_rate must be positive");
  cfg.validate(w.sample_rate);
  const std::size_t flen = frame_len_samples(w.sample_rate, cfg);
  const std::size_t fshift = frame_shift_samples(w.sample_rate, cfg);
  const std::size_t frames = frame_count(w.samples.size(), w.sample_rate, cfg);
  const std::size_t bins = static_cast<std::size_t>(cfg.fft_size) / 2 + 1;

  // pre-emphasis over the whole signal, y[0] = x[0]
  std::vector<double> pre(w.samples.size());
  pre[0] = w.samples[0];
  for (std::size_t i = 1; i < pre.size(); ++i)
    pre[i] = w.samples[i] - cfg.preemphasis * w.samples[i - 1];

  std::vector<double> window(flen);
  for (std::size_t i = 0; i < flen; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                     static_cast<double>(flen - 1));

  std::vector<double> powers(frames * bins);
  kernels::parallel_for(frames, [&](std::size_t t) {
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size),
                                          {0.0, 0.0});
    const double* src = pre.data() + t * fshift;
    for (std::size_t i = 0; i < flen; ++i) buf[i] = src[i] * window[i];
    fft_inplace(buf);
    double* dst = powers.data() + t * bins;
    for (std::size_t b = 0; b < bins; ++b) dst[b] = std::norm(buf[b]);
  });
  frames_out = frames;
  return powers;
}

}  // namespace

FeatureMatrix log_mel_fbank(const Waveform& w, const FeatureConfig& cfg) {
  std::size_t frames = 0;
  const std::vector<double> powers = power_spectra(w, cfg, frames);
  const std::size_t bins = static_cast<std::size_t>(cfg.fft_size) / 2 + 1;
  const std::size_t mels = static_cast<std::size_t>(cfg.n_mels);
  const std::vector<double> fb = mel_filterbank(cfg, w.sample_rate);

  // energies[frames x mels] = powers[frames x bins] * fb^T
  std::vector<double> fbt(bins * mels);
  for (std::size_t m = 0; m < mels; ++m)
    for (std::size_t b = 0; b < bins; ++b) fbt[b * mels + m] = fb[m * bins + b];
  FeatureMatrix out;
  out.frames = frames;
  out.dim = mels;
  out.data.resize(frames * mels);
  out.config_fingerprint = cfg.fingerprint();
  kernels::matmul(powers.data(), fbt.data(), out.data.data(), frames, bins, mels);
  for (double& x : out.data) x = std::log(std::max(x, cfg.log_floor));
  return out;
}

FeatureMatrix mfcc(const Waveform& w, const FeatureConfig& cfg) {
  const FeatureMatrix mel = log_mel_fbank(w, cfg);
  const std::size_t n = mel.dim;
  const std::size_t k = static_cast<std::size_t>(cfg.n_mfcc);
  // orthonormal DCT-II matrix, applied as mel[frames x n] * dct^T
  std::vector<double> dct_t(n * k);
  for (std::size_t row = 0; row < k; ++row) {
    const double s = row == 0 ? std::sqrt(1.0 / static_cast<double>(n))
                              : std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t col = 0; col < n; ++col)
      dct_t[col * k + row] =
          s * std::cos(kPi * static_cast<double>(row) * (2.0 * col + 1.0) /
                       (2.0 * static_cast<double>(n)));
  }
  FeatureMatrix out;
  out.frames = mel.frames;
  out.dim = k;
  out.data.resize(mel.frames * k);
  out.config_fingerprint = cfg.fingerprint();
  kernels::matmul(mel.data.data(), dct_t.data(), out.data.data(), mel.frames, n, k);
  return out;
}

FeatureMatrix cmvn(const FeatureMatrix& f) {
  if (f.frames < 2)
    throw InputTooShortError("cmvn: need at least 2 frames, got " +
                             std::to_string(f.frames));
  FeatureMatrix out = f;
  const double n = static_cast<double>(f.frames);
  for (std::size_t d = 0; d < f.dim; ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < f.frames; ++t) mean += f.at(t, d);
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < f.frames; ++t) {
      const double c = f.at(t, d) - mean;
      var += c * c;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (std::size_t t = 0; t < f.frames; ++t)
      out.data[t * f.dim + d] = (f.at(t, d) - mean) * inv;
  }
  return out;
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("features: cannot write " + path.string());
  out.write("GAFM", 4);
  const std::uint32_t t = static_cast<std::uint32_t>(f.frames);
  const std::uint32_t d = static_cast<std::uint32_t>(f.dim);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(double)));
  if (!out) throw IoError("features: short write to " + path.string());
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("features: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GAFM", 4) != 0)
    throw FormatError("features: bad magic in " + path.string());
  std::uint32_t t = 0, d = 0;
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || t == 0 || d == 0) throw FormatError("features: bad header in " + path.string());
  FeatureMatrix f;
  f.frames = t;
  f.dim = d;
  f.data.resize(static_cast<std::size_t>(t) * d);
  in.read(reinterpret_cast<char*>(f.data.data()),
          static_cast<std::streamsize>(f.data.size() * sizeof(double)));
  if (!in) throw FormatError("features: truncated payload in " + path.string());
  return f;
}

}  // namespace genadapt::features
