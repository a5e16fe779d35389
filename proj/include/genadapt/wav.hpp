#pragma once

#include <filesystem>
#include <vector>

namespace genadapt::features {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

// PCM 16-bit mono only; anything else is a FormatError naming the bad field.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace genadapt::features
