#include "genadapt/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "genadapt/errors.hpp"

namespace genadapt::features {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void wr_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("wav: missing RIFF/WAVE header in " + path.string());

  bool have_fmt = false;
  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = rd_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size())
      throw FormatError("wav: truncated chunk '" + std::string(tag, 4) + "'");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("wav: fmt chunk too short");
      audio_format = rd_u16(bytes.data() + body);
      channels = rd_u16(bytes.data() + body + 2);
      sample_rate = rd_u32(bytes.data() + body + 4);
      bits = rd_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt) throw FormatError("wav: fmt chunk missing");
  if (audio_format != 1)
    throw FormatError("wav: audio_format=" + std::to_string(audio_format) +
                      ", expected PCM (1)");
  if (channels != 1)
    throw FormatError("wav: channels=" + std::to_string(channels) + ", expected mono");
  if (bits != 16)
    throw FormatError("wav: bits_per_sample=" + std::to_string(bits) + ", expected 16");
  if (sample_rate == 0) throw FormatError("wav: sample_rate=0");
  if (data == nullptr) throw FormatError("wav: data chunk missing");
  if (data_len % 2 != 0) throw FormatError("wav: odd data chunk length");

  Waveform w;
  w.sample_rate = static_cast<int>(sample_rate);
  const std::size_t n = data_len / 2;
  if (n == 0) throw FormatError("wav: empty data chunk");
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int16_t s =
        static_cast<std::int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.samples.empty()) throw ContractError("wav: refusing to write empty waveform");
  std::vector<unsigned char> b;
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  b.reserve(44 + data_len);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  wr_u32(b, 36 + data_len);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr_u32(b, 16);
  wr_u16(b, 1);  // PCM
  wr_u16(b, 1);  // mono
  wr_u32(b, static_cast<std::uint32_t>(w.sample_rate));
  wr_u32(b, static_cast<std::uint32_t>(w.sample_rate * 2));
  wr_u16(b, 2);
  wr_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  wr_u32(b, data_len);
  for (double x : w.samples) {
    const double clamped = std::clamp(x, -1.0, 1.0);
    const std::int16_t s = static_cast<std::int16_t>(std::lrint(clamped * 32767.0));
    b.push_back(static_cast<unsigned char>(s & 0xff));
    b.push_back(static_cast<unsigned char>((s >> 8) & 0xff));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("wav: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("wav: short write to " + path.string());
}

}  // namespace genadapt::features
