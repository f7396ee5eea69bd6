#include "avsa/audio.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "avsa/error.h"

namespace avsa {

void validate_clip(const AudioClip& clip) {
  if (clip.samples.empty()) throw LengthError("audio clip is empty");
  if (clip.sample_rate <= 0)
    throw DataError("sample rate must be positive, got " + std::to_string(clip.sample_rate));
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    if (!std::isfinite(clip.samples[i]))
      throw DataError("non-finite sample at index " + std::to_string(i));
  }
}

double energy(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthError("dot product of unequal lengths");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

AudioClip mix(const std::vector<AudioClip>& clips) {
  if (clips.empty()) throw LengthError("mix needs at least one clip");
  AudioClip out = clips.front();
  for (size_t c = 1; c < clips.size(); ++c) {
    const AudioClip& clip = clips[c];
    if (clip.sample_rate != out.sample_rate)
      throw DataError("mix: sample rate mismatch (" + std::to_string(clip.sample_rate) +
                      " vs " + std::to_string(out.sample_rate) + ")");
    if (clip.size() != out.size())
      throw LengthError("mix: clip " + std::to_string(c) + " has " +
                        std::to_string(clip.size()) + " samples, expected " +
                        std::to_string(out.size()));
    for (size_t i = 0; i < out.size(); ++i) out.samples[i] += clip.samples[i];
  }
  return out;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

void write_wav(const std::string& path, const AudioClip& clip, WavEncoding encoding) {
  validate_clip(clip);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  const uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const uint16_t block_align = bits / 8;
  const uint32_t data_bytes = static_cast<uint32_t>(clip.size() * block_align);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32(os, 16);
  put_u16(os, encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat);
  put_u16(os, 1);
  put_u32(os, static_cast<uint32_t>(clip.sample_rate));
  put_u32(os, static_cast<uint32_t>(clip.sample_rate) * block_align);
  put_u16(os, block_align);
  put_u16(os, bits);
  os.write("data", 4);
  put_u32(os, data_bytes);
  if (encoding == WavEncoding::kPcm16) {
    for (double s : clip.samples) {
      double v = std::round(std::clamp(s, -1.0, 1.0) * 32767.0);
      put_u16(os, static_cast<uint16_t>(static_cast<int16_t>(v)));
    }
  } else {
    for (double s : clip.samples) {
      float f = static_cast<float>(s);
      uint32_t bitsv;
      std::memcpy(&bitsv, &f, 4);
      put_u32(os, bitsv);
    }
  }
  if (!os) throw DataError("write failed for " + path);
}

AudioClip read_wav(const std::string& path, int expected_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError(path + ": not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    uint32_t size = get_u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) size = static_cast<uint32_t>(bytes.size() - pos - 8);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = get_u16(chunk + 8);
      channels = get_u16(chunk + 10);
      rate = get_u32(chunk + 12);
      bits = get_u16(chunk + 22);
      if (format == kFormatExtensible && size >= 26) format = get_u16(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (format == 0 || data == nullptr) throw DataError(path + ": missing fmt or data chunk");
  if (channels != 1)
    throw DataError(path + ": expected mono, got " + std::to_string(channels) + " channels");
  if (expected_rate > 0 && static_cast<int>(rate) != expected_rate)
    throw DataError(path + ": sample rate " + std::to_string(rate) + " does not match " +
                    std::to_string(expected_rate));

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  if (format == kFormatPcm && bits == 16) {
    clip.samples.resize(data_size / 2);
    for (size_t i = 0; i < clip.samples.size(); ++i)
      clip.samples[i] = static_cast<int16_t>(get_u16(data + 2 * i)) / 32768.0;
  } else if (format == kFormatFloat && bits == 32) {
    clip.samples.resize(data_size / 4);
    for (size_t i = 0; i < clip.samples.size(); ++i) {
      uint32_t bitsv = get_u32(data + 4 * i);
      float f;
      std::memcpy(&f, &bitsv, 4);
      clip.samples[i] = f;
    }
  } else {
    throw DataError(path + ": unsupported encoding (format " + std::to_string(format) +
                    ", " + std::to_string(bits) + " bits)");
  }
  validate_clip(clip);
  return clip;
}

}  // namespace avsa
