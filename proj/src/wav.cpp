#include "vconv/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace vconv {

namespace {

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, uint32_t x) {
  out.push_back(x & 0xff);
  out.push_back((x >> 8) & 0xff);
  out.push_back((x >> 16) & 0xff);
  out.push_back((x >> 24) & 0xff);
}

void put_u16(std::vector<unsigned char>& out, uint16_t x) {
  out.push_back(x & 0xff);
  out.push_back((x >> 8) & 0xff);
}

}  // namespace

Waveform load_waveform(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingFileError("no such file: " + path);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw MalformedWavError("not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  size_t data_off = 0, data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    uint32_t chunk_len = read_u32(hdr + 4);
    size_t body = pos + 8;
    if (body + chunk_len > bytes.size()) {
      throw MalformedWavError("truncated chunk in: " + path);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw MalformedWavError("short fmt chunk in: " + path);
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_off == 0) {
    throw MalformedWavError("missing fmt or data chunk in: " + path);
  }
  if (rate == 0) throw MalformedWavError("zero sample rate in: " + path);
  if (channels < 1 || channels > 2) {
    throw UnsupportedWavError("unsupported channel count " + std::to_string(channels) +
                              " in: " + path);
  }

  bool is_pcm16 = (format == 1 && bits == 16);
  bool is_f32 = (format == 3 && bits == 32);
  if (!is_pcm16 && !is_f32) {
    throw UnsupportedWavError("unsupported encoding (format " + std::to_string(format) +
                              ", " + std::to_string(bits) + " bit) in: " + path);
  }

  size_t bytes_per_sample = bits / 8;
  size_t frame_size = bytes_per_sample * channels;
  size_t frames = data_len / frame_size;

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  const unsigned char* d = bytes.data() + data_off;
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* s = d + i * frame_size + c * bytes_per_sample;
      double x;
      if (is_pcm16) {
        int16_t raw = static_cast<int16_t>(s[0] | (s[1] << 8));
        x = static_cast<double>(raw) / 32768.0;
      } else {
        uint32_t u = read_u32(s);
        float f;
        std::memcpy(&f, &u, 4);
        if (std::isnan(f)) throw DataError("NaN sample in: " + path);
        x = static_cast<double>(f);
      }
      acc += x;
    }
    double m = acc / channels;
    w.samples[i] = std::clamp(m, -1.0, 1.0);
  }
  return w;
}

void save_waveform(const std::string& path, const Waveform& w, WavEncoding enc) {
  if (w.sample_rate <= 0) throw DataError("waveform has no sample rate");
  std::vector<unsigned char> out;
  uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  uint16_t format = enc == WavEncoding::pcm16 ? 1 : 3;
  uint32_t data_len = static_cast<uint32_t>(w.samples.size() * (bits / 8));

  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, 1);  // mono always
  put_u32(out, static_cast<uint32_t>(w.sample_rate));
  put_u32(out, static_cast<uint32_t>(w.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_len);

  for (double x : w.samples) {
    double c = std::clamp(x, -1.0, 1.0);
    if (enc == WavEncoding::pcm16) {
      // same 1/32768 scale as the reader, so round trips stay within one step
      int v = static_cast<int>(std::lrint(c * 32768.0));
      v = std::clamp(v, -32768, 32767);
      put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
    } else {
      float f = static_cast<float>(c);
      uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(out, u);
    }
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write: " + path);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) throw DataError("write failed: " + path);
}

}  // namespace vconv
