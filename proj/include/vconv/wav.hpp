#pragma once

#include <string>
#include <vector>

#include "vconv/errors.hpp"

namespace vconv {

// Time-domain audio. Samples live in [-1, 1]: clamped on write, NaN rejected
// on read.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;

  double seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { pcm16, float32 };

// PCM WAV (RIFF) reader. Accepts 16-bit integer and 32-bit float, mono or
// stereo (averaged to mono). Anything else raises UnsupportedWavError.
Waveform load_waveform(const std::string& path);

// Always writes mono; samples are clipped to [-1, 1].
void save_waveform(const std::string& path, const Waveform& w,
                   WavEncoding enc = WavEncoding::pcm16);

}  // namespace vconv
