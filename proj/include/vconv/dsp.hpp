#pragma once

#include <string>
#include <vector>

#include "vconv/mat.hpp"
#include "vconv/wav.hpp"

namespace vconv {

struct DspParams {
  int sample_rate = 16000;
  int fft_size = 512;
  int win_length = 256;
  int hop_length = 64;
  int mel_count = 40;
  double fmin = 40.0;
  double fmax = 7600.0;

  void validate() const;
};

// Log-mel energies (natural log, floored at kMelFloor before the log).
struct MelSpectrogram {
  Mat frames;  // T x mel_count
  int frame_hop = 0;
  int sample_rate = 0;
  int mel_count = 0;
};

inline constexpr double kMelFloor = 1e-5;

// No-padding framing: frames start at sample 0 and stride by hop.
inline int frame_count(size_t samples, int win_length, int hop_length) {
  if (samples < static_cast<size_t>(win_length)) return 0;
  return 1 + static_cast<int>((samples - win_length) / hop_length);
}

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filterbank on the HTK mel scale. Returns mel_count rows of
// (fft_size/2 + 1) weights. Filters are zero outside [fmin, fmax].
Mat mel_filterbank(const DspParams& p);

// Center frequencies (Hz) of the mel filters, one per filter.
std::vector<double> mel_center_frequencies(const DspParams& p);

// DFT matrices for a win_length-point frame zero-padded to fft_size:
// cos_mat/sin_mat are win_length x (fft_size/2 + 1); X[k] = sum_n x[n]
// (cos - i sin). Shared by the plain path below and the training tape.
void dft_matrices(int win_length, int fft_size, Mat* cos_mat, Mat* sin_mat);

std::vector<double> hann_window(int win_length);

// Windowed-sinc polyphase resampler (Kaiser window, cutoff at 90% of the
// lower Nyquist). Identity when target_rate equals the input rate.
Waveform resample(const Waveform& w, int target_rate);

// Splits into clip_seconds-long clips; a trailing remainder shorter than
// 0.5 s is dropped, otherwise kept as a short final clip.
std::vector<Waveform> slice_clips(const Waveform& w, double clip_seconds = 5.0);

// Hann window, power spectrum, triangular mel filterbank, natural log with a
// 1e-5 floor. Requires len(w) >= win_length.
MelSpectrogram mel_spectrogram(const Waveform& w, const DspParams& p);

// Diagnostics: CSV (rows = frames) and 8-bit grayscale PGM (P5, rows = mel
// bins, low bin at the bottom).
void write_mel_csv(const std::string& path, const MelSpectrogram& m);
void write_mel_pgm(const std::string& path, const MelSpectrogram& m);

}  // namespace vconv
