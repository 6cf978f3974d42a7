#pragma once

#include <string>
#include <vector>

#include "vconv/dsp.hpp"
#include "vconv/mat.hpp"
#include "vconv/wav.hpp"

namespace vconv {

// Per-frame fundamental frequency. f0_hz[i] == 0 exactly when voiced[i] is
// false; voiced values lie in [f_floor, f_ceiling].
struct F0Contour {
  std::vector<double> f0_hz;
  std::vector<uint8_t> voiced;
  int frame_hop = 0;
  int sample_rate = 0;

  int frames() const { return static_cast<int>(f0_hz.size()); }
};

struct PitchParams {
  double f_floor = 65.0;
  double f_ceiling = 1047.0;
  double yin_threshold = 0.15;
  int window = 1024;

  void validate(int sample_rate) const;
};

// Saved forward state of one YIN frame, enough to replay the local gradient.
struct YinFrameState {
  bool voiced = false;
  double f0 = 0.0;
  int tau = 0;          // integer lag of the chosen minimum
  bool interp = false;  // parabolic interpolation applied
  bool clamped = false; // f0 hit the [f_floor, f_ceiling] clamp
  double delta = 0.0;
  double d_raw[3] = {0, 0, 0};  // d(tau-1), d(tau), d(tau+1)
  double cum[3] = {0, 0, 0};    // cumulative sums at those lags
};

// YIN lag search bounds for a given config.
int yin_tau_min(const PitchParams& p, int sample_rate);
int yin_tau_max(const PitchParams& p, int sample_rate);

// One YIN frame over x[0 .. p.window): difference function, cumulative mean
// normalization, absolute-threshold pick, parabolic interpolation.
YinFrameState yin_frame(const double* x, const PitchParams& p, int sample_rate);

// Accumulates d(loss)/d(x[j]) for j in [0, p.window) given d(loss)/d(f0).
// The integer lag, voicing decision and clamp are treated as constants of the
// forward pass.
void yin_frame_backward(const double* x, const PitchParams& p, int sample_rate,
                        const YinFrameState& st, double grad_f0, double* grad_x);

// One estimate per hop; frame t reads samples [t*hop, t*hop + window).
// T = 1 + (len - window) / hop. Requires len >= window.
F0Contour estimate_f0(const Waveform& w, const PitchParams& p, int hop,
                      std::vector<YinFrameState>* states = nullptr);

// Pads the waveform by (p.window - dsp.win_length) zeros, split evenly, so
// the contour has exactly as many frames as mel_spectrogram(w, dsp), centers
// aligned. Requires p.window >= dsp.win_length.
F0Contour estimate_f0_mel_aligned(const Waveform& w, const PitchParams& p, const DspParams& dsp);

// Voiced frames map f -> scale * f * 2^(semitones/12), then clamp back into
// [f_floor, f_ceiling]. Unvoiced frames and flags are untouched.
F0Contour shift_scale_f0(const F0Contour& c, double semitones, double scale, const PitchParams& p);

// Two channels per frame: standardized log-f0 over this contour's voiced
// frames (0 when unvoiced or fewer than 2 voiced frames) and a voiced flag.
Mat normalize_f0(const F0Contour& c);

// Median over voiced frames; returns false if there are none.
bool median_voiced_log_f0(const F0Contour& c, double* out);

// CSV rows: frame_index, f0_hz, voiced.
void write_f0_csv(const std::string& path, const F0Contour& c);

}  // namespace vconv
