#include "vconv/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "vconv/errors.hpp"

namespace vconv {

void DspParams::validate() const {
  if (sample_rate <= 0) throw ConfigError("dsp.sample_rate must be positive");
  if (!(hop_length <= win_length && win_length <= fft_size)) {
    throw ConfigError("dsp constraint violated: need dsp.hop_length <= dsp.win_length <= dsp.fft_size");
  }
  if (hop_length <= 0) throw ConfigError("dsp.hop_length must be positive");
  if (mel_count <= 0) throw ConfigError("dsp.mel_count must be positive");
  if (!(fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("dsp constraint violated: need dsp.fmin < dsp.fmax <= dsp.sample_rate/2");
  }
  if (fmin < 0) throw ConfigError("dsp.fmin must be non-negative");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Mat mel_filterbank(const DspParams& p) {
  int bins = p.fft_size / 2 + 1;
  Mat fb(p.mel_count, bins);
  double mel_lo = hz_to_mel(p.fmin);
  double mel_hi = hz_to_mel(p.fmax);
  double step = (mel_hi - mel_lo) / (p.mel_count + 1);
  for (int m = 0; m < p.mel_count; ++m) {
    double left = mel_lo + step * m;
    double center = left + step;
    double right = center + step;
    for (int k = 0; k < bins; ++k) {
      double f = static_cast<double>(k) * p.sample_rate / p.fft_size;
      if (f < p.fmin || f > p.fmax) continue;
      double mel = hz_to_mel(f);
      double w = 0.0;
      if (mel >= left && mel <= center) {
        w = (mel - left) / step;
      } else if (mel > center && mel <= right) {
        w = (right - mel) / step;
      }
      fb.at(m, k) = w;
    }
  }
  return fb;
}

std::vector<double> mel_center_frequencies(const DspParams& p) {
  std::vector<double> centers(p.mel_count);
  double mel_lo = hz_to_mel(p.fmin);
  double mel_hi = hz_to_mel(p.fmax);
  double step = (mel_hi - mel_lo) / (p.mel_count + 1);
  for (int m = 0; m < p.mel_count; ++m) centers[m] = mel_to_hz(mel_lo + step * (m + 1));
  return centers;
}

void dft_matrices(int win_length, int fft_size, Mat* cos_mat, Mat* sin_mat) {
  int bins = fft_size / 2 + 1;
  *cos_mat = Mat(win_length, bins);
  *sin_mat = Mat(win_length, bins);
  const double two_pi = 6.283185307179586476925287;
  for (int n = 0; n < win_length; ++n) {
    for (int k = 0; k < bins; ++k) {
      double ang = two_pi * n * k / fft_size;
      cos_mat->at(n, k) = std::cos(ang);
      sin_mat->at(n, k) = std::sin(ang);
    }
  }
}

std::vector<double> hann_window(int win_length) {
  std::vector<double> w(win_length);
  const double two_pi = 6.283185307179586476925287;
  for (int n = 0; n < win_length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(two_pi * n / win_length);
  }
  return w;
}

namespace {

double bessel_i0(double x) {
  // Series expansion; converges fast for the beta used here.
  double sum = 1.0, term = 1.0;
  double half_sq = 0.25 * x * x;
  for (int k = 1; k < 64; ++k) {
    term *= half_sq / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  double px = 3.141592653589793238463 * x;
  return std::sin(px) / px;
}

}  // namespace

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (w.sample_rate <= 0) throw DataError("resample: waveform has no sample rate");
  if (target_rate == w.sample_rate) {
    Waveform out = w;
    return out;
  }
  int64_t g = std::gcd(static_cast<int64_t>(w.sample_rate), static_cast<int64_t>(target_rate));
  int64_t up = target_rate / g;
  int64_t down = w.sample_rate / g;

  // Cutoff at 90% of the lower Nyquist, normalized to the input rate.
  double fc = 0.45 * std::min(1.0, static_cast<double>(up) / down);
  const double beta = 8.6;
  int half = static_cast<int>(std::ceil(16.0 / (2.0 * fc)));
  int taps = 2 * half + 1;

  // Phase p of output sample k (p = k*down mod up) reads input samples
  // [q-half, q+half] with q = (k*down - p)/up and kernel offsets j - p/up.
  double i0b = bessel_i0(beta);
  std::vector<std::vector<double>> phase_taps(static_cast<size_t>(up));
  for (int64_t p = 0; p < up; ++p) {
    auto& t = phase_taps[static_cast<size_t>(p)];
    t.resize(static_cast<size_t>(taps));
    double frac = static_cast<double>(p) / static_cast<double>(up);
    double sum = 0.0;
    for (int j = -half; j <= half; ++j) {
      double x = static_cast<double>(j) - frac;
      double win = 0.0;
      double u = x / half;
      if (u > -1.0 && u < 1.0) win = bessel_i0(beta * std::sqrt(1.0 - u * u)) / i0b;
      double v = 2.0 * fc * sinc(2.0 * fc * x) * win;
      t[static_cast<size_t>(j + half)] = v;
      sum += v;
    }
    // Per-phase DC normalization.
    for (auto& v : t) v /= sum;
  }

  int64_t in_len = static_cast<int64_t>(w.samples.size());
  int64_t out_len = (in_len * up + down / 2) / down;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t k = 0; k < out_len; ++k) {
    int64_t num = k * down;
    int64_t p = num % up;
    int64_t q = num / up;
    const auto& t = phase_taps[static_cast<size_t>(p)];
    double acc = 0.0;
    int64_t n0 = q - half;
    int64_t lo = std::max<int64_t>(0, -n0);
    int64_t hi = std::min<int64_t>(taps, in_len - n0);
    const double* x = w.samples.data() + n0;
    for (int64_t j = lo; j < hi; ++j) acc += x[j] * t[static_cast<size_t>(j)];
    out.samples[static_cast<size_t>(k)] = acc;
  }
  return out;
}

std::vector<Waveform> slice_clips(const Waveform& w, double clip_seconds) {
  if (clip_seconds <= 0) throw ConfigError("slice_clips: clip_seconds must be positive");
  std::vector<Waveform> clips;
  if (w.samples.empty()) return clips;
  size_t clip_len = static_cast<size_t>(std::llround(clip_seconds * w.sample_rate));
  if (clip_len == 0) throw ConfigError("slice_clips: clip shorter than one sample");
  size_t min_tail = static_cast<size_t>(std::llround(0.5 * w.sample_rate));
  size_t pos = 0;
  while (w.samples.size() - pos >= clip_len) {
    Waveform c;
    c.sample_rate = w.sample_rate;
    c.samples.assign(w.samples.begin() + pos, w.samples.begin() + pos + clip_len);
    clips.push_back(std::move(c));
    pos += clip_len;
  }
  size_t rem = w.samples.size() - pos;
  if (rem >= min_tail && rem > 0) {
    Waveform c;
    c.sample_rate = w.sample_rate;
    c.samples.assign(w.samples.begin() + pos, w.samples.end());
    clips.push_back(std::move(c));
  }
  return clips;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const DspParams& p) {
  p.validate();
  if (w.samples.size() < static_cast<size_t>(p.win_length)) {
    throw DataError("mel_spectrogram: input shorter than win_length");
  }
  int t_count = frame_count(w.samples.size(), p.win_length, p.hop_length);
  int bins = p.fft_size / 2 + 1;

  Mat cos_mat, sin_mat;
  dft_matrices(p.win_length, p.fft_size, &cos_mat, &sin_mat);
  std::vector<double> hann = hann_window(p.win_length);
  Mat fb = mel_filterbank(p);
  // Transposed filterbank so frames can right-multiply it.
  Mat fb_t(fb.cols, fb.rows);
  for (int m = 0; m < fb.rows; ++m)
    for (int k = 0; k < fb.cols; ++k) fb_t.at(k, m) = fb.at(m, k);

  MelSpectrogram out;
  out.frame_hop = p.hop_length;
  out.sample_rate = p.sample_rate;
  out.mel_count = p.mel_count;
  out.frames = Mat(t_count, p.mel_count);

  // Blocked so long inputs stay in a bounded footprint; results per row are
  // independent of the block split.
  const int block = 512;
  Mat windowed(std::min(block, t_count), p.win_length);
  Mat re(windowed.rows, bins), im(windowed.rows, bins), power(windowed.rows, bins);
  for (int t0 = 0; t0 < t_count; t0 += block) {
    int tb = std::min(block, t_count - t0);
    for (int t = 0; t < tb; ++t) {
      const double* src = w.samples.data() + static_cast<size_t>(t0 + t) * p.hop_length;
      double* dst = windowed.row(t);
      for (int n = 0; n < p.win_length; ++n) dst[n] = src[n] * hann[n];
    }
    lin::matmul(windowed.v.data(), cos_mat.v.data(), re.v.data(), tb, p.win_length, bins);
    lin::matmul(windowed.v.data(), sin_mat.v.data(), im.v.data(), tb, p.win_length, bins);
    for (int t = 0; t < tb; ++t) {
      const double* r = re.row(t);
      const double* i = im.row(t);
      double* pw = power.row(t);
      for (int k = 0; k < bins; ++k) pw[k] = r[k] * r[k] + i[k] * i[k];
    }
    lin::matmul(power.v.data(), fb_t.v.data(), out.frames.row(t0), tb, bins, p.mel_count);
  }
  for (auto& x : out.frames.v) x = std::log(std::max(x, kMelFloor));
  return out;
}

void write_mel_csv(const std::string& path, const MelSpectrogram& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write: " + path);
  char buf[32];
  for (int t = 0; t < m.frames.rows; ++t) {
    const double* r = m.frames.row(t);
    for (int c = 0; c < m.frames.cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", r[c]);
      os << buf << (c + 1 == m.frames.cols ? '\n' : ',');
    }
  }
}

void write_mel_pgm(const std::string& path, const MelSpectrogram& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write: " + path);
  double lo = m.frames.v.empty() ? 0.0 : *std::min_element(m.frames.v.begin(), m.frames.v.end());
  double hi = m.frames.v.empty() ? 1.0 : *std::max_element(m.frames.v.begin(), m.frames.v.end());
  double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  os << "P5\n" << m.frames.rows << " " << m.frames.cols << "\n255\n";
  // Rows of the image are mel bins, highest bin on top.
  for (int c = m.frames.cols - 1; c >= 0; --c) {
    for (int t = 0; t < m.frames.rows; ++t) {
      int v = static_cast<int>((m.frames.at(t, c) - lo) * scale);
      os.put(static_cast<char>(std::clamp(v, 0, 255)));
    }
  }
}

}  // namespace vconv
