#include "vconv/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vconv/errors.hpp"

namespace vconv {

void PitchParams::validate(int sample_rate) const {
  if (!(f_floor < f_ceiling && f_ceiling <= sample_rate / 2.0)) {
    throw ConfigError("pitch constraint violated: need pitch.f_floor < pitch.f_ceiling <= dsp.sample_rate/2");
  }
  if (f_floor <= 0) throw ConfigError("pitch.f_floor must be positive");
  if (!(yin_threshold > 0.0 && yin_threshold < 1.0)) {
    throw ConfigError("pitch.yin_threshold must lie in (0, 1)");
  }
  int tau_max = static_cast<int>(std::ceil(sample_rate / f_floor));
  if (window - tau_max < 32) {
    throw ConfigError("pitch.window too small for pitch.f_floor: need window - sample_rate/f_floor >= 32");
  }
}

int yin_tau_min(const PitchParams& p, int sample_rate) {
  return std::max(2, static_cast<int>(std::floor(sample_rate / p.f_ceiling)));
}

int yin_tau_max(const PitchParams& p, int sample_rate) {
  return static_cast<int>(std::ceil(sample_rate / p.f_floor));
}

YinFrameState yin_frame(const double* x, const PitchParams& p, int sample_rate) {
  int tau_max = yin_tau_max(p, sample_rate);
  int tau_min = yin_tau_min(p, sample_rate);
  int w = p.window - tau_max;  // integration width

  std::vector<double> d(static_cast<size_t>(tau_max) + 1, 0.0);
  for (int tau = 1; tau <= tau_max; ++tau) {
    double acc = 0.0;
    const double* a = x;
    const double* b = x + tau;
    for (int j = 0; j < w; ++j) {
      double diff = a[j] - b[j];
      acc += diff * diff;
    }
    d[static_cast<size_t>(tau)] = acc;
  }

  // Cumulative mean normalized difference.
  std::vector<double> cum(static_cast<size_t>(tau_max) + 1, 0.0);
  std::vector<double> nd(static_cast<size_t>(tau_max) + 1, 1.0);
  double run = 0.0;
  for (int tau = 1; tau <= tau_max; ++tau) {
    run += d[static_cast<size_t>(tau)];
    cum[static_cast<size_t>(tau)] = run;
    nd[static_cast<size_t>(tau)] = run > 1e-30 ? d[static_cast<size_t>(tau)] * tau / run : 1.0;
  }

  // First dip under the threshold, descended to its local minimum; otherwise
  // the global minimum (unvoiced).
  YinFrameState st;
  int tau_star = -1;
  for (int tau = tau_min; tau <= tau_max; ++tau) {
    if (nd[static_cast<size_t>(tau)] < p.yin_threshold) {
      while (tau + 1 <= tau_max && nd[static_cast<size_t>(tau + 1)] < nd[static_cast<size_t>(tau)]) ++tau;
      tau_star = tau;
      break;
    }
  }
  if (tau_star < 0) {
    int best = tau_min;
    for (int tau = tau_min + 1; tau <= tau_max; ++tau) {
      if (nd[static_cast<size_t>(tau)] < nd[static_cast<size_t>(best)]) best = tau;
    }
    st.voiced = false;
    st.tau = best;
    st.f0 = 0.0;
    return st;
  }

  st.voiced = true;
  st.tau = tau_star;
  double period = static_cast<double>(tau_star);
  if (tau_star - 1 >= 1 && tau_star + 1 <= tau_max) {
    double y1 = nd[static_cast<size_t>(tau_star - 1)];
    double y2 = nd[static_cast<size_t>(tau_star)];
    double y3 = nd[static_cast<size_t>(tau_star + 1)];
    double den = y1 - 2.0 * y2 + y3;
    if (std::abs(den) > 1e-18) {
      double delta = 0.5 * (y1 - y3) / den;
      if (delta > 1.0) delta = 1.0;
      if (delta < -1.0) delta = -1.0;
      st.interp = true;
      st.delta = delta;
      period += delta;
      for (int i = 0; i < 3; ++i) {
        st.d_raw[i] = d[static_cast<size_t>(tau_star - 1 + i)];
        st.cum[i] = cum[static_cast<size_t>(tau_star - 1 + i)];
      }
    }
  }

  double f0 = sample_rate / period;
  if (f0 < p.f_floor) {
    f0 = p.f_floor;
    st.clamped = true;
  } else if (f0 > p.f_ceiling) {
    f0 = p.f_ceiling;
    st.clamped = true;
  }
  st.f0 = f0;
  return st;
}

void yin_frame_backward(const double* x, const PitchParams& p, int sample_rate,
                        const YinFrameState& st, double grad_f0, double* grad_x) {
  if (!st.voiced || !st.interp || st.clamped || grad_f0 == 0.0) return;
  if (std::abs(st.delta) >= 1.0) return;  // delta clamp active: locally constant

  int tau_max = yin_tau_max(p, sample_rate);
  int w = p.window - tau_max;
  int tau_star = st.tau;

  double period = tau_star + st.delta;
  double g_delta = grad_f0 * (-static_cast<double>(sample_rate) / (period * period));

  // delta = 0.5 (y1 - y3) / (y1 - 2 y2 + y3) on the normalized values.
  double y1 = st.d_raw[0] * (tau_star - 1) / st.cum[0];
  double y2 = st.d_raw[1] * tau_star / st.cum[1];
  double y3 = st.d_raw[2] * (tau_star + 1) / st.cum[2];
  double a = y1 - y3;
  double b = y1 - 2.0 * y2 + y3;
  if (std::abs(b) <= 1e-18) return;
  double gy1 = g_delta * 0.5 * (b - a) / (b * b);
  double gy2 = g_delta * a / (b * b);
  double gy3 = g_delta * (-0.5) * (a + b) / (b * b);

  // y_i = d(tau_i) * tau_i / C(tau_i) with C the cumulative sum, so each y_i
  // contributes a spike at u == tau_i and a uniform term over u <= tau_i.
  int lags[3] = {tau_star - 1, tau_star, tau_star + 1};
  double gys[3] = {gy1, gy2, gy3};
  std::vector<double> g_d(static_cast<size_t>(tau_star) + 2, 0.0);
  for (int i = 0; i < 3; ++i) {
    int tau_i = lags[i];
    double c = st.cum[i];
    double spike = gys[i] * tau_i / c;
    double uniform = -gys[i] * st.d_raw[i] * tau_i / (c * c);
    g_d[static_cast<size_t>(tau_i)] += spike;
    for (int u = 1; u <= tau_i; ++u) g_d[static_cast<size_t>(u)] += uniform;
  }

  for (int u = 1; u <= tau_star + 1; ++u) {
    double gu = g_d[static_cast<size_t>(u)];
    if (gu == 0.0) continue;
    const double* a0 = x;
    const double* b0 = x + u;
    for (int j = 0; j < w; ++j) {
      double diff = a0[j] - b0[j];
      grad_x[j] += gu * 2.0 * diff;
      grad_x[j + u] -= gu * 2.0 * diff;
    }
  }
}

F0Contour estimate_f0(const Waveform& w, const PitchParams& p, int hop,
                      std::vector<YinFrameState>* states) {
  p.validate(w.sample_rate);
  if (hop <= 0) throw ConfigError("estimate_f0: hop must be positive");
  if (w.samples.size() < static_cast<size_t>(p.window)) {
    throw DataError("estimate_f0: input shorter than pitch.window");
  }
  int t_count = 1 + static_cast<int>((w.samples.size() - p.window) / hop);
  F0Contour c;
  c.frame_hop = hop;
  c.sample_rate = w.sample_rate;
  c.f0_hz.resize(static_cast<size_t>(t_count));
  c.voiced.resize(static_cast<size_t>(t_count));
  if (states) states->resize(static_cast<size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    YinFrameState st = yin_frame(w.samples.data() + static_cast<size_t>(t) * hop, p, w.sample_rate);
    c.f0_hz[static_cast<size_t>(t)] = st.f0;
    c.voiced[static_cast<size_t>(t)] = st.voiced ? 1 : 0;
    if (states) (*states)[static_cast<size_t>(t)] = st;
  }
  return c;
}

F0Contour estimate_f0_mel_aligned(const Waveform& w, const PitchParams& p, const DspParams& dsp) {
  if (p.window < dsp.win_length) {
    throw ConfigError("pitch constraint violated: need pitch.window >= dsp.win_length");
  }
  int pad = p.window - dsp.win_length;
  int left = pad / 2;
  int right = pad - left;
  Waveform padded;
  padded.sample_rate = w.sample_rate;
  padded.samples.resize(w.samples.size() + pad, 0.0);
  std::copy(w.samples.begin(), w.samples.end(), padded.samples.begin() + left);
  (void)right;
  return estimate_f0(padded, p, dsp.hop_length);
}

F0Contour shift_scale_f0(const F0Contour& c, double semitones, double scale, const PitchParams& p) {
  if (scale <= 0.0) throw ConfigError("shift_scale_f0: scale must be positive");
  F0Contour out = c;
  double factor = scale * std::exp2(semitones / 12.0);
  for (size_t i = 0; i < out.f0_hz.size(); ++i) {
    if (!out.voiced[i]) continue;
    out.f0_hz[i] = std::clamp(out.f0_hz[i] * factor, p.f_floor, p.f_ceiling);
  }
  return out;
}

Mat normalize_f0(const F0Contour& c) {
  int t_count = c.frames();
  Mat out(t_count, 2);
  std::vector<double> logs;
  logs.reserve(static_cast<size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    if (c.voiced[static_cast<size_t>(t)]) logs.push_back(std::log(c.f0_hz[static_cast<size_t>(t)]));
  }
  double mu = 0.0, sigma = 1.0;
  bool enough = logs.size() >= 2;
  if (enough) {
    for (double v : logs) mu += v;
    mu /= static_cast<double>(logs.size());
    double var = 0.0;
    for (double v : logs) var += (v - mu) * (v - mu);
    sigma = std::sqrt(var / static_cast<double>(logs.size()));
    if (sigma < 1e-8) sigma = 1.0;
  }
  for (int t = 0; t < t_count; ++t) {
    bool v = c.voiced[static_cast<size_t>(t)] != 0;
    out.at(t, 0) = (v && enough) ? (std::log(c.f0_hz[static_cast<size_t>(t)]) - mu) / sigma : 0.0;
    out.at(t, 1) = v ? 1.0 : 0.0;
  }
  return out;
}

bool median_voiced_log_f0(const F0Contour& c, double* out) {
  std::vector<double> logs;
  for (size_t i = 0; i < c.f0_hz.size(); ++i) {
    if (c.voiced[i]) logs.push_back(std::log(c.f0_hz[i]));
  }
  if (logs.empty()) return false;
  std::sort(logs.begin(), logs.end());
  size_t n = logs.size();
  *out = (n % 2 == 1) ? logs[n / 2] : 0.5 * (logs[n / 2 - 1] + logs[n / 2]);
  return true;
}

void write_f0_csv(const std::string& path, const F0Contour& c) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write: " + path);
  os << "frame_index,f0_hz,voiced\n";
  char buf[32];
  for (int t = 0; t < c.frames(); ++t) {
    std::snprintf(buf, sizeof(buf), "%.9g", c.f0_hz[static_cast<size_t>(t)]);
    os << t << ',' << buf << ',' << (c.voiced[static_cast<size_t>(t)] ? 1 : 0) << '\n';
  }
}

}  // namespace vconv
