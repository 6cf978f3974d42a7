#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "vconv/dsp.hpp"
#include "vconv/rng.hpp"

using namespace vconv;

namespace {

Waveform sine(double freq, double seconds, int sr, double amp = 1.0) {
  Waveform w;
  w.sample_rate = sr;
  size_t n = static_cast<size_t>(seconds * sr);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sr);
  return w;
}

// Short raised-cosine ramps so the signal is ~0 at both ends (keeps the
// resampler's zero-extension assumption honest at the edges).
void fade_edges(Waveform* w, int ramp) {
  int n = static_cast<int>(w->samples.size());
  for (int i = 0; i < ramp && i < n; ++i) {
    double g = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
    w->samples[i] *= g;
    w->samples[n - 1 - i] *= g;
  }
}

// Independent peak-frequency oracle: naive DFT magnitude over a dense grid.
double dft_peak_hz(const Waveform& w, int points) {
  int n = std::min<int>(points, static_cast<int>(w.samples.size()));
  int bins = points / 2 + 1;
  double best = -1.0;
  int best_k = 0;
  for (int k = 1; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (int i = 0; i < n; ++i) {
      double ang = 2.0 * std::numbers::pi * k * i / points;
      re += w.samples[i] * std::cos(ang);
      im -= w.samples[i] * std::sin(ang);
    }
    double mag = re * re + im * im;
    if (mag > best) {
      best = mag;
      best_k = k;
    }
  }
  return static_cast<double>(best_k) * w.sample_rate / points;
}

double htk_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double htk_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

TEST_SUITE("dsp") {

TEST_CASE("params validate") {
  DspParams p;
  CHECK_NOTHROW(p.validate());
  DspParams bad = p;
  bad.hop_length = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.fmax = 9000.0;  // above Nyquist
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.fmin = 8000.0;
  bad.fmax = 4000.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.win_length = 1024;  // > fft_size
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("resample preserves duration") {
  Waveform w = sine(300.0, 1.0, 22050);
  Waveform out = resample(w, 44100);
  CHECK(out.sample_rate == 44100);
  CHECK(out.samples.size() == 44100);
}

TEST_CASE("resample identity at equal rates") {
  Waveform w = sine(300.0, 0.25, 16000);
  Waveform out = resample(w, 16000);
  REQUIRE(out.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) CHECK(out.samples[i] == w.samples[i]);
}

TEST_CASE("resample keeps a 1 kHz tone at 1 kHz") {
  Waveform w = sine(1000.0, 1.0, 8000);
  fade_edges(&w, 200);
  Waveform out = resample(w, 16000);
  const int points = 4096;
  double in_peak = dft_peak_hz(w, points);
  double out_peak = dft_peak_hz(out, points);
  double out_bin = static_cast<double>(out.sample_rate) / points;
  CHECK(std::abs(in_peak - 1000.0) <= 8000.0 / points + 1e-9);
  CHECK(std::abs(out_peak - 1000.0) <= out_bin + 1e-9);
}

TEST_CASE("resample round trip error below 1e-3") {
  for (double freq : {440.0, 1200.0, 1500.0}) {  // below 40% of the 4 kHz Nyquist
    Waveform w = sine(freq, 0.5, 8000, 0.9);
    fade_edges(&w, 160);
    Waveform up = resample(w, 18000);
    Waveform back = resample(up, 8000);
    REQUIRE(back.samples.size() == w.samples.size());
    double worst = 0.0;
    for (size_t i = 0; i < w.samples.size(); ++i)
      worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
    CAPTURE(freq);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("slice_clips arithmetic") {
  Waveform w = sine(100.0, 12.0, 8000);
  auto clips = slice_clips(w, 5.0);
  REQUIRE(clips.size() == 3);
  CHECK(clips[0].samples.size() == 40000);
  CHECK(clips[1].samples.size() == 40000);
  CHECK(clips[2].samples.size() == 16000);

  // concatenation of kept clips reproduces the kept prefix exactly
  size_t pos = 0;
  for (const auto& c : clips) {
    for (size_t i = 0; i < c.samples.size(); ++i)
      REQUIRE(c.samples[i] == w.samples[pos + i]);
    pos += c.samples.size();
  }
  CHECK(pos == w.samples.size());
}

TEST_CASE("slice_clips identity for exact length") {
  Waveform w = sine(100.0, 5.0, 8000);
  auto clips = slice_clips(w, 5.0);
  REQUIRE(clips.size() == 1);
  CHECK(clips[0].samples == w.samples);
}

TEST_CASE("slice_clips drops short remainder") {
  Waveform w = sine(100.0, 5.2, 8000);
  auto clips = slice_clips(w, 5.0);
  REQUIRE(clips.size() == 1);
  CHECK(clips[0].samples.size() == 40000);
}

TEST_CASE("slice_clips empty input") {
  Waveform w;
  w.sample_rate = 8000;
  CHECK(slice_clips(w, 5.0).empty());
}

TEST_CASE("mel argmax of a 440 Hz tone hits the nearest filter") {
  DspParams p;
  Waveform w = sine(440.0, 0.5, p.sample_rate);
  MelSpectrogram m = mel_spectrogram(w, p);
  REQUIRE(m.frames.rows > 0);
  REQUIRE(m.frames.cols == p.mel_count);

  // independent center table straight from the HTK formula
  double lo = htk_mel(p.fmin), hi = htk_mel(p.fmax);
  double step = (hi - lo) / (p.mel_count + 1);
  int nearest = 0;
  double best = 1e18;
  for (int i = 0; i < p.mel_count; ++i) {
    double center = htk_hz(lo + step * (i + 1));
    if (std::abs(center - 440.0) < best) {
      best = std::abs(center - 440.0);
      nearest = i;
    }
  }
  for (int t = 0; t < m.frames.rows; ++t) {
    int arg = 0;
    for (int j = 1; j < m.frames.cols; ++j)
      if (m.frames.at(t, j) > m.frames.at(t, arg)) arg = j;
    CAPTURE(t);
    CHECK(arg == nearest);
  }
  // and the library's own center table agrees with the oracle
  auto centers = mel_center_frequencies(p);
  REQUIRE(static_cast<int>(centers.size()) == p.mel_count);
  for (int i = 0; i < p.mel_count; ++i)
    CHECK(centers[i] == doctest::Approx(htk_hz(lo + step * (i + 1))).epsilon(1e-12));
}

TEST_CASE("mel of silence is the log floor everywhere") {
  DspParams p;
  Waveform w;
  w.sample_rate = p.sample_rate;
  w.samples.assign(p.win_length + 10 * p.hop_length, 0.0);
  MelSpectrogram m = mel_spectrogram(w, p);
  double floor_log = std::log(kMelFloor);
  for (double v : m.frames.v) CHECK(v == floor_log);
}

TEST_CASE("frame count formula") {
  DspParams p;
  Waveform w = sine(200.0, 0.0, p.sample_rate);
  w.samples.assign(p.win_length + 3 * p.hop_length, 0.1);
  MelSpectrogram m = mel_spectrogram(w, p);
  CHECK(m.frames.rows == 4);

  // property: random lengths vs a step-counting oracle
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    size_t len = p.win_length + rng.below(40000);
    int expect = 0;
    for (size_t pos = 0; pos + p.win_length <= len; pos += p.hop_length) ++expect;
    CHECK(frame_count(len, p.win_length, p.hop_length) == expect);
  }
}

TEST_CASE("too-short input is a data error") {
  DspParams p;
  Waveform w;
  w.sample_rate = p.sample_rate;
  w.samples.assign(p.win_length - 1, 0.1);
  CHECK_THROWS_AS(mel_spectrogram(w, p), DataError);
}

TEST_CASE("filterbank shape and support") {
  DspParams p;
  Mat fb = mel_filterbank(p);
  int bins = p.fft_size / 2 + 1;
  REQUIRE(fb.rows == p.mel_count);
  REQUIRE(fb.cols == bins);
  for (int m = 0; m < fb.rows; ++m) {
    double sum = 0.0;
    for (int k = 0; k < bins; ++k) {
      double wgt = fb.at(m, k);
      CHECK(wgt >= 0.0);
      sum += wgt;
      double hz = static_cast<double>(k) * p.sample_rate / p.fft_size;
      if (hz < p.fmin || hz > p.fmax) CHECK(wgt == 0.0);
    }
    CHECK(sum > 0.0);
  }
}

TEST_CASE("doubling amplitude lifts unclamped cells by log 4") {
  DspParams p;
  Rng rng(77);
  Waveform w;
  w.sample_rate = p.sample_rate;
  w.samples.resize(p.win_length + 20 * p.hop_length);
  for (auto& s : w.samples) s = rng.uniform(-0.45, 0.45);
  Waveform loud = w;
  for (auto& s : loud.samples) s *= 2.0;

  MelSpectrogram a = mel_spectrogram(w, p);
  MelSpectrogram b = mel_spectrogram(loud, p);
  double floor_log = std::log(kMelFloor);
  int checked = 0;
  for (size_t i = 0; i < a.frames.v.size(); ++i) {
    if (a.frames.v[i] <= floor_log) continue;  // clamped in the quiet version
    CHECK(b.frames.v[i] - a.frames.v[i] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("mel csv and pgm outputs") {
  DspParams p;
  Waveform w = sine(440.0, 0.2, p.sample_rate);
  MelSpectrogram m = mel_spectrogram(w, p);
  write_mel_csv("mel_test.csv", m);
  write_mel_pgm("mel_test.pgm", m);

  std::ifstream csv("mel_test.csv");
  REQUIRE(csv.good());
  int lines = 0;
  std::string line;
  int commas = -1;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++lines;
    commas = static_cast<int>(std::count(line.begin(), line.end(), ','));
  }
  CHECK(lines == m.frames.rows);
  CHECK(commas == m.frames.cols - 1);

  std::ifstream pgm("mel_test.pgm", std::ios::binary);
  REQUIRE(pgm.good());
  std::string magic;
  int wpx = 0, hpx = 0, maxval = 0;
  pgm >> magic >> wpx >> hpx >> maxval;
  CHECK(magic == "P5");
  CHECK(wpx == m.frames.rows);
  CHECK(hpx == m.frames.cols);
  CHECK(maxval == 255);
  std::remove("mel_test.csv");
  std::remove("mel_test.pgm");
}

}  // TEST_SUITE
