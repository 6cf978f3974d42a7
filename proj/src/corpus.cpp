#include "vconv/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vconv/dsp.hpp"
#include "vconv/errors.hpp"

namespace fs = std::filesystem;

namespace vconv {

namespace {

constexpr double kTau = 6.283185307179586;

// splitmix64 finalizer; decorrelates sequential sub-seeds.
uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double semitones_to_ratio(double st) { return std::exp2(st / 12.0); }

// Two-pole resonator, direct form. r controls bandwidth, theta the center.
struct Resonator {
  double b0, a1, a2;
  double y1 = 0.0, y2 = 0.0;

  Resonator(double freq_hz, double bandwidth_hz, int sample_rate) {
    double r = std::exp(-kTau * 0.5 * bandwidth_hz / sample_rate);
    double theta = kTau * freq_hz / sample_rate;
    a1 = 2.0 * r * std::cos(theta);
    a2 = -r * r;
    // Unity gain at the center frequency.
    b0 = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
  }

  double step(double x) {
    double y = b0 * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

void SpeakerProfile::validate() const {
  if (base_f0 < 80.0 || base_f0 > 400.0)
    throw ConfigError("speaker profile: base_f0 " + std::to_string(base_f0) +
                      " outside [80, 400] Hz");
  if (formant_shift < 0.8 || formant_shift > 1.25)
    throw ConfigError("speaker profile: formant_shift " + std::to_string(formant_shift) +
                      " outside [0.8, 1.25]");
  if (f0_range < 0.0 || vibrato_rate < 0.0 || vibrato_depth < 0.0)
    throw ConfigError("speaker profile: negative modulation field");
}

double UtteranceSpec::total_duration() const {
  double s = 0.0;
  for (const auto& seg : segments) s += seg.duration;
  return s;
}

void UtteranceSpec::validate() const {
  if (segments.empty()) throw ConfigError("utterance spec: no segments");
  double d = total_duration();
  if (d < 1.0 || d > 10.0)
    throw ConfigError("utterance spec: total duration " + std::to_string(d) +
                      " outside [1, 10] s");
  for (const auto& seg : segments)
    if (seg.duration <= 0.0 || seg.f1 <= 0.0 || seg.f1 >= seg.f2 || seg.f2 >= seg.f3)
      throw ConfigError("utterance spec: segment with non-increasing formants or "
                        "non-positive duration");
}

std::vector<SpeakerProfile> make_profiles(int count, uint64_t seed) {
  if (count < 1) throw ConfigError("make_profiles: count must be >= 1");
  Rng rng(mix_seed(seed, 0x70726f66));
  std::vector<SpeakerProfile> out(count);
  for (int i = 0; i < count; ++i) {
    SpeakerProfile& p = out[i];
    p.speaker_id = i;
    double pos = count > 1 ? static_cast<double>(i) / (count - 1) : 0.5;
    // Median-f0 separability by construction: ~26% geometric gaps, and every
    // per-clip deviation (jitter 0.3 st, segment offsets 0.25*f0_range,
    // vibrato extremes 0.7 st) sums to under half a gap, so adjacent
    // speakers' median intervals stay disjoint.
    p.base_f0 = std::clamp(
        95.0 * std::pow(390.0 / 95.0, pos) * semitones_to_ratio(rng.uniform(-0.3, 0.3)),
        85.0, 395.0);
    p.f0_range = rng.uniform(1.5, 3.0);
    p.formant_shift = 0.84 + 0.36 * pos + rng.uniform(-0.01, 0.01);
    p.formant_shift = std::clamp(p.formant_shift, 0.8, 1.25);
    p.vibrato_rate = rng.uniform(4.5, 6.5);
    p.vibrato_depth = rng.uniform(0.4, 0.7);
    p.accent_tag = "std";
    p.validate();
  }
  return out;
}

UtteranceSpec random_utterance_spec(Rng* rng, const std::string& utterance_id,
                                    double pitch_range_semitones) {
  UtteranceSpec spec;
  spec.utterance_id = utterance_id;
  int n = 2 + static_cast<int>(rng->below(5));
  spec.segments.resize(n);
  for (auto& seg : spec.segments) {
    seg.f1 = rng->uniform(300.0, 900.0);
    seg.f2 = rng->uniform(std::max(seg.f1 + 200.0, 900.0), 2400.0);
    seg.f3 = rng->uniform(2500.0, 3400.0);
    seg.duration = rng->uniform(0.4, 1.2);
    seg.rel_pitch = rng->uniform(-0.25, 0.25) * pitch_range_semitones;
  }
  // Keep the total inside the legal [1, 10] s window.
  double total = spec.total_duration();
  if (total < 1.0)
    for (auto& seg : spec.segments) seg.duration *= 1.05 / total;
  if (total > 10.0)
    for (auto& seg : spec.segments) seg.duration *= 9.5 / total;
  return spec;
}

Waveform synthesize_utterance(const UtteranceSpec& spec, const SpeakerProfile& profile,
                              bool singing, uint64_t seed, int sample_rate) {
  spec.validate();
  profile.validate();
  Rng rng(mix_seed(seed, 0x73796e74));

  Waveform w;
  w.sample_rate = sample_rate;
  size_t total = static_cast<size_t>(std::llround(spec.total_duration() * sample_rate));
  w.samples.assign(total, 0.0);

  // Glottal source: one impulse per phase wrap.
  std::vector<double> source(total, 0.0);
  double phase = rng.uniform();  // seed-dependent phase start
  size_t n = 0;
  for (const auto& seg : spec.segments) {
    size_t seg_len = static_cast<size_t>(std::llround(seg.duration * sample_rate));
    double seg_f0 = profile.base_f0 * semitones_to_ratio(seg.rel_pitch);
    for (size_t i = 0; i < seg_len && n < total; ++i, ++n) {
      double f0 = seg_f0;
      if (singing) {
        double t = static_cast<double>(n) / sample_rate;
        f0 *= semitones_to_ratio(profile.vibrato_depth *
                                 std::sin(kTau * profile.vibrato_rate * t));
      }
      phase += f0 / sample_rate;
      if (phase >= 1.0) {
        phase -= 1.0;
        source[n] = 1.0;
      }
    }
  }

  // Filter each segment with its own resonator bank; filter state resets at
  // segment boundaries (a click-level artifact, inaudible under the noise floor).
  n = 0;
  double peak = 0.0;
  for (const auto& seg : spec.segments) {
    size_t seg_len = static_cast<size_t>(std::llround(seg.duration * sample_rate));
    Resonator r1(seg.f1 * profile.formant_shift, 80.0, sample_rate);
    Resonator r2(seg.f2 * profile.formant_shift, 120.0, sample_rate);
    Resonator r3(seg.f3 * profile.formant_shift, 160.0, sample_rate);
    for (size_t i = 0; i < seg_len && n < total; ++i, ++n) {
      double x = source[n];
      double y = r1.step(x) + 0.6 * r2.step(x) + 0.3 * r3.step(x);
      w.samples[n] = y;
      peak = std::max(peak, std::abs(y));
    }
  }

  // Normalize to 0.45 peak, then the -40 dB noise floor.
  double gain = peak > 0.0 ? 0.45 / peak : 0.0;
  double noise_amp = 0.45 * 0.01;
  for (double& s : w.samples) s = s * gain + noise_amp * rng.normal();
  return w;
}

AccentTransform default_accent_transform(int tag_index) {
  // Small systematic deformations; index 0 is the reference accent.
  static const AccentTransform table[] = {
      {0.0, 1.0, 0.0},
      {0.06, 1.10, -0.4},
      {-0.05, 0.92, 0.35},
      {0.03, 0.97, 0.2},
  };
  constexpr int n = static_cast<int>(sizeof(table) / sizeof(table[0]));
  if (tag_index < 0) throw ConfigError("accent transform: negative tag index");
  AccentTransform t = table[tag_index % n];
  // Beyond the table, nudge the shift so distinct indices stay distinct.
  t.formant_shift_offset += 0.01 * (tag_index / n);
  return t;
}

void apply_accent(const AccentTransform& t, UtteranceSpec* spec, SpeakerProfile* profile) {
  profile->formant_shift = std::clamp(profile->formant_shift + t.formant_shift_offset, 0.8, 1.25);
  double elapsed = 0.0;
  for (auto& seg : spec->segments) {
    seg.duration *= t.duration_scale;
    double mid = elapsed + 0.5 * seg.duration;
    seg.rel_pitch += t.pitch_slope * mid;
    elapsed += seg.duration;
  }
}

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest: " + path);
  for (const auto& e : m.entries) {
    f << e.utterance_id << '\t' << e.speaker_id << '\t' << e.accent_tag << '\t'
      << e.clip_path;
    if (!e.pair_id.empty()) f << '\t' << e.pair_id;
    f << '\n';
  }
  if (!f.good()) throw DataError("manifest write failed: " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  fs::path base = fs::path(path).parent_path();
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 4 || fields.size() > 5)
      throw DataError("manifest " + path + " line " + std::to_string(lineno) +
                      ": expected 4 or 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    ManifestEntry e;
    e.utterance_id = fields[0];
    try {
      size_t used = 0;
      e.speaker_id = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("manifest " + path + " line " + std::to_string(lineno) +
                      ": speaker id '" + fields[1] + "' is not an integer");
    }
    e.accent_tag = fields[2];
    fs::path p(fields[3]);
    e.clip_path = p.is_absolute() ? p.string() : (base / p).string();
    if (fields.size() == 5) e.pair_id = fields[4];
    m.entries.push_back(std::move(e));
  }
  return m;
}

namespace {

std::string rel_to(const fs::path& base, const fs::path& p) {
  return fs::relative(p, base).generic_string();
}

void save_clip(const fs::path& path, const Waveform& w) {
  fs::create_directories(path.parent_path());
  save_waveform(path.string(), w, WavEncoding::float32);
}

}  // namespace

Manifest build_nonparallel_corpus(const std::string& out_dir, int speaker_count,
                                  double seconds_per_speaker, uint64_t seed) {
  if (speaker_count < 1) throw ConfigError("corpus: speaker_count must be >= 1");
  if (seconds_per_speaker < 5.0)
    throw ConfigError("corpus: seconds_per_speaker must cover at least one 5 s clip");
  fs::path root(out_dir);
  fs::create_directories(root);

  std::vector<SpeakerProfile> profiles = make_profiles(speaker_count, seed);
  Manifest m;
  for (int s = 0; s < speaker_count; ++s) {
    // Per-speaker stream: specs are disjoint across speakers and seeds.
    Rng rng(mix_seed(seed, 0x6e700000ull + static_cast<uint64_t>(s)));
    double have = 0.0;
    int utt = 0, clip_no = 0;
    while (have < seconds_per_speaker) {
      char id[32];
      std::snprintf(id, sizeof id, "u%d_%03d", s, utt);
      UtteranceSpec spec = random_utterance_spec(&rng, id, profiles[s].f0_range);
      bool singing = rng.uniform() < 0.4;  // mixed speech and song
      uint64_t synth_seed = mix_seed(seed, 0x75740000ull +
                                               static_cast<uint64_t>(s) * 4096 + utt);
      Waveform w = synthesize_utterance(spec, profiles[s], singing, synth_seed);
      for (Waveform& clip : slice_clips(w, 5.0)) {
        char name[64];
        std::snprintf(name, sizeof name, "spk%d/clip_%04d.wav", s, clip_no);
        fs::path p = root / name;
        save_clip(p, clip);
        ManifestEntry e;
        char cid[48];
        std::snprintf(cid, sizeof cid, "%s.s%d", id, clip_no);
        e.utterance_id = cid;
        e.speaker_id = s;
        e.accent_tag = profiles[s].accent_tag;
        e.clip_path = rel_to(root, p);
        m.entries.push_back(std::move(e));
        have += clip.seconds();
        ++clip_no;
      }
      ++utt;
    }
  }
  write_manifest(m, (root / "manifest.tsv").string());
  return read_manifest((root / "manifest.tsv").string());
}

Manifest build_parallel_corpus(const std::string& out_dir,
                               const std::vector<std::string>& accent_tags,
                               int utterance_count, uint64_t seed,
                               const std::vector<AccentTransform>* transforms) {
  if (accent_tags.size() < 2)
    throw ConfigError("parallel corpus: need at least 2 accent tags, got " +
                      std::to_string(accent_tags.size()));
  if (utterance_count < 1) throw ConfigError("parallel corpus: utterance_count must be >= 1");
  if (transforms && transforms->size() != accent_tags.size())
    throw ConfigError("parallel corpus: transform count does not match tag count");
  fs::path root(out_dir);
  fs::create_directories(root);

  SpeakerProfile base = make_profiles(1, seed)[0];
  Rng rng(mix_seed(seed, 0x70617261));
  Manifest m;
  for (int u = 0; u < utterance_count; ++u) {
    char id[32], pair[32];
    std::snprintf(id, sizeof id, "p%03d", u);
    std::snprintf(pair, sizeof pair, "pair%03d", u);
    UtteranceSpec spec = random_utterance_spec(&rng, id, base.f0_range);
    // One seed per utterance: the accent renderings differ only through the
    // transform, so identity transforms give bit-identical audio.
    uint64_t synth_seed = mix_seed(seed, 0x70700000ull + static_cast<uint64_t>(u));
    for (size_t a = 0; a < accent_tags.size(); ++a) {
      UtteranceSpec sp = spec;
      SpeakerProfile prof = base;
      prof.accent_tag = accent_tags[a];
      AccentTransform t =
          transforms ? (*transforms)[a] : default_accent_transform(static_cast<int>(a));
      apply_accent(t, &sp, &prof);
      Waveform w = synthesize_utterance(sp, prof, false, synth_seed);
      char name[64];
      std::snprintf(name, sizeof name, "%s/utt_%03d.wav", accent_tags[a].c_str(), u);
      fs::path p = root / name;
      save_clip(p, w);
      ManifestEntry e;
      e.utterance_id = id;
      e.speaker_id = static_cast<int>(a);
      e.accent_tag = accent_tags[a];
      e.clip_path = rel_to(root, p);
      e.pair_id = pair;
      m.entries.push_back(std::move(e));
    }
  }
  write_manifest(m, (root / "manifest.tsv").string());
  return read_manifest((root / "manifest.tsv").string());
}

}  // namespace vconv
