#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vconv/rng.hpp"
#include "vconv/wav.hpp"

namespace vconv {

// A synthetic voice identity. base_f0 and formant_shift are spread across the
// default family widely enough that (median f0, spectral centroid) separates
// every speaker — downstream probes rely on that.
struct SpeakerProfile {
  int speaker_id = 0;
  double base_f0 = 200.0;            // Hz
  double f0_range = 6.0;             // semitones, utterance pitch excursions
  double formant_shift = 1.0;        // ratio applied to every formant
  double vibrato_rate = 5.5;         // Hz, singing only
  double vibrato_depth = 1.0;        // semitones peak deviation, singing only
  std::string accent_tag = "std";

  void validate() const;  // ConfigError when out of range
};

// One phone-like stretch: a formant triple held for `duration` seconds at a
// pitch offset relative to the speaker's base f0.
struct FormantSegment {
  double f1 = 500.0, f2 = 1500.0, f3 = 2800.0;  // Hz
  double duration = 0.5;                        // s
  double rel_pitch = 0.0;                       // semitones
};

struct UtteranceSpec {
  std::vector<FormantSegment> segments;
  std::string utterance_id;

  double total_duration() const;
  void validate() const;  // ConfigError: empty, or duration outside [1, 10] s
};

// Deterministic profile family. Base f0 is spaced geometrically over
// [100, 380] Hz and formant_shift linearly over [0.84, 1.20], with small
// seeded jitter that cannot close the gaps.
std::vector<SpeakerProfile> make_profiles(int count, uint64_t seed);

// Random spec: 2-6 segments, plausible formant ranges, pitch offsets within
// +-pitch_range/2 semitones.
UtteranceSpec random_utterance_spec(Rng* rng, const std::string& utterance_id,
                                    double pitch_range_semitones);

// Source-filter synthesis: an impulse train at the profile-modulated f0
// (vibrato when singing) drives three resonators at formant_shift-scaled
// formants; a -40 dB noise floor sits underneath. Deterministic per seed.
Waveform synthesize_utterance(const UtteranceSpec& spec, const SpeakerProfile& profile,
                              bool singing, uint64_t seed, int sample_rate = 16000);

// Systematic per-accent deformation. Identity = {0.0, 1.0, 0.0}.
struct AccentTransform {
  double formant_shift_offset = 0.0;  // added to profile.formant_shift
  double duration_scale = 1.0;        // multiplies segment durations
  double pitch_slope = 0.0;           // semitones per second, folded into rel_pitch
};

// Built-in transform table, indexed by the tag's position in the tag list.
AccentTransform default_accent_transform(int tag_index);

// Applies a transform to copies of the spec and profile. The pitch slope is
// discretized per segment at its midpoint time.
void apply_accent(const AccentTransform& t, UtteranceSpec* spec, SpeakerProfile* profile);

struct ManifestEntry {
  std::string utterance_id;
  int speaker_id = 0;
  std::string accent_tag;
  std::string clip_path;  // absolute after read_manifest
  std::string pair_id;    // empty when the clip has no parallel twin
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

// Tab-separated, one entry per line, paths relative to the manifest file.
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);  // DataError on malformed lines

// Speaker-disjoint random utterances, mixed singing/speaking, sliced to 5 s
// clips under out_dir/spk<N>/. Returns the manifest also written to
// out_dir/manifest.tsv.
Manifest build_nonparallel_corpus(const std::string& out_dir, int speaker_count,
                                  double seconds_per_speaker, uint64_t seed);

// The same utterance rendered once per accent tag; entries that share a
// pair_id are utterance-aligned across accents. Tag index i uses
// transforms[i] when given, else default_accent_transform(i).
Manifest build_parallel_corpus(const std::string& out_dir,
                               const std::vector<std::string>& accent_tags,
                               int utterance_count, uint64_t seed,
                               const std::vector<AccentTransform>* transforms = nullptr);

}  // namespace vconv
