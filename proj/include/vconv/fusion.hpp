#pragma once

#include <vector>

#include "vconv/encoder.hpp"
#include "vconv/pitch.hpp"
#include "vconv/rng.hpp"
#include "vconv/tape.hpp"

namespace vconv {

// Channel spans of the four concatenated parts, in order: source embeddings,
// source f0, target embeddings (or speaker vector), target f0. Half-open
// [begin, end) pairs; spans are disjoint and cover [0, width()).
struct FusionLayout {
  int src_emb_begin = 0, src_emb_end = 0;
  int src_f0_begin = 0, src_f0_end = 0;
  int tgt_emb_begin = 0, tgt_emb_end = 0;
  int tgt_f0_begin = 0, tgt_f0_end = 0;

  int width() const { return tgt_f0_end; }
};

FusionLayout fusion_layout(int src_hidden, int tgt_width);

// Per-frame conditioning sequence fed to the vocoder.
struct FusionSequence {
  Mat frames;  // T x layout.width()
  FusionLayout layout;
};

// Learned speaker vectors. init_speaker_table creates "spk.table"
// (speaker_count x dim, rows ~ N(0, 0.02), trainable) and "spk.f0_median"
// (speaker_count x 1, non-trainable; filled during preprocessing).
void init_speaker_table(ad::ParamSet* params, int speaker_count, int dim, Rng* rng);

int speaker_count(const ad::ParamSet& params);
std::vector<double> speaker_vector(const ad::ParamSet& params, int speaker_id);
double speaker_f0_median(const ad::ParamSet& params, int speaker_id);
void set_speaker_f0_median(ad::ParamSet* params, int speaker_id, double median_log_f0);

// Truncates the embedding and the rendered f0 channels to a common frame
// count. Both come from the same clip at the same hop, so the lengths may
// differ by at most one frame; more than that means the hops disagree.
struct AlignedFeatures {
  Mat emb;  // T x H
  Mat f0;   // T x 2, normalize_f0 channels
};
AlignedFeatures align_frames(const ContentEmbedding& emb, const F0Contour& f0);

// Nearest-index resampling of rows to new_t frames (row i reads
// floor(i * rows / new_t)). Fits a reference clip's frames to the source
// length before fusion; identity when lengths already match.
Mat resample_rows(const Mat& m, int new_t);

// Per-frame concatenation in the fixed part order. No values are transformed;
// every input cell lands bit-exactly in its layout span.
FusionSequence fuse(const Mat& src_emb, const Mat& src_f0,
                    const Mat& tgt_emb, const Mat& tgt_f0);

// Speaker-id target: the learned vector is broadcast to every frame and the
// target f0 channels carry the constant pair (median log-f0, 1).
FusionSequence fuse(const Mat& src_emb, const Mat& src_f0,
                    const std::vector<double>& tgt_vec, double tgt_median_log_f0);

// Tape-side concatenation, same layout as fuse().
ad::VarId fuse_on_tape(ad::Tape& t, ad::VarId src_emb, ad::VarId src_f0,
                       ad::VarId tgt_emb, ad::VarId tgt_f0);

// Builds the speaker-id target parts on the tape: table row broadcast to
// `frames` rows (gradients reach the row when trainable) plus the constant
// (median log-f0, 1) channels.
void speaker_target_on_tape(ad::Tape& t, ad::ParamSet& params, int speaker_id,
                            int frames, bool trainable,
                            ad::VarId* emb_out, ad::VarId* f0_out);

}  // namespace vconv
