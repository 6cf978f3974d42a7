#pragma once

#include <vector>

#include "vconv/dsp.hpp"
#include "vconv/rng.hpp"
#include "vconv/tape.hpp"

namespace vconv {

struct EncoderConfig {
  int layer_count = 2;
  int hidden_size = 64;
  int head_count = 4;
  std::vector<int> conv_channels = {64, 64};  // last entry must equal hidden_size
  int conv_kernel = 5;
  int ff_multiplier = 4;
  bool freeze_target_path = true;

  void validate(int mel_count) const;
};

// Per-frame content embedding, one row per mel frame.
struct ContentEmbedding {
  Mat frames;  // T x hidden_size
  int hidden_size = 0;
};

// Optional probe into one attention layer, for tests and diagnostics.
struct AttentionTrace {
  std::vector<ad::VarId> probs;  // per head, T x T softmax rows
  ad::VarId context = -1;        // T x H concatenated head outputs, pre out-projection
  ad::VarId attn_branch = -1;    // T x H, the residual branch added after attention
};

// Creates enc.* tensors: conv front end, then per-layer attention/FF blocks.
// Weights ~ N(0, 0.02), biases zero, LayerNorm gain 1 / shift 0.
void init_encoder_params(const EncoderConfig& cfg, int mel_count, ad::ParamSet* params, Rng* rng);

// Stride-1 same-length conv stack with GELU between layers (none after the
// last). mel is T x mel_count on the tape.
ad::VarId conv_stack_forward(ad::Tape& t, ad::VarId mel, const EncoderConfig& cfg,
                             ad::ParamSet& params, bool trainable);

// Pre-norm transformer layer: LN -> multi-head attention -> residual,
// LN -> feed-forward -> residual.
ad::VarId attention_layer_forward(ad::Tape& t, ad::VarId x, const EncoderConfig& cfg,
                                  ad::ParamSet& params, int layer, bool trainable,
                                  AttentionTrace* trace = nullptr);

// conv_stack_forward + layer_count attention layers.
ad::VarId encode_on_tape(ad::Tape& t, ad::VarId mel, const EncoderConfig& cfg,
                         ad::ParamSet& params, bool trainable);

// Plain forward for inference paths; same arithmetic as the tape path.
ContentEmbedding encode(const MelSpectrogram& mel, const EncoderConfig& cfg,
                        ad::ParamSet& params);

}  // namespace vconv
