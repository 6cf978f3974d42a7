#pragma once

#include <vector>

#include "vconv/fusion.hpp"
#include "vconv/rng.hpp"
#include "vconv/tape.hpp"
#include "vconv/wav.hpp"

namespace vconv {

struct GeneratorConfig {
  std::vector<int> upsample_strides = {4, 4, 4};
  int upsample_kernel = 4;
  int base_channels = 96;  // halves after every upsampling stage
  std::vector<int> resblock_kernels = {3, 5};
  std::vector<std::vector<int>> resblock_dilations = {{1, 2}, {1, 2}};
  int io_kernel = 7;  // input projection and output head

  int total_upsample() const;
  // Output channel count after stage `stage` (0-based).
  int stage_channels(int stage) const;
  void validate(int hop_length) const;
};

struct DiscriminatorConfig {
  std::vector<int> scales = {1, 2, 4};  // average-pooling factors
  std::vector<int> channels = {8, 16, 32};
  std::vector<int> strides = {1, 4, 4};
  int kernel = 15;
  int patch_kernel = 3;

  void validate() const;
  // Shortest waveform that still leaves every scale a full first-conv window.
  int min_input_samples() const;
};

// All weights ~ N(0, 0.02), biases zero. Generator tensors are "gen.*",
// discriminator tensors "disc.x{scale}.*".
void init_generator_params(const GeneratorConfig& cfg, int input_width,
                           ad::ParamSet* params, Rng* rng);
void init_discriminator_params(const DiscriminatorConfig& cfg, ad::ParamSet* params,
                               Rng* rng);

// Leaky-ReLU, transposed conv (exactly T*stride output rows), then the
// residual block group, whose kernel branches are averaged.
ad::VarId upsample_stage_forward(ad::Tape& t, ad::VarId x, const GeneratorConfig& cfg,
                                 ad::ParamSet& params, int stage, bool trainable);

// Fusion frames (T x F) to waveform column ((T * total_upsample()) x 1),
// squashed by a final tanh.
ad::VarId generate_on_tape(ad::Tape& t, ad::VarId fusion, const GeneratorConfig& cfg,
                           ad::ParamSet& params, bool trainable);

struct DiscriminatorGraph {
  std::vector<ad::VarId> scores;                 // per scale, patch column
  std::vector<std::vector<ad::VarId>> features;  // per scale, post-activation maps
};

// wave is a T x 1 column. Each scale average-pools by its factor, runs the
// strided conv stack, and emits unbounded patch scores plus the per-layer
// feature maps used by the feature-matching term.
DiscriminatorGraph discriminate_on_tape(ad::Tape& t, ad::VarId wave,
                                        const DiscriminatorConfig& cfg,
                                        ad::ParamSet& params, bool trainable);

// Plain forward wrappers, same arithmetic as the tape paths.
Waveform generate(const FusionSequence& fusion, const GeneratorConfig& cfg,
                  ad::ParamSet& params, int sample_rate);

struct DiscriminatorScores {
  std::vector<Mat> scores;
  std::vector<std::vector<Mat>> features;
};
DiscriminatorScores discriminate(const Waveform& w, const DiscriminatorConfig& cfg,
                                 ad::ParamSet& params);

}  // namespace vconv
