#pragma once

#include <cstdint>
#include <string>

#include "vconv/dsp.hpp"
#include "vconv/encoder.hpp"
#include "vconv/losses.hpp"
#include "vconv/pitch.hpp"
#include "vconv/tape.hpp"
#include "vconv/vocoder.hpp"

namespace vconv {

// Everything that determines tensor shapes and the forward pass, gathered in
// one place so a checkpoint can be fingerprinted against it.
struct ModelConfig {
  DspParams dsp;
  PitchParams pitch;
  EncoderConfig encoder;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  int speaker_count = 7;
  int speaker_dim = 16;

  // Conditioning width fed to the generator: content embedding + source f0
  // channels + speaker vector + target f0 channels.
  int fusion_width() const { return encoder.hidden_size + 2 + speaker_dim + 2; }

  // Cross-module checks; messages name the offending keys.
  void validate() const;
};

// FNV-1a over a canonical rendering of every shape-determining field.
uint64_t config_fingerprint(const ModelConfig& cfg);

struct Model {
  ModelConfig cfg;
  ad::ParamSet params;  // enc.*, spk.*, gen.*, disc.* in insertion order
  int64_t step = 0;

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
};

// Fresh init of all parameter tensors. Weights ~ N(0, 0.02) per module rules.
void init_model(Model* model, const ModelConfig& cfg, uint64_t seed);

// True for tensors the generator optimizer owns (encoder, speaker table,
// generator); discriminator tensors belong to the other side.
bool generator_side(const std::string& tensor_name);

}  // namespace vconv
