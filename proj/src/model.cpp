#include "vconv/model.hpp"

#include <cstdio>
#include <sstream>

#include "vconv/errors.hpp"
#include "vconv/fusion.hpp"

namespace vconv {

void ModelConfig::validate() const {
  dsp.validate();
  pitch.validate(dsp.sample_rate);
  encoder.validate(dsp.mel_count);
  generator.validate(dsp.hop_length);
  discriminator.validate();
  if (speaker_count < 1)
    throw ConfigError("fusion.speaker_count must be >= 1, got " +
                      std::to_string(speaker_count));
  if (speaker_dim < 1)
    throw ConfigError("fusion.speaker_dim must be >= 1, got " + std::to_string(speaker_dim));
  weights.validate();
}

uint64_t config_fingerprint(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "sr=" << cfg.dsp.sample_rate << ";fft=" << cfg.dsp.fft_size
     << ";win=" << cfg.dsp.win_length << ";hop=" << cfg.dsp.hop_length
     << ";mel=" << cfg.dsp.mel_count << ";fmin=" << cfg.dsp.fmin
     << ";fmax=" << cfg.dsp.fmax;
  os << ";pf=" << cfg.pitch.f_floor << ";pc=" << cfg.pitch.f_ceiling
     << ";pt=" << cfg.pitch.yin_threshold << ";pw=" << cfg.pitch.window;
  os << ";el=" << cfg.encoder.layer_count << ";eh=" << cfg.encoder.hidden_size
     << ";heads=" << cfg.encoder.head_count << ";ek=" << cfg.encoder.conv_kernel
     << ";eff=" << cfg.encoder.ff_multiplier << ";ecc=";
  for (int c : cfg.encoder.conv_channels) os << c << ",";
  os << ";gs=";
  for (int s : cfg.generator.upsample_strides) os << s << ",";
  os << ";gk=" << cfg.generator.upsample_kernel << ";gc=" << cfg.generator.base_channels
     << ";gio=" << cfg.generator.io_kernel << ";grk=";
  for (int k : cfg.generator.resblock_kernels) os << k << ",";
  os << ";grd=";
  for (const auto& ds : cfg.generator.resblock_dilations) {
    for (int d : ds) os << d << ",";
    os << "/";
  }
  os << ";dsc=";
  for (int s : cfg.discriminator.scales) os << s << ",";
  os << ";dch=";
  for (int c : cfg.discriminator.channels) os << c << ",";
  os << ";dst=";
  for (int s : cfg.discriminator.strides) os << s << ",";
  os << ";dk=" << cfg.discriminator.kernel << ";dpk=" << cfg.discriminator.patch_kernel;
  os << ";spk=" << cfg.speaker_count << ";sdim=" << cfg.speaker_dim;
  os << ";wr=" << cfg.weights.w_recon << ";wa=" << cfg.weights.w_adv
     << ";wp=" << cfg.weights.w_pitch << ";wf=" << cfg.weights.w_featmatch;

  const std::string s = os.str();
  uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void init_model(Model* model, const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  model->cfg = cfg;
  model->step = 0;
  model->params = ad::ParamSet();
  Rng rng(seed);
  init_encoder_params(cfg.encoder, cfg.dsp.mel_count, &model->params, &rng);
  init_speaker_table(&model->params, cfg.speaker_count, cfg.speaker_dim, &rng);
  init_generator_params(cfg.generator, cfg.fusion_width(), &model->params, &rng);
  init_discriminator_params(cfg.discriminator, &model->params, &rng);
}

bool generator_side(const std::string& tensor_name) {
  return tensor_name.rfind("disc.", 0) != 0;
}

}  // namespace vconv
