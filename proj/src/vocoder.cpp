#include "vconv/vocoder.hpp"

#include <string>

#include "vconv/errors.hpp"

namespace vconv {

int GeneratorConfig::total_upsample() const {
  int p = 1;
  for (int s : upsample_strides) p *= s;
  return p;
}

int GeneratorConfig::stage_channels(int stage) const {
  return base_channels >> (stage + 1);
}

void GeneratorConfig::validate(int hop_length) const {
  if (upsample_strides.empty()) throw ConfigError("vocoder.upsample_strides: empty");
  for (int s : upsample_strides) {
    if (s < 1) throw ConfigError("vocoder.upsample_strides: strides must be >= 1");
    if (upsample_kernel < s)
      throw ConfigError("vocoder.upsample_kernel " + std::to_string(upsample_kernel) +
                        " < stride " + std::to_string(s));
  }
  if (total_upsample() != hop_length)
    throw ConfigError("vocoder.upsample_strides product " + std::to_string(total_upsample()) +
                      " != dsp.hop_length " + std::to_string(hop_length));
  int stages = static_cast<int>(upsample_strides.size());
  if (base_channels % (1 << stages) != 0)
    throw ConfigError("vocoder.base_channels " + std::to_string(base_channels) +
                      " must be divisible by 2^" + std::to_string(stages) +
                      " (channels halve per stage)");
  if (resblock_kernels.empty() || resblock_kernels.size() != resblock_dilations.size())
    throw ConfigError("vocoder.resblock_kernels and resblock_dilations must pair up");
  for (int k : resblock_kernels)
    if (k < 1 || k % 2 == 0) throw ConfigError("vocoder.resblock_kernels: kernels must be odd");
  for (const auto& ds : resblock_dilations)
    for (int d : ds)
      if (d < 1) throw ConfigError("vocoder.resblock_dilations: dilations must be >= 1");
  if (io_kernel < 1 || io_kernel % 2 == 0)
    throw ConfigError("vocoder.io_kernel must be odd");
}

void DiscriminatorConfig::validate() const {
  if (scales.size() < 2) throw ConfigError("discriminator.scales: need at least 2 scales");
  for (int s : scales)
    if (s < 1) throw ConfigError("discriminator.scales: factors must be >= 1");
  if (channels.empty() || channels.size() != strides.size())
    throw ConfigError("discriminator.channels and strides must pair up");
  for (size_t i = 0; i < channels.size(); ++i)
    if (channels[i] < 1 || strides[i] < 1)
      throw ConfigError("discriminator layer sizes must be >= 1");
  if (kernel < 1 || patch_kernel < 1 || patch_kernel % 2 == 0)
    throw ConfigError("discriminator kernels must be positive (patch kernel odd)");
}

int DiscriminatorConfig::min_input_samples() const {
  int top = 1;
  for (int s : scales) top = top > s ? top : s;
  return top * kernel;
}

namespace {

void add_dense(ad::ParamSet* params, Rng* rng, const std::string& name, int rows, int cols) {
  ad::ParamTensor& w = params->add(name + ".w", rows, cols);
  for (double& v : w.value) v = rng->normal(0.0, 0.02);
  params->add(name + ".b", 1, cols);
}

std::string stage_prefix(int stage) { return "gen.up" + std::to_string(stage); }

std::string res_prefix(int stage, int k_idx, int d_idx) {
  return "gen.s" + std::to_string(stage) + ".r" + std::to_string(k_idx) + ".d" +
         std::to_string(d_idx);
}

std::string disc_prefix(int scale) { return "disc.x" + std::to_string(scale); }

}  // namespace

void init_generator_params(const GeneratorConfig& cfg, int input_width,
                           ad::ParamSet* params, Rng* rng) {
  if (input_width < 1) throw ConfigError("generator input width must be positive");
  add_dense(params, rng, "gen.in", cfg.io_kernel * input_width, cfg.base_channels);
  int ch = cfg.base_channels;
  for (size_t i = 0; i < cfg.upsample_strides.size(); ++i) {
    int out_ch = cfg.stage_channels(static_cast<int>(i));
    add_dense(params, rng, stage_prefix(static_cast<int>(i)),
              cfg.upsample_kernel * ch, out_ch);
    for (size_t j = 0; j < cfg.resblock_kernels.size(); ++j)
      for (size_t l = 0; l < cfg.resblock_dilations[j].size(); ++l)
        add_dense(params, rng,
                  res_prefix(static_cast<int>(i), static_cast<int>(j), static_cast<int>(l)),
                  cfg.resblock_kernels[j] * out_ch, out_ch);
    ch = out_ch;
  }
  add_dense(params, rng, "gen.out", cfg.io_kernel * ch, 1);
}

void init_discriminator_params(const DiscriminatorConfig& cfg, ad::ParamSet* params,
                               Rng* rng) {
  cfg.validate();
  for (int scale : cfg.scales) {
    int ch = 1;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      add_dense(params, rng, disc_prefix(scale) + ".l" + std::to_string(i),
                cfg.kernel * ch, cfg.channels[i]);
      ch = cfg.channels[i];
    }
    add_dense(params, rng, disc_prefix(scale) + ".out", cfg.patch_kernel * ch, 1);
  }
}

namespace {

ad::VarId dense_pair(ad::Tape& t, ad::ParamSet& params, const std::string& name,
                     bool trainable, ad::VarId* bias) {
  ad::VarId w = t.param_or_const(params.at(name + ".w"), trainable);
  *bias = t.param_or_const(params.at(name + ".b"), trainable);
  return w;
}

}  // namespace

ad::VarId upsample_stage_forward(ad::Tape& t, ad::VarId x, const GeneratorConfig& cfg,
                                 ad::ParamSet& params, int stage, bool trainable) {
  ad::VarId b;
  ad::VarId w = dense_pair(t, params, stage_prefix(stage), trainable, &b);
  x = t.leaky_relu(x, 0.1);
  x = t.conv_transpose1d(x, w, b, cfg.upsample_kernel, cfg.upsample_strides[stage]);

  // Residual block group: one branch per kernel size, branches averaged.
  ad::VarId acc = -1;
  for (size_t j = 0; j < cfg.resblock_kernels.size(); ++j) {
    ad::VarId y = x;
    for (size_t l = 0; l < cfg.resblock_dilations[j].size(); ++l) {
      ad::VarId rb;
      ad::VarId rw = dense_pair(t, params, res_prefix(stage, static_cast<int>(j),
                                                      static_cast<int>(l)),
                                trainable, &rb);
      ad::VarId z = t.conv1d_same(t.leaky_relu(y, 0.1), rw, rb, cfg.resblock_kernels[j],
                                  cfg.resblock_dilations[j][l]);
      y = t.add(y, z);
    }
    acc = (acc < 0) ? y : t.add(acc, y);
  }
  return t.scale(acc, 1.0 / static_cast<double>(cfg.resblock_kernels.size()));
}

ad::VarId generate_on_tape(ad::Tape& t, ad::VarId fusion, const GeneratorConfig& cfg,
                           ad::ParamSet& params, bool trainable) {
  const ad::ParamTensor& in_w = params.at("gen.in.w");
  int expect = in_w.rows / cfg.io_kernel;
  if (t.cols(fusion) != expect)
    throw ConfigError("generator expects fusion width " + std::to_string(expect) +
                      ", got " + std::to_string(t.cols(fusion)));
  ad::VarId b;
  ad::VarId w = dense_pair(t, params, "gen.in", trainable, &b);
  ad::VarId x = t.conv1d_same(fusion, w, b, cfg.io_kernel, 1);
  for (size_t i = 0; i < cfg.upsample_strides.size(); ++i)
    x = upsample_stage_forward(t, x, cfg, params, static_cast<int>(i), trainable);
  w = dense_pair(t, params, "gen.out", trainable, &b);
  x = t.conv1d_same(t.leaky_relu(x, 0.1), w, b, cfg.io_kernel, 1);
  return t.tanh_act(x);
}

DiscriminatorGraph discriminate_on_tape(ad::Tape& t, ad::VarId wave,
                                        const DiscriminatorConfig& cfg,
                                        ad::ParamSet& params, bool trainable) {
  if (t.cols(wave) != 1) throw ConfigError("discriminator input must be a sample column");
  if (t.rows(wave) < cfg.min_input_samples())
    throw DataError("discriminator input too short: " + std::to_string(t.rows(wave)) +
                    " samples < " + std::to_string(cfg.min_input_samples()));
  DiscriminatorGraph g;
  for (int scale : cfg.scales) {
    ad::VarId y = scale == 1 ? wave : t.avg_pool_rows(wave, scale);
    std::vector<ad::VarId> feats;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      ad::VarId b;
      ad::VarId w = dense_pair(t, params, disc_prefix(scale) + ".l" + std::to_string(i),
                               trainable, &b);
      y = t.leaky_relu(t.conv1d_strided(y, w, b, cfg.kernel, cfg.strides[i], cfg.kernel / 2),
                       0.1);
      feats.push_back(y);
    }
    ad::VarId b;
    ad::VarId w = dense_pair(t, params, disc_prefix(scale) + ".out", trainable, &b);
    g.scores.push_back(t.conv1d_same(y, w, b, cfg.patch_kernel, 1));
    g.features.push_back(std::move(feats));
  }
  return g;
}

Waveform generate(const FusionSequence& fusion, const GeneratorConfig& cfg,
                  ad::ParamSet& params, int sample_rate) {
  ad::Tape t;
  ad::VarId out = generate_on_tape(t, t.constant(fusion.frames), cfg, params,
                                   /*trainable=*/false);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples = t.value(out).v;
  return w;
}

DiscriminatorScores discriminate(const Waveform& w, const DiscriminatorConfig& cfg,
                                 ad::ParamSet& params) {
  ad::Tape t;
  Mat col(static_cast<int>(w.samples.size()), 1);
  col.v = w.samples;
  DiscriminatorGraph g = discriminate_on_tape(t, t.constant(col), cfg, params,
                                              /*trainable=*/false);
  DiscriminatorScores out;
  for (ad::VarId s : g.scores) out.scores.push_back(t.value(s));
  for (const auto& fl : g.features) {
    std::vector<Mat> ms;
    for (ad::VarId f : fl) ms.push_back(t.value(f));
    out.features.push_back(std::move(ms));
  }
  return out;
}

}  // namespace vconv
