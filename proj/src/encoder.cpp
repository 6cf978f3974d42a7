#include "vconv/encoder.hpp"

#include <cmath>
#include <string>

#include "vconv/errors.hpp"

namespace vconv {

namespace {

std::string conv_name(int i, const char* leaf) {
  return "enc.conv" + std::to_string(i) + "." + leaf;
}

std::string layer_name(int i, const char* leaf) {
  return "enc.l" + std::to_string(i) + "." + leaf;
}

void init_dense(ad::ParamTensor& t, Rng* rng, double std_dev = 0.02) {
  for (auto& v : t.value) v = rng->normal(0.0, std_dev);
}

}  // namespace

void EncoderConfig::validate(int mel_count) const {
  if (layer_count < 1) throw ConfigError("encoder.layer_count must be >= 1");
  if (hidden_size < 1) throw ConfigError("encoder.hidden_size must be >= 1");
  if (head_count < 1 || hidden_size % head_count != 0)
    throw ConfigError("encoder.head_count must divide encoder.hidden_size");
  if (conv_channels.empty()) throw ConfigError("encoder.conv_channels must be non-empty");
  for (int c : conv_channels)
    if (c < 1) throw ConfigError("encoder.conv_channels entries must be >= 1");
  if (conv_channels.back() != hidden_size)
    throw ConfigError("encoder.conv_channels must end at encoder.hidden_size");
  if (conv_kernel < 1 || conv_kernel % 2 == 0)
    throw ConfigError("encoder.conv_kernel must be odd and >= 1");
  if (ff_multiplier < 1) throw ConfigError("encoder.ff_multiplier must be >= 1");
  if (mel_count < 1) throw ConfigError("dsp.mel_count must be >= 1");
}

void init_encoder_params(const EncoderConfig& cfg, int mel_count, ad::ParamSet* params, Rng* rng) {
  cfg.validate(mel_count);
  int cin = mel_count;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    int cout = cfg.conv_channels[i];
    auto& w = params->add(conv_name(static_cast<int>(i), "w"), cfg.conv_kernel * cin, cout);
    init_dense(w, rng);
    params->add(conv_name(static_cast<int>(i), "b"), 1, cout);
    cin = cout;
  }
  int h = cfg.hidden_size;
  for (int l = 0; l < cfg.layer_count; ++l) {
    auto& ln1g = params->add(layer_name(l, "ln1.g"), 1, h);
    std::fill(ln1g.value.begin(), ln1g.value.end(), 1.0);
    params->add(layer_name(l, "ln1.b"), 1, h);
    for (const char* proj : {"wq", "wk", "wv", "wo"}) init_dense(params->add(layer_name(l, proj), h, h), rng);
    for (const char* bias : {"bq", "bk", "bv", "bo"}) params->add(layer_name(l, bias), 1, h);
    auto& ln2g = params->add(layer_name(l, "ln2.g"), 1, h);
    std::fill(ln2g.value.begin(), ln2g.value.end(), 1.0);
    params->add(layer_name(l, "ln2.b"), 1, h);
    int ff = cfg.ff_multiplier * h;
    init_dense(params->add(layer_name(l, "ff1.w"), h, ff), rng);
    params->add(layer_name(l, "ff1.b"), 1, ff);
    init_dense(params->add(layer_name(l, "ff2.w"), ff, h), rng);
    params->add(layer_name(l, "ff2.b"), 1, h);
  }
}

ad::VarId conv_stack_forward(ad::Tape& t, ad::VarId mel, const EncoderConfig& cfg,
                             ad::ParamSet& params, bool trainable) {
  ad::VarId x = mel;
  int n = static_cast<int>(cfg.conv_channels.size());
  for (int i = 0; i < n; ++i) {
    ad::VarId w = t.param_or_const(params.at(conv_name(i, "w")), trainable);
    ad::VarId b = t.param_or_const(params.at(conv_name(i, "b")), trainable);
    x = t.conv1d_same(x, w, b, cfg.conv_kernel, 1);
    if (i + 1 < n) x = t.gelu(x);
  }
  return x;
}

ad::VarId attention_layer_forward(ad::Tape& t, ad::VarId x, const EncoderConfig& cfg,
                                  ad::ParamSet& params, int layer, bool trainable,
                                  AttentionTrace* trace) {
  int h = cfg.hidden_size;
  int heads = cfg.head_count;
  int dh = h / heads;
  auto p = [&](const char* leaf) { return t.param_or_const(params.at(layer_name(layer, leaf)), trainable); };

  ad::VarId ln1 = t.layer_norm(x, p("ln1.g"), p("ln1.b"));
  ad::VarId q = t.add_rowvec(t.matmul(ln1, p("wq")), p("bq"));
  ad::VarId k = t.add_rowvec(t.matmul(ln1, p("wk")), p("bk"));
  ad::VarId v = t.add_rowvec(t.matmul(ln1, p("wv")), p("bv"));

  std::vector<ad::VarId> ctx;
  ctx.reserve(heads);
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int hd = 0; hd < heads; ++hd) {
    ad::VarId qh = t.slice_cols(q, hd * dh, (hd + 1) * dh);
    ad::VarId kh = t.slice_cols(k, hd * dh, (hd + 1) * dh);
    ad::VarId vh = t.slice_cols(v, hd * dh, (hd + 1) * dh);
    ad::VarId scores = t.scale(t.matmul_nt(qh, kh), inv_scale);
    ad::VarId probs = t.softmax_rows(scores);
    if (trace) trace->probs.push_back(probs);
    ctx.push_back(t.matmul(probs, vh));
  }
  ad::VarId context = t.concat_cols(ctx);
  ad::VarId attn = t.add_rowvec(t.matmul(context, p("wo")), p("bo"));
  if (trace) {
    trace->context = context;
    trace->attn_branch = attn;
  }
  x = t.add(x, attn);

  ad::VarId ln2 = t.layer_norm(x, p("ln2.g"), p("ln2.b"));
  ad::VarId ff = t.add_rowvec(t.matmul(ln2, p("ff1.w")), p("ff1.b"));
  ff = t.gelu(ff);
  ff = t.add_rowvec(t.matmul(ff, p("ff2.w")), p("ff2.b"));
  return t.add(x, ff);
}

ad::VarId encode_on_tape(ad::Tape& t, ad::VarId mel, const EncoderConfig& cfg,
                         ad::ParamSet& params, bool trainable) {
  ad::VarId x = conv_stack_forward(t, mel, cfg, params, trainable);
  for (int l = 0; l < cfg.layer_count; ++l)
    x = attention_layer_forward(t, x, cfg, params, l, trainable);
  return x;
}

ContentEmbedding encode(const MelSpectrogram& mel, const EncoderConfig& cfg,
                        ad::ParamSet& params) {
  if (mel.frames.rows < 1) throw DataError("encode: empty mel input");
  ad::Tape t;
  ad::VarId out = encode_on_tape(t, t.constant(mel.frames), cfg, params, false);
  ContentEmbedding e;
  e.frames = t.value(out);
  e.hidden_size = cfg.hidden_size;
  return e;
}

}  // namespace vconv
