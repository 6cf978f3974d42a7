#include <cmath>

#include "doctest.h"
#include "vconv/encoder.hpp"

using namespace vconv;
using ad::ParamSet;
using ad::Tape;
using ad::VarId;

namespace {

MelSpectrogram random_mel(int frames, int mels, Rng* rng) {
  MelSpectrogram m;
  m.frames = Mat(frames, mels);
  m.mel_count = mels;
  m.frame_hop = 64;
  m.sample_rate = 16000;
  for (auto& v : m.frames.v) v = rng->uniform(-1.0, 1.0);
  return m;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.layer_count = 2;
  cfg.hidden_size = 8;
  cfg.head_count = 2;
  cfg.conv_channels = {6, 8};
  cfg.conv_kernel = 5;
  cfg.ff_multiplier = 2;
  return cfg;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("config validation") {
  EncoderConfig cfg;
  CHECK_NOTHROW(cfg.validate(40));
  EncoderConfig bad = cfg;
  bad.head_count = 5;  // does not divide 64
  CHECK_THROWS_AS(bad.validate(40), ConfigError);
  bad = cfg;
  bad.conv_channels = {64, 32};  // last != hidden
  CHECK_THROWS_AS(bad.validate(40), ConfigError);
  bad = cfg;
  bad.conv_kernel = 4;
  CHECK_THROWS_AS(bad.validate(40), ConfigError);
  bad = cfg;
  bad.layer_count = 0;
  CHECK_THROWS_AS(bad.validate(40), ConfigError);
}

TEST_CASE("delta kernel reduces the stack to a channel projection") {
  EncoderConfig cfg;
  cfg.layer_count = 1;
  cfg.hidden_size = 3;
  cfg.head_count = 1;
  cfg.conv_channels = {3};
  cfg.conv_kernel = 5;
  Rng rng(7);
  ParamSet ps;
  init_encoder_params(cfg, 4, &ps, &rng);

  // zero everything except the center tap, which carries a known projection
  Mat proj(4, 3);
  for (auto& v : proj.v) v = rng.uniform(-1.0, 1.0);
  auto& w = ps.at("enc.conv0.w");
  std::fill(w.value.begin(), w.value.end(), 0.0);
  int center = cfg.conv_kernel / 2;
  for (int ci = 0; ci < 4; ++ci)
    for (int co = 0; co < 3; ++co) w.value[static_cast<size_t>(center * 4 + ci) * 3 + co] = proj.at(ci, co);

  MelSpectrogram mel = random_mel(6, 4, &rng);
  Tape t;
  VarId out = conv_stack_forward(t, t.constant(mel.frames), cfg, ps, false);
  Mat got = t.value(out);
  Mat expect(6, 3);
  lin::matmul(mel.frames.v.data(), proj.v.data(), expect.v.data(), 6, 4, 3);
  REQUIRE(got.rows == 6);
  for (size_t i = 0; i < got.v.size(); ++i) CHECK(got.v[i] == doctest::Approx(expect.v[i]).epsilon(1e-12));
}

TEST_CASE("zero input with zero biases stays zero") {
  EncoderConfig cfg = tiny_config();
  Rng rng(8);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  MelSpectrogram mel;
  mel.frames = Mat(7, 5);
  Tape t;
  VarId out = conv_stack_forward(t, t.constant(mel.frames), cfg, ps, false);
  for (double v : t.value(out).v) CHECK(v == 0.0);
}

TEST_CASE("conv receptive field is exactly the kernel span") {
  EncoderConfig cfg;
  cfg.layer_count = 1;
  cfg.hidden_size = 4;
  cfg.head_count = 1;
  cfg.conv_channels = {4};  // single layer: receptive field +-2 at kernel 5
  cfg.conv_kernel = 5;
  Rng rng(9);
  ParamSet ps;
  init_encoder_params(cfg, 3, &ps, &rng);
  MelSpectrogram mel = random_mel(7, 3, &rng);

  Tape t0;
  Mat base = t0.value(conv_stack_forward(t0, t0.constant(mel.frames), cfg, ps, false));

  // perturbing frame 6 must leave output frames 0..3 bit-identical
  MelSpectrogram shifted = mel;
  for (int j = 0; j < 3; ++j) shifted.frames.at(6, j) += 1.0;
  Tape t1;
  Mat moved = t1.value(conv_stack_forward(t1, t1.constant(shifted.frames), cfg, ps, false));
  for (int tt = 0; tt <= 3; ++tt)
    for (int j = 0; j < 4; ++j) CHECK(moved.at(tt, j) == base.at(tt, j));
  // ...and output frame 4 (distance 2) must change
  bool changed = false;
  for (int j = 0; j < 4; ++j) changed = changed || moved.at(4, j) != base.at(4, j);
  CHECK(changed);
}

TEST_CASE("attention rows sum to one") {
  EncoderConfig cfg = tiny_config();
  Rng rng(10);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  Tape t;
  Mat x(9, 8);
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  AttentionTrace trace;
  attention_layer_forward(t, t.constant(x), cfg, ps, 0, false, &trace);
  REQUIRE(trace.probs.size() == 2);
  for (VarId pid : trace.probs) {
    Mat p = t.value(pid);
    REQUIRE(p.rows == 9);
    REQUIRE(p.cols == 9);
    for (int i = 0; i < p.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < p.cols; ++j) s += p.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("single frame attends only to itself") {
  EncoderConfig cfg = tiny_config();
  Rng rng(11);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  Tape t;
  Mat x(1, 8);
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  AttentionTrace trace;
  attention_layer_forward(t, t.constant(x), cfg, ps, 0, false, &trace);
  for (VarId pid : trace.probs) CHECK(t.value(pid).v[0] == doctest::Approx(1.0).epsilon(1e-12));

  // the attended context is exactly the value projection of the frame
  Tape t2;
  VarId xin = t2.constant(x);
  VarId ln = t2.layer_norm(xin, t2.constant(1, 8, ps.at("enc.l0.ln1.g").value.data()),
                           t2.constant(1, 8, ps.at("enc.l0.ln1.b").value.data()));
  VarId vproj = t2.add_rowvec(t2.matmul(ln, t2.constant(8, 8, ps.at("enc.l0.wv").value.data())),
                              t2.constant(1, 8, ps.at("enc.l0.bv").value.data()));
  Mat vex = t2.value(vproj);
  Mat ctx = t.value(trace.context);
  REQUIRE(ctx.rows == 1);
  for (int j = 0; j < 8; ++j) CHECK(ctx.at(0, j) == doctest::Approx(vex.at(0, j)).epsilon(1e-12));
}

TEST_CASE("attention layer is permutation equivariant") {
  EncoderConfig cfg = tiny_config();
  Rng rng(12);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  Mat x(6, 8);
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  Mat px(6, 8);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j) px.at(i, j) = x.at(perm[i], j);

  Tape ta, tb;
  Mat y = ta.value(attention_layer_forward(ta, ta.constant(x), cfg, ps, 0, false));
  Mat py = tb.value(attention_layer_forward(tb, tb.constant(px), cfg, ps, 0, false));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(py.at(i, j) == doctest::Approx(y.at(perm[i], j)).epsilon(1e-9));
}

TEST_CASE("encode output shape contract") {
  EncoderConfig cfg = tiny_config();
  Rng rng(13);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  for (int frames : {1, 7, 80}) {
    MelSpectrogram mel = random_mel(frames, 5, &rng);
    ContentEmbedding e = encode(mel, cfg, ps);
    CHECK(e.frames.rows == frames);
    CHECK(e.frames.cols == 8);
    CHECK(e.hidden_size == 8);
    for (double v : e.frames.v) CHECK(std::isfinite(v));
  }
}

TEST_CASE("constant input gives identical interior frames") {
  EncoderConfig cfg = tiny_config();
  Rng rng(14);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  MelSpectrogram mel;
  mel.frames = Mat(20, 5);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 5; ++j) mel.frames.at(i, j) = 0.3 * (j + 1);
  ContentEmbedding e = encode(mel, cfg, ps);
  // two stride-1 kernel-5 convs reach +-4 frames; interior is [4, 15]
  for (int t = 5; t <= 15; ++t)
    for (int j = 0; j < 8; ++j) CHECK(e.frames.at(t, j) == e.frames.at(4, j));
}

TEST_CASE("sensitivity to the first frame") {
  EncoderConfig cfg = tiny_config();
  Rng rng(15);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  MelSpectrogram a = random_mel(10, 5, &rng);
  MelSpectrogram b = a;
  b.frames.at(0, 2) += 0.5;
  ContentEmbedding ea = encode(a, cfg, ps);
  ContentEmbedding eb = encode(b, cfg, ps);
  bool differs = false;
  for (size_t i = 0; i < ea.frames.v.size(); ++i) differs = differs || ea.frames.v[i] != eb.frames.v[i];
  CHECK(differs);
}

TEST_CASE("encode is deterministic and so is init") {
  EncoderConfig cfg = tiny_config();
  Rng rng1(21), rng2(21);
  ParamSet ps1, ps2;
  init_encoder_params(cfg, 5, &ps1, &rng1);
  init_encoder_params(cfg, 5, &ps2, &rng2);
  auto all1 = ps1.all();
  auto all2 = ps2.all();
  REQUIRE(all1.size() == all2.size());
  for (size_t i = 0; i < all1.size(); ++i) {
    CHECK(all1[i]->name == all2[i]->name);
    CHECK(all1[i]->value == all2[i]->value);
  }
  Rng rng3(22);
  MelSpectrogram mel = random_mel(12, 5, &rng3);
  ContentEmbedding a = encode(mel, cfg, ps1);
  ContentEmbedding b = encode(mel, cfg, ps1);
  CHECK(a.frames.v == b.frames.v);
}

TEST_CASE("gradients: conv stack") {
  EncoderConfig cfg;
  cfg.layer_count = 1;
  cfg.hidden_size = 6;
  cfg.head_count = 2;
  cfg.conv_channels = {4, 6};
  cfg.conv_kernel = 3;
  Rng rng(31);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  Mat mel(6, 5);
  for (auto& v : mel.v) v = rng.uniform(-1.0, 1.0);
  Mat target(6, 6);
  for (auto& v : target.v) v = rng.uniform(-0.5, 0.5);

  auto build = [&](Tape& t) -> ad::VarId {
    return t.mse_vs_const(conv_stack_forward(t, t.constant(mel), cfg, ps, true), target);
  };
  std::vector<ad::ParamTensor*> probes = {&ps.at("enc.conv0.w"), &ps.at("enc.conv0.b"),
                                          &ps.at("enc.conv1.w"), &ps.at("enc.conv1.b")};
  CHECK(ad::finite_difference_check(build, probes) < 1e-4);
}

TEST_CASE("gradients: attention layer") {
  EncoderConfig cfg = tiny_config();
  Rng rng(32);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  Mat x(5, 8);
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  Mat target(5, 8);
  for (auto& v : target.v) v = rng.uniform(-0.5, 0.5);

  auto build = [&](Tape& t) -> ad::VarId {
    return t.mse_vs_const(attention_layer_forward(t, t.constant(x), cfg, ps, 0, true), target);
  };
  std::vector<ad::ParamTensor*> probes;
  for (const char* leaf : {"ln1.g", "ln1.b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                           "ln2.g", "ln2.b", "ff1.w", "ff1.b", "ff2.w", "ff2.b"})
    probes.push_back(&ps.at(std::string("enc.l0.") + leaf));
  CHECK(ad::finite_difference_check(build, probes) < 1e-4);
}

TEST_CASE("gradients: full tiny encoder") {
  EncoderConfig cfg;
  cfg.layer_count = 2;
  cfg.hidden_size = 6;
  cfg.head_count = 2;
  cfg.conv_channels = {6};
  cfg.conv_kernel = 3;
  cfg.ff_multiplier = 2;
  Rng rng(33);
  ParamSet ps;
  init_encoder_params(cfg, 4, &ps, &rng);
  Mat mel(5, 4);
  for (auto& v : mel.v) v = rng.uniform(-1.0, 1.0);
  Mat target(5, 6);
  for (auto& v : target.v) v = rng.uniform(-0.5, 0.5);

  auto build = [&](Tape& t) -> ad::VarId {
    return t.mse_vs_const(encode_on_tape(t, t.constant(mel), cfg, ps, true), target);
  };
  CHECK(ad::finite_difference_check(build, ps.all()) < 1e-4);
}

TEST_CASE("frozen path blocks gradients") {
  EncoderConfig cfg = tiny_config();
  Rng rng(34);
  ParamSet ps;
  init_encoder_params(cfg, 5, &ps, &rng);
  Mat mel(4, 5);
  for (auto& v : mel.v) v = rng.uniform(-1.0, 1.0);
  ps.zero_grads();
  Tape t;
  ad::VarId out = encode_on_tape(t, t.constant(mel), cfg, ps, false);
  // nothing trainable on this path: the loss has no parameter dependence
  CHECK(!t.node(out).needs_grad);
}

}  // TEST_SUITE
