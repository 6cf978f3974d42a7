#include <cmath>
#include <vector>

#include "doctest.h"
#include "vconv/errors.hpp"
#include "vconv/fusion.hpp"

using namespace vconv;

namespace {

Mat random_mat(Rng* rng, int rows, int cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (double& v : m.v) v = rng->normal() * scale;
  return m;
}

Mat random_f0_channels(Rng* rng, int rows) {
  Mat m(rows, 2);
  for (int i = 0; i < rows; ++i) {
    m.at(i, 0) = rng->normal();
    m.at(i, 1) = (i % 3 == 0) ? 0.0 : 1.0;
  }
  return m;
}

F0Contour make_contour(const std::vector<double>& hz) {
  F0Contour c;
  c.f0_hz = hz;
  c.voiced.resize(hz.size());
  for (size_t i = 0; i < hz.size(); ++i) c.voiced[i] = hz[i] > 0.0 ? 1 : 0;
  c.frame_hop = 64;
  c.sample_rate = 16000;
  return c;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("layout arithmetic and span coverage") {
  FusionLayout l = fusion_layout(4, 4);
  CHECK(l.width() == 12);
  CHECK(l.src_emb_begin == 0);
  CHECK(l.src_emb_end == 4);
  CHECK(l.src_f0_begin == 4);
  CHECK(l.src_f0_end == 6);
  CHECK(l.tgt_emb_begin == 6);
  CHECK(l.tgt_emb_end == 10);
  CHECK(l.tgt_f0_begin == 10);
  CHECK(l.tgt_f0_end == 12);

  // Spans are adjacent, disjoint, and cover [0, width) for any sizes.
  for (int h = 1; h <= 9; h += 4) {
    for (int s = 1; s <= 9; s += 2) {
      FusionLayout ll = fusion_layout(h, s);
      CHECK(ll.src_emb_end == ll.src_f0_begin);
      CHECK(ll.src_f0_end == ll.tgt_emb_begin);
      CHECK(ll.tgt_emb_end == ll.tgt_f0_begin);
      CHECK(ll.width() == h + 2 + s + 2);
    }
  }
  CHECK_THROWS_AS(fusion_layout(0, 4), ConfigError);
}

TEST_CASE("fuse places every input bit-exactly in its span") {
  Rng rng(11);
  const int t = 7, h = 5, s = 3;
  Mat se = random_mat(&rng, t, h);
  Mat sf = random_f0_channels(&rng, t);
  Mat te = random_mat(&rng, t, s);
  Mat tf = random_f0_channels(&rng, t);

  FusionSequence fs = fuse(se, sf, te, tf);
  REQUIRE(fs.frames.rows == t);
  REQUIRE(fs.frames.cols == h + 2 + s + 2);
  const FusionLayout& l = fs.layout;
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < h; ++j) CHECK(fs.frames.at(i, l.src_emb_begin + j) == se.at(i, j));
    for (int j = 0; j < 2; ++j) CHECK(fs.frames.at(i, l.src_f0_begin + j) == sf.at(i, j));
    for (int j = 0; j < s; ++j) CHECK(fs.frames.at(i, l.tgt_emb_begin + j) == te.at(i, j));
    for (int j = 0; j < 2; ++j) CHECK(fs.frames.at(i, l.tgt_f0_begin + j) == tf.at(i, j));
  }
}

TEST_CASE("zero source leaves the source spans exactly zero") {
  Rng rng(12);
  const int t = 4, h = 3;
  Mat se(t, h), sf(t, 2);
  Mat te = random_mat(&rng, t, h);
  Mat tf = random_f0_channels(&rng, t);
  FusionSequence fs = fuse(se, sf, te, tf);
  for (int i = 0; i < t; ++i) {
    for (int c = 0; c < fs.layout.src_f0_end; ++c) CHECK(fs.frames.at(i, c) == 0.0);
    bool any = false;
    for (int c = fs.layout.tgt_emb_begin; c < fs.layout.width(); ++c)
      if (fs.frames.at(i, c) != 0.0) any = true;
    CHECK(any);
  }
}

TEST_CASE("swapping the speakers swaps the span contents exactly") {
  Rng rng(13);
  const int t = 6, h = 4;
  Mat ae = random_mat(&rng, t, h), af = random_f0_channels(&rng, t);
  Mat be = random_mat(&rng, t, h), bf = random_f0_channels(&rng, t);

  FusionSequence ab = fuse(ae, af, be, bf);
  FusionSequence ba = fuse(be, bf, ae, af);
  const FusionLayout& l = ab.layout;
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < h + 2; ++j)
      CHECK(ab.frames.at(i, l.src_emb_begin + j) == ba.frames.at(i, l.tgt_emb_begin + j));
    for (int j = 0; j < h + 2; ++j)
      CHECK(ab.frames.at(i, l.tgt_emb_begin + j) == ba.frames.at(i, l.src_emb_begin + j));
  }
}

TEST_CASE("fuse shape errors") {
  Rng rng(14);
  Mat se = random_mat(&rng, 5, 4);
  Mat sf = random_f0_channels(&rng, 5);
  Mat te = random_mat(&rng, 5, 4);
  Mat tf = random_f0_channels(&rng, 5);

  Mat sf_short = random_f0_channels(&rng, 4);
  CHECK_THROWS_AS(fuse(se, sf_short, te, tf), ConfigError);
  Mat te_short = random_mat(&rng, 4, 4);
  CHECK_THROWS_AS(fuse(se, sf, te_short, tf), ConfigError);
  Mat sf_wide(5, 3);
  CHECK_THROWS_AS(fuse(se, sf_wide, te, tf), ConfigError);
  CHECK_THROWS_AS(fuse(se, sf, std::vector<double>{}, 5.0), ConfigError);
}

TEST_CASE("speaker-id mode broadcasts the vector and the f0 stats") {
  Rng rng(15);
  const int t = 5, h = 4;
  Mat se = random_mat(&rng, t, h);
  Mat sf = random_f0_channels(&rng, t);
  std::vector<double> vec = {0.5, -0.25, 0.125};
  double med = std::log(220.0);

  FusionSequence fs = fuse(se, sf, vec, med);
  CHECK(fs.frames.cols == h + 2 + 3 + 2);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < 3; ++j)
      CHECK(fs.frames.at(i, fs.layout.tgt_emb_begin + j) == vec[j]);
    CHECK(fs.frames.at(i, fs.layout.tgt_f0_begin) == med);
    CHECK(fs.frames.at(i, fs.layout.tgt_f0_begin + 1) == 1.0);
  }

  // With the vector dimension matching the encoder width, both target modes
  // produce the same total width.
  Mat te = random_mat(&rng, t, h);
  Mat tf = random_f0_channels(&rng, t);
  std::vector<double> vec_h(h, 0.1);
  CHECK(fuse(se, sf, te, tf).frames.cols == fuse(se, sf, vec_h, med).frames.cols);
}

TEST_CASE("speaker table init, lookup, and stats") {
  ad::ParamSet ps;
  Rng rng(77);
  init_speaker_table(&ps, 8, 64, &rng);
  CHECK(speaker_count(ps) == 8);

  // Freshly initialized rows: mean near 0, std near 0.02.
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (int id = 0; id < 8; ++id) {
    std::vector<double> v = speaker_vector(ps, id);
    REQUIRE(v.size() == 64);
    for (double x : v) {
      sum += x;
      sq += x * x;
      ++n;
    }
  }
  double mean = sum / n;
  double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.005);
  CHECK(sd > 0.015);
  CHECK(sd < 0.025);

  CHECK_THROWS_AS(speaker_vector(ps, 8), ConfigError);
  CHECK_THROWS_AS(speaker_vector(ps, -1), ConfigError);
  ad::ParamSet empty;
  CHECK(speaker_count(empty) == 0);
  CHECK_THROWS_AS(speaker_vector(empty, 0), ConfigError);

  CHECK(speaker_f0_median(ps, 3) == 0.0);
  set_speaker_f0_median(&ps, 3, 5.39);
  CHECK(speaker_f0_median(ps, 3) == 5.39);
  CHECK(speaker_f0_median(ps, 2) == 0.0);
  CHECK_FALSE(ps.at("spk.f0_median").trainable);
  CHECK(ps.at("spk.table").trainable);
}

TEST_CASE("align_frames truncates to the shorter part") {
  EncoderConfig cfg;
  ContentEmbedding emb;
  emb.hidden_size = 3;

  SUBCASE("equal lengths pass through") {
    emb.frames = Mat(10, 3);
    for (int i = 0; i < 10; ++i) emb.frames.at(i, 0) = i;
    F0Contour c = make_contour(std::vector<double>(10, 220.0));
    AlignedFeatures a = align_frames(emb, c);
    CHECK(a.emb.rows == 10);
    CHECK(a.f0.rows == 10);
    for (int i = 0; i < 10; ++i) CHECK(a.emb.at(i, 0) == double(i));
  }

  SUBCASE("one extra embedding frame is dropped") {
    emb.frames = Mat(11, 3);
    F0Contour c = make_contour(std::vector<double>(10, 220.0));
    AlignedFeatures a = align_frames(emb, c);
    CHECK(a.emb.rows == 10);
    CHECK(a.f0.rows == 10);
  }

  SUBCASE("one extra f0 frame is dropped") {
    emb.frames = Mat(10, 3);
    F0Contour c = make_contour(std::vector<double>(11, 220.0));
    AlignedFeatures a = align_frames(emb, c);
    CHECK(a.emb.rows == 10);
    CHECK(a.f0.rows == 10);
  }

  SUBCASE("larger mismatch is a configuration error") {
    emb.frames = Mat(100, 3);
    F0Contour c = make_contour(std::vector<double>(90, 220.0));
    CHECK_THROWS_AS(align_frames(emb, c), ConfigError);
  }

  SUBCASE("f0 channels match normalize_f0 output") {
    emb.frames = Mat(4, 3);
    F0Contour c = make_contour({220.0, 0.0, 440.0, 110.0});
    Mat expect = normalize_f0(c);
    AlignedFeatures a = align_frames(emb, c);
    for (int i = 0; i < 4; ++i) {
      CHECK(a.f0.at(i, 0) == expect.at(i, 0));
      CHECK(a.f0.at(i, 1) == expect.at(i, 1));
    }
  }
}

TEST_CASE("resample_rows nearest-index mapping") {
  Mat m(4, 2);
  for (int i = 0; i < 4; ++i) {
    m.at(i, 0) = 10.0 * i;
    m.at(i, 1) = -i;
  }

  Mat same = resample_rows(m, 4);
  for (int i = 0; i < 4; ++i) CHECK(same.at(i, 0) == m.at(i, 0));

  // Upsample 4 -> 8: row i reads floor(i * 4 / 8) = i / 2.
  Mat up = resample_rows(m, 8);
  REQUIRE(up.rows == 8);
  for (int i = 0; i < 8; ++i) CHECK(up.at(i, 0) == m.at(i / 2, 0));

  // Downsample 4 -> 2: rows 0 and 2.
  Mat down = resample_rows(m, 2);
  CHECK(down.at(0, 0) == 0.0);
  CHECK(down.at(1, 0) == 20.0);

  // A single row broadcasts.
  Mat one(1, 2);
  one.at(0, 0) = 7.0;
  Mat rep = resample_rows(one, 5);
  for (int i = 0; i < 5; ++i) CHECK(rep.at(i, 0) == 7.0);

  CHECK_THROWS_AS(resample_rows(m, 0), ConfigError);
}

TEST_CASE("tape fuse matches the plain path and routes gradients") {
  Rng rng(21);
  const int t = 5, h = 4;
  Mat sf = random_f0_channels(&rng, t);

  ad::ParamSet ps;
  init_speaker_table(&ps, 3, h, &rng);
  set_speaker_f0_median(&ps, 1, 5.0);
  ad::ParamTensor& src = ps.add("test.src_emb", t, h);
  for (double& v : src.value) v = rng.normal();

  // Plain and tape paths agree cell for cell in speaker-id mode.
  Mat src_m(t, h);
  src_m.v = src.value;
  FusionSequence plain = fuse(src_m, sf, speaker_vector(ps, 1), speaker_f0_median(ps, 1));

  ad::Tape tape;
  ad::VarId se = tape.param(src);
  ad::VarId sfv = tape.constant(sf);
  ad::VarId te, tf;
  speaker_target_on_tape(tape, ps, 1, t, /*trainable=*/true, &te, &tf);
  ad::VarId fused = fuse_on_tape(tape, se, sfv, te, tf);
  REQUIRE(tape.rows(fused) == plain.frames.rows);
  REQUIRE(tape.cols(fused) == plain.frames.cols);
  const Mat& tv = tape.value(fused);
  for (size_t i = 0; i < plain.frames.v.size(); ++i) CHECK(tv.v[i] == plain.frames.v[i]);

  // Gradient of sum(fused) w.r.t. each source cell is 1; w.r.t. the selected
  // speaker row is t (broadcast to t frames); other rows get nothing.
  ps.zero_grads();
  tape.backward(tape.global_sum(fused));
  for (double g : src.grad) CHECK(g == doctest::Approx(1.0));
  ad::ParamTensor& table = ps.at("spk.table");
  for (int c = 0; c < h; ++c) {
    CHECK(table.grad[0 * h + c] == 0.0);
    CHECK(table.grad[1 * h + c] == doctest::Approx(double(t)));
    CHECK(table.grad[2 * h + c] == 0.0);
  }
}

TEST_CASE("gradients: fused conditioning through a projection") {
  Rng rng(22);
  const int t = 4, h = 3;
  ad::ParamSet ps;
  init_speaker_table(&ps, 2, h, &rng);
  set_speaker_f0_median(&ps, 0, 5.2);
  ad::ParamTensor& src = ps.add("test.src_emb", t, h);
  for (double& v : src.value) v = rng.normal(0.0, 0.5);
  ad::ParamTensor& proj = ps.add("test.proj", h + 2 + h + 2, 2);
  for (double& v : proj.value) v = rng.normal(0.0, 0.3);

  Mat sf = random_f0_channels(&rng, t);
  auto build = [&](ad::Tape& tape) {
    ad::VarId se = tape.param(src);
    ad::VarId sfv = tape.constant(sf);
    ad::VarId te, tf;
    speaker_target_on_tape(tape, ps, 0, t, true, &te, &tf);
    ad::VarId fused = fuse_on_tape(tape, se, sfv, te, tf);
    return tape.global_sum(tape.matmul(fused, tape.param(proj)));
  };
  double err = ad::finite_difference_check(build, ps.all());
  CHECK(err < 1e-6);
}

TEST_CASE("frozen speaker path carries no gradient") {
  Rng rng(23);
  ad::ParamSet ps;
  init_speaker_table(&ps, 2, 3, &rng);
  ad::Tape tape;
  ad::VarId te, tf;
  speaker_target_on_tape(tape, ps, 0, 4, /*trainable=*/false, &te, &tf);
  CHECK_FALSE(tape.node(te).needs_grad);
  CHECK_FALSE(tape.node(tf).needs_grad);

  // Mixing in a live parameter: backward runs but the frozen table stays 0.
  ad::ParamTensor& w = ps.add("test.w", 4, 3);
  for (double& v : w.value) v = 0.5;
  ad::VarId loss = tape.global_sum(tape.mul(te, tape.param(w)));
  ps.zero_grads();
  tape.backward(loss);
  for (double g : ps.at("spk.table").grad) CHECK(g == 0.0);
  bool any = false;
  for (double g : w.grad) any = any || g != 0.0;
  CHECK(any);
}

}  // TEST_SUITE
