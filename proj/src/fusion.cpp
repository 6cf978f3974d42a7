#include "vconv/fusion.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "vconv/errors.hpp"

namespace vconv {

FusionLayout fusion_layout(int src_hidden, int tgt_width) {
  if (src_hidden < 1 || tgt_width < 1)
    throw ConfigError("fusion layout: part widths must be positive");
  FusionLayout l;
  l.src_emb_begin = 0;
  l.src_emb_end = src_hidden;
  l.src_f0_begin = l.src_emb_end;
  l.src_f0_end = l.src_f0_begin + 2;
  l.tgt_emb_begin = l.src_f0_end;
  l.tgt_emb_end = l.tgt_emb_begin + tgt_width;
  l.tgt_f0_begin = l.tgt_emb_end;
  l.tgt_f0_end = l.tgt_f0_begin + 2;
  return l;
}

void init_speaker_table(ad::ParamSet* params, int speaker_count, int dim, Rng* rng) {
  if (speaker_count < 1 || dim < 1)
    throw ConfigError("speaker table: speaker_count and dim must be positive");
  ad::ParamTensor& table = params->add("spk.table", speaker_count, dim);
  for (double& v : table.value) v = rng->normal(0.0, 0.02);
  params->add("spk.f0_median", speaker_count, 1, /*trainable=*/false);
}

int speaker_count(const ad::ParamSet& params) {
  const ad::ParamTensor* t = params.find("spk.table");
  return t ? t->rows : 0;
}

static const ad::ParamTensor& table_checked(const ad::ParamSet& params, const char* name,
                                            int speaker_id) {
  const ad::ParamTensor* t = params.find(name);
  if (!t) throw ConfigError(std::string(name) + ": speaker table not initialized");
  if (speaker_id < 0 || speaker_id >= t->rows)
    throw ConfigError("unknown speaker id " + std::to_string(speaker_id) + " (table has " +
                      std::to_string(t->rows) + " speakers)");
  return *t;
}

std::vector<double> speaker_vector(const ad::ParamSet& params, int speaker_id) {
  const ad::ParamTensor& t = table_checked(params, "spk.table", speaker_id);
  const double* row = t.value.data() + static_cast<size_t>(speaker_id) * t.cols;
  return std::vector<double>(row, row + t.cols);
}

double speaker_f0_median(const ad::ParamSet& params, int speaker_id) {
  return table_checked(params, "spk.f0_median", speaker_id).value[speaker_id];
}

void set_speaker_f0_median(ad::ParamSet* params, int speaker_id, double median_log_f0) {
  table_checked(*params, "spk.f0_median", speaker_id);
  params->at("spk.f0_median").value[speaker_id] = median_log_f0;
}

AlignedFeatures align_frames(const ContentEmbedding& emb, const F0Contour& f0) {
  int te = emb.frames.rows;
  int tf = f0.frames();
  if (std::abs(te - tf) > 1)
    throw ConfigError("align_frames: embedding has " + std::to_string(te) +
                      " frames but f0 has " + std::to_string(tf) +
                      "; hops disagree upstream");
  int t = te < tf ? te : tf;
  AlignedFeatures out;
  Mat f0m = normalize_f0(f0);
  out.emb = Mat(t, emb.frames.cols);
  out.f0 = Mat(t, 2);
  for (int i = 0; i < t; ++i) {
    const double* se = emb.frames.row(i);
    for (int c = 0; c < emb.frames.cols; ++c) out.emb.at(i, c) = se[c];
    out.f0.at(i, 0) = f0m.at(i, 0);
    out.f0.at(i, 1) = f0m.at(i, 1);
  }
  return out;
}

Mat resample_rows(const Mat& m, int new_t) {
  if (m.rows < 1 || new_t < 1) throw ConfigError("resample_rows: empty input");
  if (new_t == m.rows) return m;
  Mat out(new_t, m.cols);
  for (int i = 0; i < new_t; ++i) {
    int src = static_cast<int>(static_cast<long long>(i) * m.rows / new_t);
    const double* s = m.row(src);
    double* d = out.row(i);
    for (int c = 0; c < m.cols; ++c) d[c] = s[c];
  }
  return out;
}

FusionSequence fuse(const Mat& src_emb, const Mat& src_f0,
                    const Mat& tgt_emb, const Mat& tgt_f0) {
  int t = src_emb.rows;
  if (src_f0.rows != t || tgt_emb.rows != t || tgt_f0.rows != t)
    throw ConfigError("fuse: frame counts disagree (" + std::to_string(t) + ", " +
                      std::to_string(src_f0.rows) + ", " + std::to_string(tgt_emb.rows) +
                      ", " + std::to_string(tgt_f0.rows) + ")");
  if (src_f0.cols != 2 || tgt_f0.cols != 2)
    throw ConfigError("fuse: f0 parts must have exactly 2 channels");

  FusionSequence out;
  out.layout = fusion_layout(src_emb.cols, tgt_emb.cols);
  out.frames = Mat(t, out.layout.width());
  for (int i = 0; i < t; ++i) {
    double* d = out.frames.row(i);
    const double* a = src_emb.row(i);
    const double* b = src_f0.row(i);
    const double* c = tgt_emb.row(i);
    const double* e = tgt_f0.row(i);
    int k = 0;
    for (int j = 0; j < src_emb.cols; ++j) d[k++] = a[j];
    d[k++] = b[0];
    d[k++] = b[1];
    for (int j = 0; j < tgt_emb.cols; ++j) d[k++] = c[j];
    d[k++] = e[0];
    d[k++] = e[1];
  }
  return out;
}

FusionSequence fuse(const Mat& src_emb, const Mat& src_f0,
                    const std::vector<double>& tgt_vec, double tgt_median_log_f0) {
  if (tgt_vec.empty()) throw ConfigError("fuse: empty speaker vector");
  int t = src_emb.rows;
  Mat tgt_emb(t, static_cast<int>(tgt_vec.size()));
  Mat tgt_f0(t, 2);
  for (int i = 0; i < t; ++i) {
    double* d = tgt_emb.row(i);
    for (size_t j = 0; j < tgt_vec.size(); ++j) d[j] = tgt_vec[j];
    tgt_f0.at(i, 0) = tgt_median_log_f0;
    tgt_f0.at(i, 1) = 1.0;
  }
  return fuse(src_emb, src_f0, tgt_emb, tgt_f0);
}

ad::VarId fuse_on_tape(ad::Tape& t, ad::VarId src_emb, ad::VarId src_f0,
                       ad::VarId tgt_emb, ad::VarId tgt_f0) {
  if (t.cols(src_f0) != 2 || t.cols(tgt_f0) != 2)
    throw ConfigError("fuse: f0 parts must have exactly 2 channels");
  return t.concat_cols({src_emb, src_f0, tgt_emb, tgt_f0});
}

void speaker_target_on_tape(ad::Tape& t, ad::ParamSet& params, int speaker_id,
                            int frames, bool trainable,
                            ad::VarId* emb_out, ad::VarId* f0_out) {
  table_checked(params, "spk.table", speaker_id);
  ad::VarId table = t.param_or_const(params.at("spk.table"), trainable);
  ad::VarId row = t.slice_rows(table, speaker_id, speaker_id + 1);
  *emb_out = t.broadcast_row(row, frames);

  double med = speaker_f0_median(params, speaker_id);
  Mat stats(frames, 2);
  for (int i = 0; i < frames; ++i) {
    stats.at(i, 0) = med;
    stats.at(i, 1) = 1.0;
  }
  *f0_out = t.constant(stats);
}

}  // namespace vconv
