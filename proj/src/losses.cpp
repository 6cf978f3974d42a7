#include "vconv/losses.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include "vconv/errors.hpp"

namespace vconv {

void LossWeights::validate() const {
  if (w_recon < 0 || w_adv < 0 || w_pitch < 0 || w_featmatch < 0)
    throw ConfigError("loss weights must be non-negative");
}

double reconstruction_loss(const Mat& pred, const Mat& target) {
  if (pred.rows != target.rows || pred.cols != target.cols)
    throw ConfigError("reconstruction_loss: shape mismatch (" + std::to_string(pred.rows) +
                      "x" + std::to_string(pred.cols) + " vs " + std::to_string(target.rows) +
                      "x" + std::to_string(target.cols) + ")");
  double s = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    double d = pred.v[i] - target.v[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.v.size());
}

double reconstruction_loss(const MelSpectrogram& pred, const MelSpectrogram& target) {
  return reconstruction_loss(pred.frames, target.frames);
}

namespace {

// Patch mean of (score - target)^2 for one scale.
double patch_mse(const Mat& scores, double target) {
  if (scores.v.empty()) throw ConfigError("adversarial loss: empty score sequence");
  double s = 0.0;
  for (double v : scores.v) {
    double d = v - target;
    s += d * d;
  }
  return s / static_cast<double>(scores.v.size());
}

// Mean over scales of per-scale patch means.
double scale_mean(const std::vector<Mat>& scores, double target) {
  if (scores.empty()) throw ConfigError("adversarial loss: no scales");
  double s = 0.0;
  for (const Mat& m : scores) s += patch_mse(m, target);
  return s / static_cast<double>(scores.size());
}

}  // namespace

AdversarialPair adversarial_losses(const std::vector<Mat>& real_scores,
                                   const std::vector<Mat>& fake_scores) {
  if (real_scores.size() != fake_scores.size())
    throw ConfigError("adversarial loss: real/fake scale counts differ");
  AdversarialPair out;
  out.generator = scale_mean(fake_scores, 1.0);
  out.discriminator = scale_mean(real_scores, 1.0) + scale_mean(fake_scores, 0.0);
  return out;
}

double adversarial_loss_paper_literal(const std::vector<Mat>& real_scores,
                                      const std::vector<Mat>& fake_scores) {
  if (real_scores.size() != fake_scores.size())
    throw ConfigError("adversarial loss: real/fake scale counts differ");
  return scale_mean(fake_scores, 1.0) + scale_mean(real_scores, 0.0);
}

double pitch_consistency_loss(const F0Contour& pred, const F0Contour& target,
                              int* covoiced_out) {
  if (pred.frames() != target.frames())
    throw ConfigError("pitch_consistency_loss: " + std::to_string(pred.frames()) +
                      " vs " + std::to_string(target.frames()) + " frames");
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < pred.frames(); ++i) {
    if (!pred.voiced[i] || !target.voiced[i]) continue;
    s += std::abs(pred.f0_hz[i] - target.f0_hz[i]);
    ++n;
  }
  if (covoiced_out) *covoiced_out = n;
  if (n == 0) {
    std::cerr << "warning: pitch consistency loss has no co-voiced frames; using 0\n";
    return 0.0;
  }
  return s / static_cast<double>(n);
}

double feature_matching_loss(const std::vector<std::vector<Mat>>& real,
                             const std::vector<std::vector<Mat>>& fake) {
  if (real.size() != fake.size() || real.empty())
    throw ConfigError("feature_matching_loss: scale counts differ or empty");
  double acc = 0.0;
  for (size_t s = 0; s < real.size(); ++s) {
    if (real[s].size() != fake[s].size() || real[s].empty())
      throw ConfigError("feature_matching_loss: layer counts differ or empty");
    double layer_acc = 0.0;
    for (size_t l = 0; l < real[s].size(); ++l) {
      const Mat& a = real[s][l];
      const Mat& b = fake[s][l];
      if (a.rows != b.rows || a.cols != b.cols)
        throw ConfigError("feature_matching_loss: feature map shape mismatch");
      double m = 0.0;
      for (size_t i = 0; i < a.v.size(); ++i) m += std::abs(b.v[i] - a.v[i]);
      layer_acc += m / static_cast<double>(a.v.size());
    }
    acc += layer_acc / static_cast<double>(real[s].size());
  }
  return acc / static_cast<double>(real.size());
}

double total_generator_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  return w.w_recon * parts.recon + w.w_adv * parts.adv_gen + w.w_pitch * parts.pitch +
         w.w_featmatch * parts.featmatch;
}

// ---- tape paths --------------------------------------------------------------

ad::VarId mel_on_tape(ad::Tape& t, ad::VarId wave, const DspParams& p) {
  p.validate();
  if (t.cols(wave) != 1) throw ConfigError("mel_on_tape: wave must be a sample column");
  if (t.rows(wave) < p.win_length)
    throw DataError("mel_on_tape: input shorter than win_length");
  int bins = p.fft_size / 2 + 1;

  Mat cos_mat, sin_mat;
  dft_matrices(p.win_length, p.fft_size, &cos_mat, &sin_mat);
  Mat fb = mel_filterbank(p);
  Mat fb_t(fb.cols, fb.rows);
  for (int m = 0; m < fb.rows; ++m)
    for (int k = 0; k < fb.cols; ++k) fb_t.at(k, m) = fb.at(m, k);

  ad::VarId frames = t.frame_signal(wave, p.win_length, p.hop_length);
  ad::VarId windowed = t.mul_rowvec_const(frames, hann_window(p.win_length));
  ad::VarId re = t.matmul(windowed, t.constant(cos_mat));
  ad::VarId im = t.matmul(windowed, t.constant(sin_mat));
  ad::VarId power = t.add(t.mul(re, re), t.mul(im, im));
  ad::VarId mel = t.matmul(power, t.constant(fb_t));
  return t.clamp_log(mel, kMelFloor);
}

ad::VarId reconstruction_loss_on_tape(ad::Tape& t, ad::VarId pred_mel, const Mat& target) {
  if (t.rows(pred_mel) != target.rows || t.cols(pred_mel) != target.cols)
    throw ConfigError("reconstruction_loss: shape mismatch (" +
                      std::to_string(t.rows(pred_mel)) + "x" + std::to_string(t.cols(pred_mel)) +
                      " vs " + std::to_string(target.rows) + "x" +
                      std::to_string(target.cols) + ")");
  return t.mse_vs_const(pred_mel, target);
}

namespace {

// Mean over scales of per-scale patch means of (score - target)^2.
ad::VarId scale_mean_on_tape(ad::Tape& t, const std::vector<ad::VarId>& scores,
                             double target) {
  if (scores.empty()) throw ConfigError("adversarial loss: no scales");
  ad::VarId acc = -1;
  for (ad::VarId s : scores) {
    ad::VarId d = t.add_scalar(s, -target);
    ad::VarId m = t.global_mean(t.mul(d, d));
    acc = acc < 0 ? m : t.add(acc, m);
  }
  return t.scale(acc, 1.0 / static_cast<double>(scores.size()));
}

}  // namespace

ad::VarId generator_adversarial_on_tape(ad::Tape& t,
                                        const std::vector<ad::VarId>& fake_scores) {
  return scale_mean_on_tape(t, fake_scores, 1.0);
}

ad::VarId discriminator_adversarial_on_tape(ad::Tape& t,
                                            const std::vector<ad::VarId>& real_scores,
                                            const std::vector<ad::VarId>& fake_scores) {
  if (real_scores.size() != fake_scores.size())
    throw ConfigError("adversarial loss: real/fake scale counts differ");
  return t.add(scale_mean_on_tape(t, real_scores, 1.0),
               scale_mean_on_tape(t, fake_scores, 0.0));
}

ad::VarId pitch_consistency_on_tape(ad::Tape& t, ad::VarId wave, const PitchParams& pp,
                                    int sample_rate, int hop, const F0Contour& target) {
  std::vector<std::uint8_t> pred_voiced;
  ad::VarId f0 = t.pitch_track(wave, pp, sample_rate, hop, &pred_voiced);
  if (t.rows(f0) != target.frames())
    throw ConfigError("pitch_consistency_loss: " + std::to_string(t.rows(f0)) + " vs " +
                      std::to_string(target.frames()) + " frames");
  Mat tgt(target.frames(), 1);
  Mat mask(target.frames(), 1);
  int n = 0;
  for (int i = 0; i < target.frames(); ++i) {
    tgt.at(i, 0) = target.f0_hz[i];
    bool both = pred_voiced[i] && target.voiced[i];
    mask.at(i, 0) = both ? 1.0 : 0.0;
    if (both) ++n;
  }
  if (n == 0) {
    std::cerr << "warning: pitch consistency loss has no co-voiced frames; using 0\n";
    return t.zeros(1, 1);
  }
  return t.l1_masked(f0, tgt, mask, static_cast<double>(n));
}

ad::VarId feature_matching_on_tape(ad::Tape& t,
                                   const std::vector<std::vector<Mat>>& real,
                                   const std::vector<std::vector<ad::VarId>>& fake) {
  if (real.size() != fake.size() || real.empty())
    throw ConfigError("feature_matching_loss: scale counts differ or empty");
  Mat ones;
  ad::VarId acc = -1;
  for (size_t s = 0; s < real.size(); ++s) {
    if (real[s].size() != fake[s].size() || real[s].empty())
      throw ConfigError("feature_matching_loss: layer counts differ or empty");
    ad::VarId layer_acc = -1;
    for (size_t l = 0; l < real[s].size(); ++l) {
      const Mat& a = real[s][l];
      ad::VarId b = fake[s][l];
      if (a.rows != t.rows(b) || a.cols != t.cols(b))
        throw ConfigError("feature_matching_loss: feature map shape mismatch");
      Mat m(a.rows, a.cols);
      std::fill(m.v.begin(), m.v.end(), 1.0);
      ad::VarId d = t.l1_masked(b, a, m, static_cast<double>(a.v.size()));
      layer_acc = layer_acc < 0 ? d : t.add(layer_acc, d);
    }
    layer_acc = t.scale(layer_acc, 1.0 / static_cast<double>(real[s].size()));
    acc = acc < 0 ? layer_acc : t.add(acc, layer_acc);
  }
  return t.scale(acc, 1.0 / static_cast<double>(real.size()));
}

ad::VarId total_generator_loss_on_tape(ad::Tape& t, ad::VarId recon, ad::VarId adv_gen,
                                       ad::VarId pitch, ad::VarId featmatch,
                                       const LossWeights& w) {
  w.validate();
  ad::VarId acc = t.scale(recon, w.w_recon);
  acc = t.add(acc, t.scale(adv_gen, w.w_adv));
  acc = t.add(acc, t.scale(pitch, w.w_pitch));
  return t.add(acc, t.scale(featmatch, w.w_featmatch));
}

}  // namespace vconv
