#pragma once

#include <vector>

#include "vconv/dsp.hpp"
#include "vconv/pitch.hpp"
#include "vconv/tape.hpp"

namespace vconv {

struct LossWeights {
  double w_recon = 45.0;
  double w_adv = 1.0;
  double w_pitch = 1.0;
  double w_featmatch = 2.0;

  void validate() const;
};

struct AdversarialPair {
  double generator = 0.0;
  double discriminator = 0.0;
};

struct LossParts {
  double recon = 0.0;
  double adv_gen = 0.0;
  double pitch = 0.0;
  double featmatch = 0.0;
};

// Mean squared error over all cells. Shapes must match.
double reconstruction_loss(const Mat& pred, const Mat& target);
double reconstruction_loss(const MelSpectrogram& pred, const MelSpectrogram& target);

// Least-squares GAN pair, patch means averaged across scales:
//   generator     = mean_s mean_p (D_s(fake) - 1)^2
//   discriminator = mean_s mean_p (D_s(real) - 1)^2 + mean_s mean_p D_s(fake)^2
AdversarialPair adversarial_losses(const std::vector<Mat>& real_scores,
                                   const std::vector<Mat>& fake_scores);

// The adversarial expression exactly as printed in the source text:
// mean[(D(fake) - 1)^2] + mean[D(real)^2], one number. It targets fake at 1
// and real at 0 simultaneously, so it trains neither side; kept as an
// evaluation diagnostic only.
double adversarial_loss_paper_literal(const std::vector<Mat>& real_scores,
                                      const std::vector<Mat>& fake_scores);

// Mean |pred - target| in Hz over frames where both contours are voiced.
// No co-voiced frames: returns 0 and warns on stderr. covoiced_out (optional)
// receives the co-voiced frame count.
double pitch_consistency_loss(const F0Contour& pred, const F0Contour& target,
                              int* covoiced_out = nullptr);

// Mean absolute difference per feature map, averaged over layers, then
// scales. Layout must match between the two banks.
double feature_matching_loss(const std::vector<std::vector<Mat>>& real,
                             const std::vector<std::vector<Mat>>& fake);

double total_generator_loss(const LossParts& parts, const LossWeights& w);

// ---- tape paths (training) --------------------------------------------------

// Log-mel of a waveform column on the tape; cell-for-cell identical to
// dsp::mel_spectrogram on the same samples.
ad::VarId mel_on_tape(ad::Tape& t, ad::VarId wave, const DspParams& p);

ad::VarId reconstruction_loss_on_tape(ad::Tape& t, ad::VarId pred_mel, const Mat& target);

ad::VarId generator_adversarial_on_tape(ad::Tape& t,
                                        const std::vector<ad::VarId>& fake_scores);
ad::VarId discriminator_adversarial_on_tape(ad::Tape& t,
                                            const std::vector<ad::VarId>& real_scores,
                                            const std::vector<ad::VarId>& fake_scores);

// Tracks f0 of the generated wave on the tape and penalizes L1 against the
// target contour over co-voiced frames. Frame counts must agree.
ad::VarId pitch_consistency_on_tape(ad::Tape& t, ad::VarId wave, const PitchParams& pp,
                                    int sample_rate, int hop, const F0Contour& target);

// Real maps enter as constants: in the generator step the discriminator is
// frozen, so the real-side features carry no gradient anyway.
ad::VarId feature_matching_on_tape(ad::Tape& t,
                                   const std::vector<std::vector<Mat>>& real,
                                   const std::vector<std::vector<ad::VarId>>& fake);

ad::VarId total_generator_loss_on_tape(ad::Tape& t, ad::VarId recon, ad::VarId adv_gen,
                                       ad::VarId pitch, ad::VarId featmatch,
                                       const LossWeights& w);

}  // namespace vconv
