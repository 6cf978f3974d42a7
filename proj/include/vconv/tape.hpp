#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vconv/mat.hpp"
#include "vconv/pitch.hpp"

namespace vconv::ad {

// A named trainable (or frozen) tensor with its gradient accumulator and
// Adam moment buffers. Everything is stored flat, row-major.
struct ParamTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  bool trainable = true;  // frozen tensors (e.g. stats) skip optimizer updates
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment

  int size() const { return rows * cols; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Ordered registry of ParamTensors. Iteration order is insertion order, which
// keeps optimizer sweeps and checkpoints deterministic.
class ParamSet {
 public:
  ParamTensor& add(const std::string& name, int rows, int cols,
                   bool trainable = true);
  ParamTensor* find(const std::string& name);
  const ParamTensor* find(const std::string& name) const;
  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<ParamTensor*> all();
  std::vector<const ParamTensor*> all() const;
  void zero_grads();
  std::size_t count() const { return tensors_.size(); }

 private:
  std::vector<std::unique_ptr<ParamTensor>> tensors_;
  std::map<std::string, int> index_;
};

using VarId = int;

// Reverse-mode tape. Ops execute eagerly (the forward value is computed at
// record time); backward() replays the recorded closures in reverse. All
// arithmetic is double precision.
class Tape {
 public:
  struct Node {
    int rows = 0;
    int cols = 0;
    bool needs_grad = false;
    std::vector<double> v;  // value
    std::vector<double> g;  // adjoint, allocated iff needs_grad
  };

  // --- leaves -------------------------------------------------------------
  VarId constant(const Mat& value);
  VarId constant(int rows, int cols, const double* data);
  VarId zeros(int rows, int cols);
  // Copies the tensor's current value in; backward() flushes the adjoint
  // back into tensor.grad. Wiring the same tensor twice sums contributions.
  VarId param(ParamTensor& tensor);
  // param() when trainable, constant otherwise — for frozen subgraphs.
  VarId param_or_const(ParamTensor& tensor, bool trainable);

  // --- elementwise / broadcast ---------------------------------------------
  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);
  VarId scale(VarId a, double c);
  VarId add_scalar(VarId a, double c);
  VarId add_rowvec(VarId a, VarId row);          // row: 1 x C
  VarId mul_rowvec_const(VarId a, const std::vector<double>& row);
  VarId broadcast_row(VarId row, int rows);      // 1 x C -> rows x C
  VarId gelu(VarId a);
  VarId leaky_relu(VarId a, double slope);
  VarId tanh_act(VarId a);
  VarId clamp_log(VarId a, double floor);        // log(max(x, floor))
  VarId abs_val(VarId a);

  // --- shape ops ------------------------------------------------------------
  VarId slice_cols(VarId a, int c0, int c1);     // half-open [c0, c1)
  VarId concat_cols(const std::vector<VarId>& parts);
  VarId slice_rows(VarId a, int r0, int r1);
  VarId reshape(VarId a, int rows, int cols);    // same element count
  // Gather rows*1 signal into frame_count x win windows (stride hop);
  // out-of-range taps read as zero.
  VarId frame_signal(VarId x, int win, int hop);
  VarId pad_rows_zero(VarId x, int before, int after);
  VarId mean_rows(VarId a);                      // T x C -> 1 x C
  VarId global_mean(VarId a);                    // -> 1 x 1
  VarId global_sum(VarId a);                     // -> 1 x 1

  // --- linear algebra ---------------------------------------------------------
  VarId matmul(VarId a, VarId b);                // (r x k) (k x c)
  VarId matmul_nt(VarId a, VarId b);             // a * b^T
  VarId layer_norm(VarId a, VarId gamma, VarId beta, double eps = 1e-5);
  VarId softmax_rows(VarId a);

  // --- convolution (time on rows, channels on cols) ---------------------------
  // Weights are (K*Cin) x Cout, row (k*Cin + ci) holds tap k for input
  // channel ci. bias may be -1 for none. Same-length zero padding.
  VarId conv1d_same(VarId x, VarId w, VarId bias, int kernel, int dilation);
  // Strided valid conv with explicit symmetric zero padding.
  VarId conv1d_strided(VarId x, VarId w, VarId bias, int kernel, int stride,
                       int pad);
  // Transposed conv; output is exactly T*stride rows (centered trim).
  VarId conv_transpose1d(VarId x, VarId w, VarId bias, int kernel, int stride);
  VarId avg_pool_rows(VarId x, int factor);

  // --- pitch ------------------------------------------------------------------
  // x: L x 1 (already padded as desired). Runs the f0 tracker per frame;
  // integer lag search, voicing, and clamping are treated as locally
  // constant in backward. voiced_out receives the per-frame flags.
  VarId pitch_track(VarId x, const PitchParams& p, int sample_rate, int hop,
                    std::vector<std::uint8_t>* voiced_out);

  // --- losses -----------------------------------------------------------------
  VarId mse_vs_const(VarId a, const Mat& target);  // mean (a - t)^2 -> 1x1
  VarId mse_vs_scalar(VarId a, double target);
  // sum(|a - t| * mask) / denom. denom must be > 0.
  VarId l1_masked(VarId a, const Mat& target, const Mat& mask, double denom);

  // --- access -----------------------------------------------------------------
  const Node& node(VarId id) const { return nodes_[id]; }
  int rows(VarId id) const { return nodes_[id].rows; }
  int cols(VarId id) const { return nodes_[id].cols; }
  double scalar(VarId id) const;      // value of a 1x1 node
  Mat value(VarId id) const;          // copy out
  std::size_t size() const { return nodes_.size(); }

  // Smallest distance any kinked op's input kept from its kink during this
  // tape's forward passes (leaky_relu/abs at 0, clamp_log at the floor,
  // masked L1 at equality). Finite-difference checks are only valid when
  // this comfortably exceeds the probe step; tests gate on it.
  double kink_margin() const { return kink_margin_; }

  // Seeds d(loss)=1, runs the recorded closures in reverse, then flushes
  // leaf adjoints into their ParamTensor grads (accumulating).
  void backward(VarId loss);

 private:
  VarId alloc(int rows, int cols, bool needs_grad);
  void check(bool cond, const char* what) const;
  void note_kink(double dist) {
    if (dist < kink_margin_) kink_margin_ = dist;
  }

  // deque: growth must not invalidate Node references held across alloc()
  std::deque<Node> nodes_;
  std::vector<std::function<void()>> back_;   // parallel to nodes_
  std::vector<std::pair<VarId, ParamTensor*>> leaves_;
  double kink_margin_ = 1e300;
};

// Central finite-difference harness. build must re-run the full forward and
// return the loss VarId on the given tape; params are the tensors to probe.
// Returns the worst relative error |ad - fd| / max(|ad|, |fd|, atol). atol is
// the absolute noise floor: central differences on a 64-bit loss L carry
// ~|L|*1e-16/eps of rounding noise, so gradients below atol are treated as
// zero rather than compared relatively.
double finite_difference_check(
    const std::function<VarId(Tape&)>& build,
    const std::vector<ParamTensor*>& params, double eps = 1e-5,
    double atol = 1e-6);

}  // namespace vconv::ad
