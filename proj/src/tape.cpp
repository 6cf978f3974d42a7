#include "vconv/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace vconv::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

ParamTensor& ParamSet::add(const std::string& name, int rows, int cols, bool trainable) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter tensor: " + name);
  auto t = std::make_unique<ParamTensor>();
  t->name = name;
  t->rows = rows;
  t->cols = cols;
  t->trainable = trainable;
  size_t n = static_cast<size_t>(rows) * cols;
  t->value.assign(n, 0.0);
  t->grad.assign(n, 0.0);
  t->m.assign(n, 0.0);
  t->v.assign(n, 0.0);
  index_[name] = static_cast<int>(tensors_.size());
  tensors_.push_back(std::move(t));
  return *tensors_.back();
}

ParamTensor* ParamSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : tensors_[it->second].get();
}

const ParamTensor* ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : tensors_[it->second].get();
}

ParamTensor& ParamSet::at(const std::string& name) {
  ParamTensor* t = find(name);
  if (!t) throw std::logic_error("no such parameter tensor: " + name);
  return *t;
}

const ParamTensor& ParamSet::at(const std::string& name) const {
  const ParamTensor* t = find(name);
  if (!t) throw std::logic_error("no such parameter tensor: " + name);
  return *t;
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) > 0; }

std::vector<ParamTensor*> ParamSet::all() {
  std::vector<ParamTensor*> out;
  out.reserve(tensors_.size());
  for (auto& t : tensors_) out.push_back(t.get());
  return out;
}

std::vector<const ParamTensor*> ParamSet::all() const {
  std::vector<const ParamTensor*> out;
  out.reserve(tensors_.size());
  for (auto& t : tensors_) out.push_back(t.get());
  return out;
}

void ParamSet::zero_grads() {
  for (auto& t : tensors_) t->zero_grad();
}

// ---------------------------------------------------------------------------

VarId Tape::alloc(int rows, int cols, bool needs_grad) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.needs_grad = needs_grad;
  n.v.assign(static_cast<size_t>(rows) * cols, 0.0);
  if (needs_grad) n.g.assign(n.v.size(), 0.0);
  nodes_.push_back(std::move(n));
  back_.emplace_back();
  return static_cast<VarId>(nodes_.size()) - 1;
}

void Tape::check(bool cond, const char* what) const {
  if (!cond) throw std::logic_error(std::string("tape: ") + what);
}

VarId Tape::constant(const Mat& value) { return constant(value.rows, value.cols, value.v.data()); }

VarId Tape::constant(int rows, int cols, const double* data) {
  VarId id = alloc(rows, cols, false);
  std::memcpy(nodes_[id].v.data(), data, nodes_[id].v.size() * sizeof(double));
  return id;
}

VarId Tape::zeros(int rows, int cols) { return alloc(rows, cols, false); }

VarId Tape::param(ParamTensor& tensor) {
  VarId id = alloc(tensor.rows, tensor.cols, true);
  std::memcpy(nodes_[id].v.data(), tensor.value.data(), nodes_[id].v.size() * sizeof(double));
  leaves_.emplace_back(id, &tensor);
  return id;
}

VarId Tape::param_or_const(ParamTensor& tensor, bool trainable) {
  if (trainable) return param(tensor);
  return constant(tensor.rows, tensor.cols, tensor.value.data());
}

VarId Tape::add(VarId a, VarId b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check(na.rows == nb.rows && na.cols == nb.cols, "add: shape mismatch");
  VarId out = alloc(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) no.v[i] = na.v[i] + nb.v[i];
  if (!no.needs_grad) return out;
  back_[out] = [this, a, b, out]() {
    const auto& g = nodes_[out].g;
    if (nodes_[a].needs_grad) {
      auto& ga = nodes_[a].g;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nodes_[b].needs_grad) {
      auto& gb = nodes_[b].g;
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  return out;
}

VarId Tape::sub(VarId a, VarId b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check(na.rows == nb.rows && na.cols == nb.cols, "sub: shape mismatch");
  VarId out = alloc(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) no.v[i] = na.v[i] - nb.v[i];
  if (!no.needs_grad) return out;
  back_[out] = [this, a, b, out]() {
    const auto& g = nodes_[out].g;
    if (nodes_[a].needs_grad) {
      auto& ga = nodes_[a].g;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nodes_[b].needs_grad) {
      auto& gb = nodes_[b].g;
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return out;
}

VarId Tape::mul(VarId a, VarId b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check(na.rows == nb.rows && na.cols == nb.cols, "mul: shape mismatch");
  VarId out = alloc(na.rows, na.cols, na.needs_grad || nb.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) no.v[i] = na.v[i] * nb.v[i];
  if (!no.needs_grad) return out;
  back_[out] = [this, a, b, out]() {
    const auto& g = nodes_[out].g;
    if (nodes_[a].needs_grad) {
      auto& ga = nodes_[a].g;
      const auto& vb = nodes_[b].v;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (nodes_[b].needs_grad) {
      auto& gb = nodes_[b].g;
      const auto& va = nodes_[a].v;
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  };
  return out;
}

VarId Tape::scale(VarId a, double c) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) no.v[i] = na.v[i] * c;
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, c]() {
    const auto& g = nodes_[out].g;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  };
  return out;
}

VarId Tape::add_scalar(VarId a, double c) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) no.v[i] = na.v[i] + c;
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out]() {
    const auto& g = nodes_[out].g;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return out;
}

VarId Tape::add_rowvec(VarId a, VarId row) {
  const Node& na = nodes_[a];
  const Node& nr = nodes_[row];
  check(nr.rows == 1 && nr.cols == na.cols, "add_rowvec: row must be 1 x cols(a)");
  VarId out = alloc(na.rows, na.cols, na.needs_grad || nr.needs_grad);
  Node& no = nodes_[out];
  for (int i = 0; i < na.rows; ++i)
    for (int j = 0; j < na.cols; ++j)
      no.v[static_cast<size_t>(i) * na.cols + j] =
          na.v[static_cast<size_t>(i) * na.cols + j] + nr.v[j];
  if (!no.needs_grad) return out;
  back_[out] = [this, a, row, out]() {
    const Node& o = nodes_[out];
    if (nodes_[a].needs_grad) {
      auto& ga = nodes_[a].g;
      for (size_t i = 0; i < o.g.size(); ++i) ga[i] += o.g[i];
    }
    if (nodes_[row].needs_grad) {
      auto& gr = nodes_[row].g;
      for (int i = 0; i < o.rows; ++i)
        for (int j = 0; j < o.cols; ++j) gr[j] += o.g[static_cast<size_t>(i) * o.cols + j];
    }
  };
  return out;
}

VarId Tape::mul_rowvec_const(VarId a, const std::vector<double>& row) {
  const Node& na = nodes_[a];
  check(static_cast<int>(row.size()) == na.cols, "mul_rowvec_const: width mismatch");
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (int i = 0; i < na.rows; ++i)
    for (int j = 0; j < na.cols; ++j)
      no.v[static_cast<size_t>(i) * na.cols + j] =
          na.v[static_cast<size_t>(i) * na.cols + j] * row[j];
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, row]() {
    const Node& o = nodes_[out];
    auto& ga = nodes_[a].g;
    for (int i = 0; i < o.rows; ++i)
      for (int j = 0; j < o.cols; ++j)
        ga[static_cast<size_t>(i) * o.cols + j] += o.g[static_cast<size_t>(i) * o.cols + j] * row[j];
  };
  return out;
}

VarId Tape::broadcast_row(VarId row, int rows) {
  const Node& nr = nodes_[row];
  check(nr.rows == 1, "broadcast_row: input must be 1 x C");
  VarId out = alloc(rows, nr.cols, nr.needs_grad);
  Node& no = nodes_[out];
  for (int i = 0; i < rows; ++i)
    std::memcpy(no.v.data() + static_cast<size_t>(i) * nr.cols, nr.v.data(),
                static_cast<size_t>(nr.cols) * sizeof(double));
  if (!no.needs_grad) return out;
  back_[out] = [this, row, out]() {
    const Node& o = nodes_[out];
    auto& gr = nodes_[row].g;
    for (int i = 0; i < o.rows; ++i)
      for (int j = 0; j < o.cols; ++j) gr[j] += o.g[static_cast<size_t>(i) * o.cols + j];
  };
  return out;
}

VarId Tape::gelu(VarId a) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) {
    double x = na.v[i];
    no.v[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out]() {
    const auto& g = nodes_[out].g;
    const auto& x = nodes_[a].v;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) {
      double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  };
  return out;
}

VarId Tape::leaky_relu(VarId a, double slope) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) {
    double x = na.v[i];
    note_kink(std::abs(x));
    no.v[i] = x >= 0.0 ? x : slope * x;
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, slope]() {
    const auto& g = nodes_[out].g;
    const auto& x = nodes_[a].v;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (x[i] >= 0.0 ? 1.0 : slope);
  };
  return out;
}

VarId Tape::tanh_act(VarId a) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) no.v[i] = std::tanh(na.v[i]);
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out]() {
    const auto& g = nodes_[out].g;
    const auto& y = nodes_[out].v;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return out;
}

VarId Tape::clamp_log(VarId a, double floor) {
  const Node& na = nodes_[a];
  check(floor > 0.0, "clamp_log: floor must be positive");
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) {
    // Inputs far below the floor are saturated beyond any probe's reach;
    // only near-floor cells make finite differences unreliable.
    if (na.v[i] >= 0.5 * floor) note_kink(std::abs(na.v[i] - floor));
    no.v[i] = std::log(std::max(na.v[i], floor));
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, floor]() {
    const auto& g = nodes_[out].g;
    const auto& x = nodes_[a].v;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i)
      if (x[i] > floor) ga[i] += g[i] / x[i];
  };
  return out;
}

VarId Tape::abs_val(VarId a) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (size_t i = 0; i < no.v.size(); ++i) {
    note_kink(std::abs(na.v[i]));
    no.v[i] = std::abs(na.v[i]);
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out]() {
    const auto& g = nodes_[out].g;
    const auto& x = nodes_[a].v;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0)
        ga[i] += g[i];
      else if (x[i] < 0.0)
        ga[i] -= g[i];
    }
  };
  return out;
}

VarId Tape::slice_cols(VarId a, int c0, int c1) {
  const Node& na = nodes_[a];
  check(0 <= c0 && c0 < c1 && c1 <= na.cols, "slice_cols: bad range");
  int w = c1 - c0;
  VarId out = alloc(na.rows, w, na.needs_grad);
  Node& no = nodes_[out];
  for (int i = 0; i < na.rows; ++i)
    std::memcpy(no.v.data() + static_cast<size_t>(i) * w,
                na.v.data() + static_cast<size_t>(i) * na.cols + c0,
                static_cast<size_t>(w) * sizeof(double));
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, c0, w]() {
    const Node& o = nodes_[out];
    Node& ia = nodes_[a];
    for (int i = 0; i < o.rows; ++i)
      for (int j = 0; j < w; ++j)
        ia.g[static_cast<size_t>(i) * ia.cols + c0 + j] += o.g[static_cast<size_t>(i) * w + j];
  };
  return out;
}

VarId Tape::concat_cols(const std::vector<VarId>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  int rows = nodes_[parts[0]].rows;
  int total = 0;
  bool needs = false;
  for (VarId p : parts) {
    check(nodes_[p].rows == rows, "concat_cols: row mismatch");
    total += nodes_[p].cols;
    needs = needs || nodes_[p].needs_grad;
  }
  VarId out = alloc(rows, total, needs);
  Node& no = nodes_[out];
  int off = 0;
  for (VarId p : parts) {
    const Node& np = nodes_[p];
    for (int i = 0; i < rows; ++i)
      std::memcpy(no.v.data() + static_cast<size_t>(i) * total + off,
                  np.v.data() + static_cast<size_t>(i) * np.cols,
                  static_cast<size_t>(np.cols) * sizeof(double));
    off += np.cols;
  }
  if (!needs) return out;
  std::vector<VarId> ps = parts;
  back_[out] = [this, ps, out, total]() {
    const Node& o = nodes_[out];
    int off2 = 0;
    for (VarId p : ps) {
      Node& np = nodes_[p];
      if (np.needs_grad) {
        for (int i = 0; i < o.rows; ++i)
          for (int j = 0; j < np.cols; ++j)
            np.g[static_cast<size_t>(i) * np.cols + j] +=
                o.g[static_cast<size_t>(i) * total + off2 + j];
      }
      off2 += np.cols;
    }
  };
  return out;
}

VarId Tape::slice_rows(VarId a, int r0, int r1) {
  const Node& na = nodes_[a];
  check(0 <= r0 && r0 < r1 && r1 <= na.rows, "slice_rows: bad range");
  int h = r1 - r0;
  VarId out = alloc(h, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  std::memcpy(no.v.data(), na.v.data() + static_cast<size_t>(r0) * na.cols,
              static_cast<size_t>(h) * na.cols * sizeof(double));
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, r0]() {
    const Node& o = nodes_[out];
    Node& ia = nodes_[a];
    size_t base = static_cast<size_t>(r0) * ia.cols;
    for (size_t i = 0; i < o.g.size(); ++i) ia.g[base + i] += o.g[i];
  };
  return out;
}

VarId Tape::reshape(VarId a, int rows, int cols) {
  const Node& na = nodes_[a];
  check(static_cast<size_t>(rows) * cols == na.v.size(), "reshape: element count mismatch");
  VarId out = alloc(rows, cols, na.needs_grad);
  Node& no = nodes_[out];
  std::memcpy(no.v.data(), na.v.data(), na.v.size() * sizeof(double));
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out]() {
    const auto& g = nodes_[out].g;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return out;
}

VarId Tape::frame_signal(VarId x, int win, int hop) {
  const Node& nx = nodes_[x];
  check(nx.cols == 1, "frame_signal: input must be L x 1");
  check(win > 0 && hop > 0 && nx.rows >= win, "frame_signal: need L >= win");
  int frames = 1 + (nx.rows - win) / hop;
  VarId out = alloc(frames, win, nx.needs_grad);
  Node& no = nodes_[out];
  for (int t = 0; t < frames; ++t)
    std::memcpy(no.v.data() + static_cast<size_t>(t) * win, nx.v.data() + static_cast<size_t>(t) * hop,
                static_cast<size_t>(win) * sizeof(double));
  if (!no.needs_grad) return out;
  back_[out] = [this, x, out, win, hop, frames]() {
    const Node& o = nodes_[out];
    auto& gx = nodes_[x].g;
    for (int t = 0; t < frames; ++t) {
      const double* go = o.g.data() + static_cast<size_t>(t) * win;
      double* gj = gx.data() + static_cast<size_t>(t) * hop;
      for (int n = 0; n < win; ++n) gj[n] += go[n];
    }
  };
  return out;
}

VarId Tape::pad_rows_zero(VarId x, int before, int after) {
  const Node& nx = nodes_[x];
  check(before >= 0 && after >= 0, "pad_rows_zero: negative pad");
  VarId out = alloc(nx.rows + before + after, nx.cols, nx.needs_grad);
  Node& no = nodes_[out];
  std::memcpy(no.v.data() + static_cast<size_t>(before) * nx.cols, nx.v.data(),
              nx.v.size() * sizeof(double));
  if (!no.needs_grad) return out;
  back_[out] = [this, x, out, before]() {
    const Node& o = nodes_[out];
    Node& ix = nodes_[x];
    size_t base = static_cast<size_t>(before) * ix.cols;
    for (size_t i = 0; i < ix.g.size(); ++i) ix.g[i] += o.g[base + i];
  };
  return out;
}

VarId Tape::mean_rows(VarId a) {
  const Node& na = nodes_[a];
  check(na.rows > 0, "mean_rows: empty");
  VarId out = alloc(1, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  for (int i = 0; i < na.rows; ++i)
    for (int j = 0; j < na.cols; ++j) no.v[j] += na.v[static_cast<size_t>(i) * na.cols + j];
  for (int j = 0; j < na.cols; ++j) no.v[j] /= na.rows;
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out]() {
    const Node& o = nodes_[out];
    Node& ia = nodes_[a];
    double inv = 1.0 / ia.rows;
    for (int i = 0; i < ia.rows; ++i)
      for (int j = 0; j < ia.cols; ++j) ia.g[static_cast<size_t>(i) * ia.cols + j] += o.g[j] * inv;
  };
  return out;
}

VarId Tape::global_mean(VarId a) {
  const Node& na = nodes_[a];
  check(!na.v.empty(), "global_mean: empty");
  VarId out = alloc(1, 1, na.needs_grad);
  double s = 0.0;
  for (double x : na.v) s += x;
  nodes_[out].v[0] = s / static_cast<double>(na.v.size());
  if (!nodes_[out].needs_grad) return out;
  back_[out] = [this, a, out]() {
    double g = nodes_[out].g[0] / static_cast<double>(nodes_[a].v.size());
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return out;
}

VarId Tape::global_sum(VarId a) {
  const Node& na = nodes_[a];
  VarId out = alloc(1, 1, na.needs_grad);
  double s = 0.0;
  for (double x : na.v) s += x;
  nodes_[out].v[0] = s;
  if (!nodes_[out].needs_grad) return out;
  back_[out] = [this, a, out]() {
    double g = nodes_[out].g[0];
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return out;
}

VarId Tape::matmul(VarId a, VarId b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check(na.cols == nb.rows, "matmul: inner dim mismatch");
  VarId out = alloc(na.rows, nb.cols, na.needs_grad || nb.needs_grad);
  lin::matmul(na.v.data(), nb.v.data(), nodes_[out].v.data(), na.rows, na.cols, nb.cols);
  if (!nodes_[out].needs_grad) return out;
  back_[out] = [this, a, b, out]() {
    const Node& o = nodes_[out];
    const Node& ia = nodes_[a];
    const Node& ib = nodes_[b];
    if (ia.needs_grad)
      lin::matmul_nt_acc(o.g.data(), ib.v.data(), nodes_[a].g.data(), o.rows, o.cols, ia.cols);
    if (ib.needs_grad)
      lin::matmul_tn_acc(ia.v.data(), o.g.data(), nodes_[b].g.data(), ia.rows, ia.cols, o.cols);
  };
  return out;
}

VarId Tape::matmul_nt(VarId a, VarId b) {
  const Node& na = nodes_[a];
  const Node& nb = nodes_[b];
  check(na.cols == nb.cols, "matmul_nt: inner dim mismatch");
  VarId out = alloc(na.rows, nb.rows, na.needs_grad || nb.needs_grad);
  lin::matmul_nt(na.v.data(), nb.v.data(), nodes_[out].v.data(), na.rows, na.cols, nb.rows);
  if (!nodes_[out].needs_grad) return out;
  back_[out] = [this, a, b, out]() {
    const Node& o = nodes_[out];
    const Node& ia = nodes_[a];
    const Node& ib = nodes_[b];
    if (ia.needs_grad)
      lin::matmul_acc(o.g.data(), ib.v.data(), nodes_[a].g.data(), o.rows, o.cols, ia.cols);
    if (ib.needs_grad)
      lin::matmul_tn_acc(o.g.data(), ia.v.data(), nodes_[b].g.data(), o.rows, o.cols, ia.cols);
  };
  return out;
}

VarId Tape::layer_norm(VarId a, VarId gamma, VarId beta, double eps) {
  const Node& na = nodes_[a];
  const Node& ng = nodes_[gamma];
  const Node& nb = nodes_[beta];
  check(ng.rows == 1 && ng.cols == na.cols, "layer_norm: gamma shape");
  check(nb.rows == 1 && nb.cols == na.cols, "layer_norm: beta shape");
  VarId out = alloc(na.rows, na.cols, na.needs_grad || ng.needs_grad || nb.needs_grad);
  Node& no = nodes_[out];
  auto norm = std::make_shared<std::vector<double>>(na.v.size());  // (x-mu)/s
  auto inv_s = std::make_shared<std::vector<double>>(na.rows);
  int C = na.cols;
  for (int i = 0; i < na.rows; ++i) {
    const double* xi = na.v.data() + static_cast<size_t>(i) * C;
    double mu = 0.0;
    for (int j = 0; j < C; ++j) mu += xi[j];
    mu /= C;
    double var = 0.0;
    for (int j = 0; j < C; ++j) {
      double d = xi[j] - mu;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_s)[i] = is;
    double* yi = norm->data() + static_cast<size_t>(i) * C;
    double* oi = no.v.data() + static_cast<size_t>(i) * C;
    for (int j = 0; j < C; ++j) {
      yi[j] = (xi[j] - mu) * is;
      oi[j] = yi[j] * ng.v[j] + nb.v[j];
    }
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, a, gamma, beta, out, norm, inv_s, C]() {
    const Node& o = nodes_[out];
    const Node& ig = nodes_[gamma];
    for (int i = 0; i < o.rows; ++i) {
      const double* gi = o.g.data() + static_cast<size_t>(i) * C;
      const double* yi = norm->data() + static_cast<size_t>(i) * C;
      if (nodes_[gamma].needs_grad) {
        auto& gg = nodes_[gamma].g;
        for (int j = 0; j < C; ++j) gg[j] += gi[j] * yi[j];
      }
      if (nodes_[beta].needs_grad) {
        auto& gb = nodes_[beta].g;
        for (int j = 0; j < C; ++j) gb[j] += gi[j];
      }
      if (nodes_[a].needs_grad) {
        double mean_h = 0.0, mean_hy = 0.0;
        for (int j = 0; j < C; ++j) {
          double h = gi[j] * ig.v[j];
          mean_h += h;
          mean_hy += h * yi[j];
        }
        mean_h /= C;
        mean_hy /= C;
        double is = (*inv_s)[i];
        double* gx = nodes_[a].g.data() + static_cast<size_t>(i) * C;
        for (int j = 0; j < C; ++j) {
          double h = gi[j] * ig.v[j];
          gx[j] += (h - mean_h - yi[j] * mean_hy) * is;
        }
      }
    }
  };
  return out;
}

VarId Tape::softmax_rows(VarId a) {
  const Node& na = nodes_[a];
  VarId out = alloc(na.rows, na.cols, na.needs_grad);
  Node& no = nodes_[out];
  int C = na.cols;
  for (int i = 0; i < na.rows; ++i) {
    const double* xi = na.v.data() + static_cast<size_t>(i) * C;
    double* yi = no.v.data() + static_cast<size_t>(i) * C;
    double mx = xi[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (int j = 0; j < C; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    double inv = 1.0 / s;
    for (int j = 0; j < C; ++j) yi[j] *= inv;
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, a, out, C]() {
    const Node& o = nodes_[out];
    auto& ga = nodes_[a].g;
    for (int i = 0; i < o.rows; ++i) {
      const double* gi = o.g.data() + static_cast<size_t>(i) * C;
      const double* yi = o.v.data() + static_cast<size_t>(i) * C;
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += gi[j] * yi[j];
      double* gx = ga.data() + static_cast<size_t>(i) * C;
      for (int j = 0; j < C; ++j) gx[j] += yi[j] * (gi[j] - dot);
    }
  };
  return out;
}

VarId Tape::conv1d_same(VarId x, VarId w, VarId bias, int kernel, int dilation) {
  const Node& nx = nodes_[x];
  const Node& nw = nodes_[w];
  check(kernel >= 1 && kernel % 2 == 1, "conv1d_same: kernel must be odd");
  check(dilation >= 1, "conv1d_same: dilation must be >= 1");
  check(nw.rows % kernel == 0, "conv1d_same: weight rows must be kernel*Cin");
  int cin = nw.rows / kernel;
  check(cin == nx.cols, "conv1d_same: channel mismatch");
  int cout = nw.cols;
  int T = nx.rows;
  int pad = (kernel - 1) / 2 * dilation;
  bool needs = nx.needs_grad || nw.needs_grad;
  if (bias >= 0) {
    check(nodes_[bias].rows == 1 && nodes_[bias].cols == cout, "conv1d_same: bias shape");
    needs = needs || nodes_[bias].needs_grad;
  }
  VarId out = alloc(T, cout, needs);
  Node& no = nodes_[out];
  if (bias >= 0) {
    const Node& nbv = nodes_[bias];
    for (int t = 0; t < T; ++t)
      std::memcpy(no.v.data() + static_cast<size_t>(t) * cout, nbv.v.data(),
                  static_cast<size_t>(cout) * sizeof(double));
  }
  for (int t = 0; t < T; ++t) {
    double* ot = no.v.data() + static_cast<size_t>(t) * cout;
    for (int k = 0; k < kernel; ++k) {
      int src = t + k * dilation - pad;
      if (src < 0 || src >= T) continue;
      const double* xs = nx.v.data() + static_cast<size_t>(src) * cin;
      for (int ci = 0; ci < cin; ++ci) {
        double xv = xs[ci];
        if (xv == 0.0) continue;
        const double* wr = nw.v.data() + static_cast<size_t>(k * cin + ci) * cout;
        for (int co = 0; co < cout; ++co) ot[co] += xv * wr[co];
      }
    }
  }
  if (!needs) return out;
  back_[out] = [this, x, w, bias, out, kernel, dilation, cin, cout, T, pad]() {
    const Node& o = nodes_[out];
    const Node& ix = nodes_[x];
    const Node& iw = nodes_[w];
    bool gx_on = ix.needs_grad;
    bool gw_on = iw.needs_grad;
    for (int t = 0; t < T; ++t) {
      const double* gt = o.g.data() + static_cast<size_t>(t) * cout;
      for (int k = 0; k < kernel; ++k) {
        int src = t + k * dilation - pad;
        if (src < 0 || src >= T) continue;
        const double* xs = ix.v.data() + static_cast<size_t>(src) * cin;
        for (int ci = 0; ci < cin; ++ci) {
          const double* wr = iw.v.data() + static_cast<size_t>(k * cin + ci) * cout;
          double acc = 0.0;
          if (gw_on) {
            double xv = xs[ci];
            double* gwr = nodes_[w].g.data() + static_cast<size_t>(k * cin + ci) * cout;
            for (int co = 0; co < cout; ++co) {
              acc += gt[co] * wr[co];
              gwr[co] += xv * gt[co];
            }
          } else {
            for (int co = 0; co < cout; ++co) acc += gt[co] * wr[co];
          }
          if (gx_on) nodes_[x].g[static_cast<size_t>(src) * cin + ci] += acc;
        }
      }
    }
    if (bias >= 0 && nodes_[bias].needs_grad) {
      auto& gb = nodes_[bias].g;
      for (int t = 0; t < T; ++t) {
        const double* gt = o.g.data() + static_cast<size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) gb[co] += gt[co];
      }
    }
  };
  return out;
}

VarId Tape::conv1d_strided(VarId x, VarId w, VarId bias, int kernel, int stride, int pad) {
  const Node& nx = nodes_[x];
  const Node& nw = nodes_[w];
  check(kernel >= 1 && stride >= 1 && pad >= 0, "conv1d_strided: bad geometry");
  check(nw.rows % kernel == 0, "conv1d_strided: weight rows must be kernel*Cin");
  int cin = nw.rows / kernel;
  check(cin == nx.cols, "conv1d_strided: channel mismatch");
  int cout = nw.cols;
  int T = nx.rows;
  check(T + 2 * pad >= kernel, "conv1d_strided: input too short");
  int To = (T + 2 * pad - kernel) / stride + 1;
  bool needs = nx.needs_grad || nw.needs_grad;
  if (bias >= 0) {
    check(nodes_[bias].rows == 1 && nodes_[bias].cols == cout, "conv1d_strided: bias shape");
    needs = needs || nodes_[bias].needs_grad;
  }
  VarId out = alloc(To, cout, needs);
  Node& no = nodes_[out];
  if (bias >= 0) {
    const Node& nbv = nodes_[bias];
    for (int t = 0; t < To; ++t)
      std::memcpy(no.v.data() + static_cast<size_t>(t) * cout, nbv.v.data(),
                  static_cast<size_t>(cout) * sizeof(double));
  }
  for (int t = 0; t < To; ++t) {
    double* ot = no.v.data() + static_cast<size_t>(t) * cout;
    for (int k = 0; k < kernel; ++k) {
      int src = t * stride + k - pad;
      if (src < 0 || src >= T) continue;
      const double* xs = nx.v.data() + static_cast<size_t>(src) * cin;
      for (int ci = 0; ci < cin; ++ci) {
        double xv = xs[ci];
        if (xv == 0.0) continue;
        const double* wr = nw.v.data() + static_cast<size_t>(k * cin + ci) * cout;
        for (int co = 0; co < cout; ++co) ot[co] += xv * wr[co];
      }
    }
  }
  if (!needs) return out;
  back_[out] = [this, x, w, bias, out, kernel, stride, pad, cin, cout, T, To]() {
    const Node& o = nodes_[out];
    const Node& ix = nodes_[x];
    const Node& iw = nodes_[w];
    bool gx_on = ix.needs_grad;
    bool gw_on = iw.needs_grad;
    for (int t = 0; t < To; ++t) {
      const double* gt = o.g.data() + static_cast<size_t>(t) * cout;
      for (int k = 0; k < kernel; ++k) {
        int src = t * stride + k - pad;
        if (src < 0 || src >= T) continue;
        const double* xs = ix.v.data() + static_cast<size_t>(src) * cin;
        for (int ci = 0; ci < cin; ++ci) {
          const double* wr = iw.v.data() + static_cast<size_t>(k * cin + ci) * cout;
          double acc = 0.0;
          if (gw_on) {
            double xv = xs[ci];
            double* gwr = nodes_[w].g.data() + static_cast<size_t>(k * cin + ci) * cout;
            for (int co = 0; co < cout; ++co) {
              acc += gt[co] * wr[co];
              gwr[co] += xv * gt[co];
            }
          } else {
            for (int co = 0; co < cout; ++co) acc += gt[co] * wr[co];
          }
          if (gx_on) nodes_[x].g[static_cast<size_t>(src) * cin + ci] += acc;
        }
      }
    }
    if (bias >= 0 && nodes_[bias].needs_grad) {
      auto& gb = nodes_[bias].g;
      for (int t = 0; t < To; ++t) {
        const double* gt = o.g.data() + static_cast<size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) gb[co] += gt[co];
      }
    }
  };
  return out;
}

VarId Tape::conv_transpose1d(VarId x, VarId w, VarId bias, int kernel, int stride) {
  const Node& nx = nodes_[x];
  const Node& nw = nodes_[w];
  check(kernel >= stride && stride >= 1, "conv_transpose1d: need kernel >= stride");
  check(nw.rows % kernel == 0, "conv_transpose1d: weight rows must be kernel*Cin");
  int cin = nw.rows / kernel;
  check(cin == nx.cols, "conv_transpose1d: channel mismatch");
  int cout = nw.cols;
  int T = nx.rows;
  int To = T * stride;
  int trim = (kernel - stride) / 2;  // centered crop of the full output
  bool needs = nx.needs_grad || nw.needs_grad;
  if (bias >= 0) {
    check(nodes_[bias].rows == 1 && nodes_[bias].cols == cout, "conv_transpose1d: bias shape");
    needs = needs || nodes_[bias].needs_grad;
  }
  VarId out = alloc(To, cout, needs);
  Node& no = nodes_[out];
  if (bias >= 0) {
    const Node& nbv = nodes_[bias];
    for (int t = 0; t < To; ++t)
      std::memcpy(no.v.data() + static_cast<size_t>(t) * cout, nbv.v.data(),
                  static_cast<size_t>(cout) * sizeof(double));
  }
  for (int t = 0; t < T; ++t) {
    const double* xs = nx.v.data() + static_cast<size_t>(t) * cin;
    for (int k = 0; k < kernel; ++k) {
      int o = t * stride + k - trim;
      if (o < 0 || o >= To) continue;
      double* ot = no.v.data() + static_cast<size_t>(o) * cout;
      for (int ci = 0; ci < cin; ++ci) {
        double xv = xs[ci];
        if (xv == 0.0) continue;
        const double* wr = nw.v.data() + static_cast<size_t>(k * cin + ci) * cout;
        for (int co = 0; co < cout; ++co) ot[co] += xv * wr[co];
      }
    }
  }
  if (!needs) return out;
  back_[out] = [this, x, w, bias, out, kernel, stride, cin, cout, T, To, trim]() {
    const Node& o = nodes_[out];
    const Node& ix = nodes_[x];
    const Node& iw = nodes_[w];
    bool gx_on = ix.needs_grad;
    bool gw_on = iw.needs_grad;
    for (int t = 0; t < T; ++t) {
      const double* xs = ix.v.data() + static_cast<size_t>(t) * cin;
      for (int k = 0; k < kernel; ++k) {
        int op = t * stride + k - trim;
        if (op < 0 || op >= To) continue;
        const double* gt = o.g.data() + static_cast<size_t>(op) * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const double* wr = iw.v.data() + static_cast<size_t>(k * cin + ci) * cout;
          double acc = 0.0;
          if (gw_on) {
            double xv = xs[ci];
            double* gwr = nodes_[w].g.data() + static_cast<size_t>(k * cin + ci) * cout;
            for (int co = 0; co < cout; ++co) {
              acc += gt[co] * wr[co];
              gwr[co] += xv * gt[co];
            }
          } else {
            for (int co = 0; co < cout; ++co) acc += gt[co] * wr[co];
          }
          if (gx_on) nodes_[x].g[static_cast<size_t>(t) * cin + ci] += acc;
        }
      }
    }
    if (bias >= 0 && nodes_[bias].needs_grad) {
      auto& gb = nodes_[bias].g;
      for (int t = 0; t < To; ++t) {
        const double* gt = o.g.data() + static_cast<size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) gb[co] += gt[co];
      }
    }
  };
  return out;
}

VarId Tape::avg_pool_rows(VarId x, int factor) {
  const Node& nx = nodes_[x];
  check(factor >= 1 && nx.rows >= factor, "avg_pool_rows: bad factor");
  int To = nx.rows / factor;
  int C = nx.cols;
  VarId out = alloc(To, C, nx.needs_grad);
  Node& no = nodes_[out];
  double inv = 1.0 / factor;
  for (int t = 0; t < To; ++t) {
    double* ot = no.v.data() + static_cast<size_t>(t) * C;
    for (int i = 0; i < factor; ++i) {
      const double* xs = nx.v.data() + static_cast<size_t>(t * factor + i) * C;
      for (int j = 0; j < C; ++j) ot[j] += xs[j];
    }
    for (int j = 0; j < C; ++j) ot[j] *= inv;
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, x, out, factor, To, C, inv]() {
    const Node& o = nodes_[out];
    auto& gx = nodes_[x].g;
    for (int t = 0; t < To; ++t) {
      const double* gt = o.g.data() + static_cast<size_t>(t) * C;
      for (int i = 0; i < factor; ++i) {
        double* gs = gx.data() + static_cast<size_t>(t * factor + i) * C;
        for (int j = 0; j < C; ++j) gs[j] += gt[j] * inv;
      }
    }
  };
  return out;
}

VarId Tape::pitch_track(VarId x, const PitchParams& p, int sample_rate, int hop,
                         std::vector<std::uint8_t>* voiced_out) {
  const Node& nx = nodes_[x];
  check(nx.cols == 1, "pitch_track: input must be L x 1");
  check(nx.rows >= p.window, "pitch_track: input shorter than analysis window");
  int frames = 1 + (nx.rows - p.window) / hop;
  auto states = std::make_shared<std::vector<YinFrameState>>(frames);
  VarId out = alloc(frames, 1, nx.needs_grad);
  Node& no = nodes_[out];
  for (int t = 0; t < frames; ++t) {
    (*states)[t] = yin_frame(nx.v.data() + static_cast<size_t>(t) * hop, p, sample_rate);
    no.v[t] = (*states)[t].voiced ? (*states)[t].f0 : 0.0;
  }
  if (voiced_out) {
    voiced_out->resize(frames);
    for (int t = 0; t < frames; ++t) (*voiced_out)[t] = (*states)[t].voiced ? 1 : 0;
  }
  if (!no.needs_grad) return out;
  back_[out] = [this, x, out, p, sample_rate, hop, frames, states]() {
    const Node& o = nodes_[out];
    const Node& ix = nodes_[x];
    auto& gx = nodes_[x].g;
    for (int t = 0; t < frames; ++t) {
      if (o.g[t] == 0.0) continue;
      yin_frame_backward(ix.v.data() + static_cast<size_t>(t) * hop, p, sample_rate,
                         (*states)[t], o.g[t], gx.data() + static_cast<size_t>(t) * hop);
    }
  };
  return out;
}

VarId Tape::mse_vs_const(VarId a, const Mat& target) {
  const Node& na = nodes_[a];
  check(na.rows == target.rows && na.cols == target.cols, "mse_vs_const: shape mismatch");
  check(!na.v.empty(), "mse_vs_const: empty");
  VarId out = alloc(1, 1, na.needs_grad);
  double s = 0.0;
  for (size_t i = 0; i < na.v.size(); ++i) {
    double d = na.v[i] - target.v[i];
    s += d * d;
  }
  nodes_[out].v[0] = s / static_cast<double>(na.v.size());
  if (!nodes_[out].needs_grad) return out;
  auto tgt = std::make_shared<std::vector<double>>(target.v);
  back_[out] = [this, a, out, tgt]() {
    double g = nodes_[out].g[0];
    const auto& va = nodes_[a].v;
    auto& ga = nodes_[a].g;
    double c = 2.0 * g / static_cast<double>(va.size());
    for (size_t i = 0; i < va.size(); ++i) ga[i] += c * (va[i] - (*tgt)[i]);
  };
  return out;
}

VarId Tape::mse_vs_scalar(VarId a, double target) {
  const Node& na = nodes_[a];
  check(!na.v.empty(), "mse_vs_scalar: empty");
  VarId out = alloc(1, 1, na.needs_grad);
  double s = 0.0;
  for (double x : na.v) {
    double d = x - target;
    s += d * d;
  }
  nodes_[out].v[0] = s / static_cast<double>(na.v.size());
  if (!nodes_[out].needs_grad) return out;
  back_[out] = [this, a, out, target]() {
    double g = nodes_[out].g[0];
    const auto& va = nodes_[a].v;
    auto& ga = nodes_[a].g;
    double c = 2.0 * g / static_cast<double>(va.size());
    for (size_t i = 0; i < va.size(); ++i) ga[i] += c * (va[i] - target);
  };
  return out;
}

VarId Tape::l1_masked(VarId a, const Mat& target, const Mat& mask, double denom) {
  const Node& na = nodes_[a];
  check(na.rows == target.rows && na.cols == target.cols, "l1_masked: target shape");
  check(na.rows == mask.rows && na.cols == mask.cols, "l1_masked: mask shape");
  check(denom > 0.0, "l1_masked: denom must be positive");
  VarId out = alloc(1, 1, na.needs_grad);
  double s = 0.0;
  for (size_t i = 0; i < na.v.size(); ++i) {
    if (mask.v[i] != 0.0) note_kink(std::abs(na.v[i] - target.v[i]));
    s += std::abs(na.v[i] - target.v[i]) * mask.v[i];
  }
  nodes_[out].v[0] = s / denom;
  if (!nodes_[out].needs_grad) return out;
  auto tgt = std::make_shared<std::vector<double>>(target.v);
  auto msk = std::make_shared<std::vector<double>>(mask.v);
  back_[out] = [this, a, out, tgt, msk, denom]() {
    double g = nodes_[out].g[0] / denom;
    const auto& va = nodes_[a].v;
    auto& ga = nodes_[a].g;
    for (size_t i = 0; i < va.size(); ++i) {
      double d = va[i] - (*tgt)[i];
      if (d > 0.0)
        ga[i] += g * (*msk)[i];
      else if (d < 0.0)
        ga[i] -= g * (*msk)[i];
    }
  };
  return out;
}

double Tape::scalar(VarId id) const {
  check(nodes_[id].rows == 1 && nodes_[id].cols == 1, "scalar: node is not 1x1");
  return nodes_[id].v[0];
}

Mat Tape::value(VarId id) const {
  const Node& n = nodes_[id];
  Mat m(n.rows, n.cols);
  m.v = n.v;
  return m;
}

void Tape::backward(VarId loss) {
  check(nodes_[loss].rows == 1 && nodes_[loss].cols == 1, "backward: loss must be 1x1");
  check(nodes_[loss].needs_grad, "backward: loss does not depend on any parameter");
  nodes_[loss].g[0] = 1.0;
  for (VarId i = loss; i >= 0; --i)
    if (back_[i]) back_[i]();
  for (auto& [id, tensor] : leaves_) {
    const auto& g = nodes_[id].g;
    for (size_t i = 0; i < g.size(); ++i) tensor->grad[i] += g[i];
  }
}

double finite_difference_check(const std::function<VarId(Tape&)>& build,
                               const std::vector<ParamTensor*>& params, double eps,
                               double atol) {
  for (ParamTensor* p : params) p->zero_grad();
  {
    Tape t;
    VarId loss = build(t);
    t.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (ParamTensor* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor* p = params[pi];
    // Frozen tensors never receive analytic gradients (the optimizer skips
    // them), so probing them would compare 0 against a real sensitivity.
    if (!p->trainable) continue;
    for (size_t i = 0; i < p->value.size(); ++i) {
      double saved = p->value[i];
      p->value[i] = saved + eps;
      Tape tp;
      double lp = tp.scalar(build(tp));
      p->value[i] = saved - eps;
      Tape tm;
      double lm = tm.scalar(build(tm));
      p->value[i] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double ad = analytic[pi][i];
      double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), atol});
      worst = std::max(worst, rel);
    }
  }
  for (ParamTensor* p : params) p->zero_grad();
  return worst;
}

}  // namespace vconv::ad
