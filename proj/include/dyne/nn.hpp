#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyne/graph.hpp"
#include "dyne/rng.hpp"
#include "dyne/tensor.hpp"

namespace dyne::nn {

template <class T>
using ParamList = std::vector<Tensor<T>*>;
template <class T>
using ConstParamList = std::vector<const Tensor<T>*>;

enum class OutputOp { kNone, kTanhScale };

// Fully connected network, ReLU hidden activations. Weights use the
// U(+-1/sqrt(fan_in)) initialization; draws happen layer by layer, weights
// then bias, so a given rng state fully determines the parameters.
template <class T>
struct Mlp {
  std::vector<Tensor<T>> w;  // w[l]: [n_l x n_{l+1}] row-major
  std::vector<Tensor<T>> b;  // b[l]: [n_{l+1}]
  OutputOp out_op = OutputOp::kNone;
  T out_scale = T(1);

  static Mlp create(int in_dim, const std::vector<int>& hidden, int out_dim, Rng& rng,
                    OutputOp out_op = OutputOp::kNone, T out_scale = T(1)) {
    Mlp m;
    m.out_op = out_op;
    m.out_scale = out_scale;
    std::vector<int> dims;
    dims.push_back(in_dim);
    for (int h : hidden) dims.push_back(h);
    dims.push_back(out_dim);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      Tensor<T> wl = Tensor<T>::zeros({dims[l], dims[l + 1]});
      for (T& t : wl.v) t = static_cast<T>(rng.uniform(-bound, bound));
      Tensor<T> bl = Tensor<T>::zeros({dims[l + 1]});
      for (T& t : bl.v) t = static_cast<T>(rng.uniform(-bound, bound));
      m.w.push_back(std::move(wl));
      m.b.push_back(std::move(bl));
    }
    return m;
  }

  int in_dim() const { return w.front().rows(); }
  int out_dim() const { return w.back().cols(); }
  int n_layers() const { return static_cast<int>(w.size()); }

  // Record the forward pass on a tape. Parameter node ids are appended to
  // pids (if given) in params() order.
  int build(Tape<T>& tape, int x, std::vector<int>* pids = nullptr, bool trainable = true) const {
    int h = x;
    for (int l = 0; l < n_layers(); ++l) {
      int wid = trainable ? tape.param(&w[l]) : tape.frozen(&w[l]);
      int bid = trainable ? tape.param(&b[l]) : tape.frozen(&b[l]);
      if (pids) {
        pids->push_back(wid);
        pids->push_back(bid);
      }
      h = tape.linear(h, wid, bid);
      if (l + 1 < n_layers()) h = tape.relu(h);
    }
    if (out_op == OutputOp::kTanhScale) h = tape.scale(tape.tanh_(h), out_scale);
    return h;
  }

  // Inference path without a tape.
  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.cols() != in_dim()) throw std::invalid_argument("mlp: input width mismatch");
    Tensor<T> h = x;
    for (int l = 0; l < n_layers(); ++l) {
      Tensor<T> y = Tensor<T>::zeros({h.rows(), w[l].cols()});
      MatMap<T>(y.data(), y.rows(), y.cols()).noalias() =
          ConstMatMap<T>(h.data(), h.rows(), h.cols()) * ConstMatMap<T>(w[l].data(), w[l].rows(), w[l].cols());
      MatMap<T> ym(y.data(), y.rows(), y.cols());
      ym.rowwise() += Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(b[l].data(), b[l].numel());
      if (l + 1 < n_layers())
        for (T& t : y.v) t = t > T(0) ? t : T(0);
      h = std::move(y);
    }
    if (out_op == OutputOp::kTanhScale)
      for (T& t : h.v) t = out_scale * std::tanh(t);
    return h;
  }

  ParamList<T> params() {
    ParamList<T> ps;
    for (int l = 0; l < n_layers(); ++l) {
      ps.push_back(&w[l]);
      ps.push_back(&b[l]);
    }
    return ps;
  }
  ConstParamList<T> params() const {
    ConstParamList<T> ps;
    for (int l = 0; l < n_layers(); ++l) {
      ps.push_back(&w[l]);
      ps.push_back(&b[l]);
    }
    return ps;
  }
};

// Three stride-2 convolutions (channels 32/64/64, kernel 4, pad 1) over a
// 4x32x32 stack, then a linear head.
template <class T>
struct ConvEncoder {
  int in_ch = 4, img = 32, out_dim = 0;
  std::vector<Tensor<T>> cw, cb;  // per conv layer: [cout x cin*k*k], [cout]
  Tensor<T> hw, hb;               // head
  static constexpr int kKernel = 4, kStride = 2, kPad = 1;
  static constexpr int kChannels[3] = {32, 64, 64};

  static ConvEncoder create(int out_dim, Rng& rng, int in_ch = 4, int img = 32) {
    ConvEncoder e;
    e.in_ch = in_ch;
    e.img = img;
    e.out_dim = out_dim;
    int cin = in_ch;
    for (int l = 0; l < 3; ++l) {
      int cout = kChannels[l];
      int fan_in = cin * kKernel * kKernel;
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Tensor<T> w = Tensor<T>::zeros({cout, fan_in});
      for (T& t : w.v) t = static_cast<T>(rng.uniform(-bound, bound));
      Tensor<T> b = Tensor<T>::zeros({cout});
      for (T& t : b.v) t = static_cast<T>(rng.uniform(-bound, bound));
      e.cw.push_back(std::move(w));
      e.cb.push_back(std::move(b));
      cin = cout;
    }
    int flat = e.flat_dim();
    double bound = 1.0 / std::sqrt(static_cast<double>(flat));
    e.hw = Tensor<T>::zeros({flat, out_dim});
    for (T& t : e.hw.v) t = static_cast<T>(rng.uniform(-bound, bound));
    e.hb = Tensor<T>::zeros({out_dim});
    for (T& t : e.hb.v) t = static_cast<T>(rng.uniform(-bound, bound));
    return e;
  }

  int flat_dim() const {
    int s = img;
    for (int l = 0; l < 3; ++l) s = (s + 2 * kPad - kKernel) / kStride + 1;
    return kChannels[2] * s * s;
  }
  int input_dim() const { return in_ch * img * img; }

  int build(Tape<T>& tape, int x, std::vector<int>* pids = nullptr, bool trainable = true) const {
    if (tape.value(x).cols() != input_dim()) throw std::invalid_argument("conv_encode: input shape mismatch");
    int h = x;
    int cin = in_ch, side = img;
    for (int l = 0; l < 3; ++l) {
      int wid = trainable ? tape.param(&cw[l]) : tape.frozen(&cw[l]);
      int bid = trainable ? tape.param(&cb[l]) : tape.frozen(&cb[l]);
      if (pids) {
        pids->push_back(wid);
        pids->push_back(bid);
      }
      typename Tape<T>::ConvSpec spec;
      spec.cin = cin;
      spec.h = side;
      spec.w = side;
      spec.k = kKernel;
      spec.stride = kStride;
      spec.pad = kPad;
      spec.cout = kChannels[l];
      h = tape.conv2d(h, wid, bid, spec);
      h = tape.relu(h);
      cin = kChannels[l];
      side = (side + 2 * kPad - kKernel) / kStride + 1;
    }
    int wid = trainable ? tape.param(&hw) : tape.frozen(&hw);
    int bid = trainable ? tape.param(&hb) : tape.frozen(&hb);
    if (pids) {
      pids->push_back(wid);
      pids->push_back(bid);
    }
    return tape.linear(h, wid, bid);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tape<T> tape;
    int id = build(tape, tape.constant(x), nullptr, false);
    return tape.value(id);
  }

  ParamList<T> params() {
    ParamList<T> ps;
    for (int l = 0; l < 3; ++l) {
      ps.push_back(&cw[l]);
      ps.push_back(&cb[l]);
    }
    ps.push_back(&hw);
    ps.push_back(&hb);
    return ps;
  }
  ConstParamList<T> params() const {
    ConstParamList<T> ps;
    for (int l = 0; l < 3; ++l) {
      ps.push_back(&cw[l]);
      ps.push_back(&cb[l]);
    }
    ps.push_back(&hw);
    ps.push_back(&hb);
    return ps;
  }
};

template <class T>
struct Adam {
  T lr = T(1e-4);
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  long step_count = 0;
  std::vector<Tensor<T>> m, v;

  explicit Adam(T learning_rate = T(1e-4)) : lr(learning_rate) {}

  void init(const ParamList<T>& ps) {
    m.clear();
    v.clear();
    for (const Tensor<T>* p : ps) {
      m.push_back(Tensor<T>::zeros(p->shape));
      v.push_back(Tensor<T>::zeros(p->shape));
    }
  }

  void step(const ParamList<T>& ps, const ConstParamList<T>& grads) {
    if (ps.size() != grads.size() || ps.size() != m.size())
      throw std::invalid_argument("adam: parameter/gradient list mismatch");
    ++step_count;
    T c1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(step_count)));
    T c2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(step_count)));
    for (size_t i = 0; i < ps.size(); ++i) {
      Tensor<T>& p = *ps[i];
      const Tensor<T>& g = *grads[i];
      if (g.v.empty()) continue;  // parameter not touched by this loss
      if (g.shape != p.shape) throw std::invalid_argument("adam: gradient shape mismatch");
      for (long j = 0; j < p.numel(); ++j) {
        T gj = g.v[j];
        m[i].v[j] = beta1 * m[i].v[j] + (T(1) - beta1) * gj;
        v[i].v[j] = beta2 * v[i].v[j] + (T(1) - beta2) * gj * gj;
        T mh = m[i].v[j] / c1;
        T vh = v[i].v[j] / c2;
        p.v[j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

// target <- (1 - tau) * target + tau * online
template <class T>
inline void polyak_update(const ParamList<T>& target, const ConstParamList<T>& online, T tau) {
  if (tau <= T(0) || tau > T(1)) throw std::invalid_argument("polyak: tau out of (0, 1]");
  if (target.size() != online.size()) throw std::invalid_argument("polyak: list size mismatch");
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i]->shape != online[i]->shape) throw std::invalid_argument("polyak: shape mismatch");
    for (long j = 0; j < target[i]->numel(); ++j)
      target[i]->v[j] = (T(1) - tau) * target[i]->v[j] + tau * online[i]->v[j];
  }
}

constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

template <class T>
struct GaussianParams {
  Tensor<T> mean;
  Tensor<T> log_var;

  GaussianParams() = default;
  GaussianParams(Tensor<T> mu, Tensor<T> lv) : mean(std::move(mu)), log_var(std::move(lv)) {
    if (mean.shape != log_var.shape) throw std::invalid_argument("gaussian: mean/log_var shape mismatch");
  }
};

// KL(q || N(0, I)) = 0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)
template <class T>
inline T kl_to_std_normal(const GaussianParams<T>& q) {
  T acc = 0;
  for (long i = 0; i < q.mean.numel(); ++i) {
    T lv = q.log_var.v[i];
    T mu = q.mean.v[i];
    acc += std::exp(lv) + mu * mu - T(1) - lv;
  }
  return acc / T(2);
}

template <class T>
inline Tensor<T> reparam_sample(const GaussianParams<T>& q, const Tensor<T>& noise) {
  if (noise.numel() != q.mean.numel()) throw std::invalid_argument("reparam: noise length mismatch");
  Tensor<T> z = q.mean;
  for (long i = 0; i < z.numel(); ++i) z.v[i] += std::exp(q.log_var.v[i] / T(2)) * noise.v[i];
  return z;
}

// --- tape builders for Gaussian posteriors ---

struct GaussianNodes {
  int mean = -1;
  int log_var = -1;  // clamped
};

// Split an encoder head of width 2*d into mean and clamped log-variance.
template <class T>
inline GaussianNodes gaussian_split(Tape<T>& tape, int enc_out) {
  int d = tape.value(enc_out).cols() / 2;
  GaussianNodes g;
  g.mean = tape.slice_cols(enc_out, 0, d);
  g.log_var = tape.clamp(tape.slice_cols(enc_out, d, 2 * d), T(kLogVarMin), T(kLogVarMax));
  return g;
}

// Sum of per-row KL terms over the whole batch (caller divides by B).
template <class T>
inline int kl_sum_node(Tape<T>& tape, const GaussianNodes& g) {
  int var = tape.exp_(g.log_var);
  int mu2 = tape.square(g.mean);
  int inner = tape.add(var, mu2);                       // sigma^2 + mu^2
  int lv_m1 = tape.affine(g.log_var, T(-1), T(-1));     // -log sigma^2 - 1
  int term = tape.add(inner, lv_m1);
  return tape.scale(tape.sum_all(term), T(0.5));
}

// z = mu + exp(log_var / 2) * noise (noise recorded as a constant)
template <class T>
inline int reparam_node(Tape<T>& tape, const GaussianNodes& g, Tensor<T> noise) {
  int n = tape.constant(std::move(noise));
  int sigma = tape.exp_(tape.scale(g.log_var, T(0.5)));
  return tape.add(g.mean, tape.mul(sigma, n));
}

template <class T>
inline bool all_finite(const Tensor<T>& t) {
  for (T x : t.v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

}  // namespace dyne::nn
